//! Periodic sensor streams under a byte-rate cap.
//!
//! Each tick publishes, in order, whichever of joint state, camera image,
//! point cloud (plus cluster boxes) and marker pose are due. Every frame
//! passes a sliding-window limiter, so the published bytes inside any
//! window never exceed `cap * window`. Separately, the cloud point budget
//! halves whenever a cloud frame would use more than its per-tick share of
//! the cap (`cap / cloud_rate`), down to a floor, and doubles back while a
//! cloud of twice the size would still fit.

use std::collections::{BTreeMap, VecDeque};

use teleop_core::arm::JointState;
use teleop_core::frames::Pose;
use teleop_core::perception::PipelineOutput;
use teleop_core::protocol::{channels, encode_frame, FrameKind, Message, WireFrame};
use teleop_core::simworld::Image;

use crate::config::StreamConfig;

pub const NANOS: u64 = 1_000_000_000;

pub fn hz_to_period(hz: f64) -> u64 {
    ((NANOS as f64 / hz).round() as u64).max(1)
}

/// Fires at `0, period, 2 period, ...` on the clock it is polled with.
#[derive(Debug, Clone)]
pub struct Rate {
    period: u64,
    next_due: u64,
}

impl Rate {
    pub fn new(hz: f64) -> Self {
        Rate {
            period: hz_to_period(hz),
            next_due: 0,
        }
    }

    pub fn due(&mut self, now: u64) -> bool {
        if now < self.next_due {
            return false;
        }
        self.next_due += self.period;
        if self.next_due <= now {
            // Fell behind by more than a period; skip the missed ticks.
            self.next_due = now + self.period;
        }
        true
    }
}

/// Admits byte counts so that the total inside any half-open window
/// `(t - window, t]` stays within `limit`.
#[derive(Debug, Clone)]
pub struct SlidingWindow {
    window: u64,
    limit: u64,
    log: VecDeque<(u64, u64)>,
    total: u64,
}

impl SlidingWindow {
    pub fn new(window_nanos: u64, limit_bytes: u64) -> Self {
        SlidingWindow {
            window: window_nanos,
            limit: limit_bytes,
            log: VecDeque::new(),
            total: 0,
        }
    }

    fn expire(&mut self, now: u64) {
        while let Some(&(t, b)) = self.log.front() {
            if t + self.window > now {
                break;
            }
            self.total -= b;
            self.log.pop_front();
        }
    }

    pub fn headroom(&mut self, now: u64) -> u64 {
        self.expire(now);
        self.limit - self.total
    }

    pub fn try_admit(&mut self, now: u64, bytes: u64) -> bool {
        if bytes > self.headroom(now) {
            return false;
        }
        self.total += bytes;
        self.log.push_back((now, bytes));
        true
    }
}

#[derive(Debug, Clone)]
pub struct BudgetController {
    configured: usize,
    floor: usize,
    current: usize,
    /// Bytes one cloud frame may use.
    allowance: f64,
}

impl BudgetController {
    pub fn new(cfg: &StreamConfig) -> Self {
        BudgetController {
            configured: cfg.point_budget,
            floor: cfg.min_point_budget,
            current: cfg.point_budget,
            allowance: cfg.bytes_per_second_cap as f64 / cfg.cloud_rate,
        }
    }

    pub fn current(&self) -> usize {
        self.current
    }

    /// Adjusts the budget for the next cloud given this cloud's frame size.
    pub fn observe(&mut self, frame_bytes: usize) {
        let bytes = frame_bytes as f64;
        if bytes > self.allowance {
            self.current = (self.current / 2).max(self.floor);
        } else if self.current < self.configured && 2.0 * bytes <= self.allowance {
            self.current = (self.current * 2).min(self.configured);
        }
    }
}

/// What the streams sample from.
pub trait StreamSource {
    fn joint_state(&mut self) -> JointState;
    fn image(&mut self) -> Image;
    fn cloud(&mut self, budget: usize, seed: u64) -> PipelineOutput;
    fn marker(&mut self) -> Option<Pose>;
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChannelStats {
    pub published: u64,
    pub dropped: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone)]
pub struct StreamScheduler {
    joint: Rate,
    image: Rate,
    cloud: Rate,
    marker: Rate,
    limiter: SlidingWindow,
    budget: BudgetController,
    boxes: bool,
    seed: u64,
    clouds: u64,
    stats: BTreeMap<&'static str, ChannelStats>,
}

fn frame(channel: &str, payload: Vec<u8>) -> WireFrame {
    WireFrame::new(FrameKind::Publish, channel, payload)
}

impl StreamScheduler {
    pub fn new(cfg: &StreamConfig, publish_boxes: bool, seed: u64) -> Self {
        let window = (cfg.window * NANOS as f64).round() as u64;
        let limit = (cfg.bytes_per_second_cap as f64 * cfg.window).floor() as u64;
        StreamScheduler {
            joint: Rate::new(cfg.joint_rate),
            image: Rate::new(cfg.image_rate),
            cloud: Rate::new(cfg.cloud_rate),
            marker: Rate::new(cfg.marker_rate),
            limiter: SlidingWindow::new(window, limit),
            budget: BudgetController::new(cfg),
            boxes: publish_boxes,
            seed,
            clouds: 0,
            stats: BTreeMap::new(),
        }
    }

    pub fn point_budget(&self) -> usize {
        self.budget.current()
    }

    pub fn stats(&self) -> &BTreeMap<&'static str, ChannelStats> {
        &self.stats
    }

    fn offer(&mut self, now: u64, channel: &'static str, f: WireFrame, out: &mut Vec<WireFrame>) {
        let n = f.encoded_len() as u64;
        let st = self.stats.entry(channel).or_default();
        if self.limiter.try_admit(now, n) {
            st.published += 1;
            st.bytes += n;
            out.push(f);
        } else {
            st.dropped += 1;
        }
    }

    fn drop_unsent(&mut self, channel: &'static str) {
        self.stats.entry(channel).or_default().dropped += 1;
    }

    /// Frames due at `now` (nanoseconds), already admitted by the limiter.
    pub fn tick(&mut self, now: u64, src: &mut dyn StreamSource) -> Vec<WireFrame> {
        let mut out = Vec::new();
        if self.joint.due(now) {
            let p = src.joint_state().to_bytes().expect("joint state fits");
            self.offer(now, channels::JOINT_STATES, frame(channels::JOINT_STATES, p), &mut out);
        }
        if self.image.due(now) {
            let p = src.image().to_bytes().expect("image dimensions fit u16");
            self.offer(now, channels::CAMERA_IMAGE, frame(channels::CAMERA_IMAGE, p), &mut out);
        }
        if self.cloud.due(now) {
            let min_frame = 4 + 1 + 2 + channels::POINT_CLOUD.len() as u64 + 4;
            if self.limiter.headroom(now) < min_frame {
                // Not even an empty cloud would pass; skip the render.
                self.drop_unsent(channels::POINT_CLOUD);
            } else {
                let seed = self.seed.wrapping_add(self.clouds << 8);
                self.clouds += 1;
                let o = src.cloud(self.budget.current(), seed);
                let p = o.cloud.to_bytes().expect("cloud count fits u32");
                let f = frame(channels::POINT_CLOUD, p);
                self.budget.observe(f.encoded_len());
                self.offer(now, channels::POINT_CLOUD, f, &mut out);
                if self.boxes {
                    let p = o.boxes.to_bytes().expect("box count fits u32");
                    self.offer(now, channels::CLOUD_BOXES, frame(channels::CLOUD_BOXES, p), &mut out);
                }
            }
        }
        if self.marker.due(now) {
            if let Some(pose) = src.marker() {
                let p = pose.to_bytes().expect("pose fits");
                self.offer(now, channels::MARKER_POSE, frame(channels::MARKER_POSE, p), &mut out);
            }
        }
        out
    }
}

/// Encodes a frame for the wire; stream frames are always within limits.
pub fn frame_bytes(f: &WireFrame) -> Vec<u8> {
    encode_frame(f.kind, &f.channel, &f.payload).expect("frames built here respect the size limits")
}
