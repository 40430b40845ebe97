//! Binary bridge: length-prefixed frames carrying pub/sub messages and a
//! minimal goal/feedback/result action protocol. Everything little-endian,
//! no padding.

use thiserror::Error;

use crate::arm::{JointState, JointVector, DOF};
use crate::frames::{FrameId, Pose, UnitQuat, Vec3};
use crate::perception::{Aabb, PointCloud};
use crate::planner::{JointTrajectory, PlanFailure, PlanOutcome, TrajectoryPoint};
use crate::simworld::{GripperAction, Image};

pub const MAX_PAYLOAD: usize = 64 << 20;
pub const MAX_CHANNEL: usize = u16::MAX as usize;
/// Largest legal value of the length field.
pub const MAX_FRAME_LENGTH: usize = 1 + 2 + MAX_CHANNEL + MAX_PAYLOAD;

pub mod channels {
    pub const JOINT_STATES: &str = "joint_states";
    pub const POINT_CLOUD: &str = "point_cloud";
    pub const CAMERA_IMAGE: &str = "camera_image";
    pub const PLAN_STATUS_TEXT: &str = "plan_status_text";
    pub const MARKER_POSE: &str = "marker_pose";
    pub const CLOUD_BOXES: &str = "cloud_boxes";
    pub const PLAN_MOTION: &str = "plan_motion";
    pub const EXECUTE_TRAJECTORY: &str = "execute_trajectory";
    pub const GRIPPER: &str = "gripper";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameKind {
    Publish = 1,
    Subscribe = 2,
    ActionGoal = 3,
    ActionFeedback = 4,
    ActionResult = 5,
    ActionCancel = 6,
}

impl FrameKind {
    pub fn from_u8(v: u8) -> Option<FrameKind> {
        Some(match v {
            1 => FrameKind::Publish,
            2 => FrameKind::Subscribe,
            3 => FrameKind::ActionGoal,
            4 => FrameKind::ActionFeedback,
            5 => FrameKind::ActionResult,
            6 => FrameKind::ActionCancel,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireFrame {
    pub kind: FrameKind,
    pub channel: String,
    pub payload: Vec<u8>,
}

impl WireFrame {
    pub fn new(kind: FrameKind, channel: impl Into<String>, payload: Vec<u8>) -> Self {
        WireFrame {
            kind,
            channel: channel.into(),
            payload,
        }
    }

    pub fn encoded_len(&self) -> usize {
        4 + 1 + 2 + self.channel.len() + self.payload.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FramingError {
    #[error("unknown frame kind {0}")]
    BadKind(u8),
    #[error("length field {0} is shorter than the frame header")]
    TooShort(u32),
    #[error("channel name runs past the end of the frame")]
    ChannelOverrun,
    #[error("channel name is not UTF-8")]
    BadChannel,
    #[error("frame length {0} exceeds the limit")]
    Oversize(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("need {0} more bytes")]
    NeedMoreBytes(usize),
    #[error(transparent)]
    Framing(#[from] FramingError),
}

pub fn encode_frame(kind: FrameKind, channel: &str, payload: &[u8]) -> Result<Vec<u8>, FramingError> {
    if channel.len() > MAX_CHANNEL {
        return Err(FramingError::Oversize(channel.len()));
    }
    if payload.len() > MAX_PAYLOAD {
        return Err(FramingError::Oversize(payload.len()));
    }
    let length = 1 + 2 + channel.len() + payload.len();
    let mut out = Vec::with_capacity(4 + length);
    out.extend_from_slice(&(length as u32).to_le_bytes());
    out.push(kind as u8);
    out.extend_from_slice(&(channel.len() as u16).to_le_bytes());
    out.extend_from_slice(channel.as_bytes());
    out.extend_from_slice(payload);
    Ok(out)
}

impl WireFrame {
    pub fn encode(&self) -> Result<Vec<u8>, FramingError> {
        encode_frame(self.kind, &self.channel, &self.payload)
    }
}

/// Decodes one frame from the front of `bytes`, returning it with the
/// number of bytes consumed. Header fields are validated as soon as they
/// are available so a bad stream fails before its body arrives.
pub fn decode_frame(bytes: &[u8]) -> Result<(WireFrame, usize), DecodeError> {
    if bytes.len() < 4 {
        return Err(DecodeError::NeedMoreBytes(4 - bytes.len()));
    }
    let length = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let len = length as usize;
    if len < 3 {
        return Err(FramingError::TooShort(length).into());
    }
    if len > MAX_FRAME_LENGTH {
        return Err(FramingError::Oversize(len).into());
    }
    if bytes.len() >= 5 && FrameKind::from_u8(bytes[4]).is_none() {
        return Err(FramingError::BadKind(bytes[4]).into());
    }
    if bytes.len() >= 7 {
        let ch = u16::from_le_bytes([bytes[5], bytes[6]]) as usize;
        if 3 + ch > len {
            return Err(FramingError::ChannelOverrun.into());
        }
    }
    let total = 4 + len;
    if bytes.len() < total {
        return Err(DecodeError::NeedMoreBytes(total - bytes.len()));
    }
    let kind = FrameKind::from_u8(bytes[4]).expect("checked above");
    let ch = u16::from_le_bytes([bytes[5], bytes[6]]) as usize;
    let channel = std::str::from_utf8(&bytes[7..7 + ch]).map_err(|_| FramingError::BadChannel)?;
    let payload = bytes[7 + ch..total].to_vec();
    if payload.len() > MAX_PAYLOAD {
        return Err(FramingError::Oversize(payload.len()).into());
    }
    Ok((
        WireFrame {
            kind,
            channel: channel.to_string(),
            payload,
        },
        total,
    ))
}

/// Reassembles frames from arbitrarily chunked input. After a framing
/// error the stream is unusable and every later call repeats the error.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    failed: Option<FramingError>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, chunk: &[u8]) -> Result<Vec<WireFrame>, FramingError> {
        if let Some(e) = &self.failed {
            return Err(e.clone());
        }
        self.buf.extend_from_slice(chunk);
        let mut frames = Vec::new();
        let mut start = 0;
        loop {
            match decode_frame(&self.buf[start..]) {
                Ok((f, n)) => {
                    frames.push(f);
                    start += n;
                }
                Err(DecodeError::NeedMoreBytes(_)) => break,
                Err(DecodeError::Framing(e)) => {
                    self.failed = Some(e.clone());
                    self.buf.clear();
                    return Err(e);
                }
            }
        }
        self.buf.drain(..start);
        Ok(frames)
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}

// Message schemas.

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MessageError {
    #[error("payload has the wrong length")]
    WrongLength,
    #[error("{trailing} unexpected trailing bytes")]
    TrailingBytes { trailing: usize },
    #[error("bad {field} tag {tag}")]
    BadTag { field: &'static str, tag: u8 },
    #[error("quaternion is not unit length")]
    NonUnitQuaternion,
    #[error("text is not UTF-8")]
    BadUtf8,
    #[error("value too large for its length field")]
    TooLarge,
}

/// Cursor over a payload used by [`Message::read`].
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MessageError> {
        if self.remaining() < n {
            return Err(MessageError::WrongLength);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], MessageError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, MessageError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, MessageError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, MessageError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, MessageError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32, MessageError> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64, MessageError> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    /// Ensures `count` records of `size` bytes fit in what is left, so
    /// hostile counts never drive allocation.
    fn expect_records(&self, count: usize, size: usize) -> Result<(), MessageError> {
        match count.checked_mul(size) {
            Some(n) if n <= self.remaining() => Ok(()),
            _ => Err(MessageError::WrongLength),
        }
    }

    fn finish(self) -> Result<(), MessageError> {
        match self.remaining() {
            0 => Ok(()),
            trailing => Err(MessageError::TrailingBytes { trailing }),
        }
    }
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// A value with a fixed byte layout.
pub trait Message: Sized {
    fn write(&self, out: &mut Vec<u8>) -> Result<(), MessageError>;
    fn read(r: &mut Reader<'_>) -> Result<Self, MessageError>;

    fn to_bytes(&self) -> Result<Vec<u8>, MessageError> {
        let mut out = Vec::new();
        self.write(&mut out)?;
        Ok(out)
    }

    /// Whole-payload decode; trailing bytes are an error.
    fn from_bytes(bytes: &[u8]) -> Result<Self, MessageError> {
        let mut r = Reader::new(bytes);
        let v = Self::read(&mut r)?;
        r.finish()?;
        Ok(v)
    }
}


impl Message for JointState {
    fn write(&self, out: &mut Vec<u8>) -> Result<(), MessageError> {
        for v in self.q.iter() {
            put_f64(out, *v);
        }
        put_f64(out, self.gripper_aperture);
        Ok(())
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, MessageError> {
        let mut q = JointVector::zeros();
        for i in 0..DOF {
            q[i] = r.f64()?;
        }
        Ok(JointState::new(q, r.f64()?))
    }
}

pub const QUAT_TOLERANCE: f64 = 1e-6;

/// FLU pose in the base frame: xyz then quaternion x, y, z, w.
impl Message for Pose {
    fn write(&self, out: &mut Vec<u8>) -> Result<(), MessageError> {
        for v in self.position.iter() {
            put_f64(out, *v);
        }
        let q = self.orientation.quaternion();
        for v in [q.i, q.j, q.k, q.w] {
            put_f64(out, v);
        }
        Ok(())
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, MessageError> {
        let p = Vec3::new(r.f64()?, r.f64()?, r.f64()?);
        let (x, y, z, w) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        let q = nalgebra::Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if !((norm - 1.0).abs() <= QUAT_TOLERANCE) || !p.iter().all(|v| v.is_finite()) {
            return Err(MessageError::NonUnitQuaternion);
        }
        Ok(Pose::new(p, UnitQuat::new_unchecked(q), FrameId::Base))
    }
}

/// u32 count then per point xyz as f32 and rgb.
impl Message for PointCloud {
    fn write(&self, out: &mut Vec<u8>) -> Result<(), MessageError> {
        let n = u32::try_from(self.len()).map_err(|_| MessageError::TooLarge)?;
        out.reserve(4 + 15 * self.len());
        out.extend_from_slice(&n.to_le_bytes());
        for (p, c) in self.points.iter().zip(&self.colors) {
            for v in p.iter() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            out.extend_from_slice(c);
        }
        Ok(())
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, MessageError> {
        let n = r.u32()? as usize;
        r.expect_records(n, 15)?;
        let mut c = PointCloud::new(FrameId::Base);
        c.points.reserve(n);
        c.colors.reserve(n);
        for _ in 0..n {
            let p = Vec3::new(r.f32()? as f64, r.f32()? as f64, r.f32()? as f64);
            c.push(p, r.array()?);
        }
        Ok(c)
    }
}

pub fn point_cloud_payload_len(count: usize) -> usize {
    4 + 15 * count
}

impl Message for Image {
    fn write(&self, out: &mut Vec<u8>) -> Result<(), MessageError> {
        let w = u16::try_from(self.width).map_err(|_| MessageError::TooLarge)?;
        let h = u16::try_from(self.height).map_err(|_| MessageError::TooLarge)?;
        if self.pixels.len() != 3 * self.width as usize * self.height as usize {
            return Err(MessageError::WrongLength);
        }
        out.extend_from_slice(&w.to_le_bytes());
        out.extend_from_slice(&h.to_le_bytes());
        out.extend_from_slice(&self.pixels);
        Ok(())
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, MessageError> {
        let (w, h) = (r.u16()? as u32, r.u16()? as u32);
        let n = 3 * w as usize * h as usize;
        Ok(Image {
            width: w,
            height: h,
            pixels: r.take(n)?.to_vec(),
        })
    }
}

/// u32 count then per point 7 joint angles and the time from start.
impl Message for JointTrajectory {
    fn write(&self, out: &mut Vec<u8>) -> Result<(), MessageError> {
        let n = u32::try_from(self.points.len()).map_err(|_| MessageError::TooLarge)?;
        out.extend_from_slice(&n.to_le_bytes());
        for p in &self.points {
            for v in p.q.iter() {
                put_f64(out, *v);
            }
            put_f64(out, p.time_from_start);
        }
        Ok(())
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, MessageError> {
        let n = r.u32()? as usize;
        r.expect_records(n, 8 * (DOF + 1))?;
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            let mut q = JointVector::zeros();
            for i in 0..DOF {
                q[i] = r.f64()?;
            }
            points.push(TrajectoryPoint {
                q,
                time_from_start: r.f64()?,
            });
        }
        Ok(JointTrajectory { points })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanGoal {
    pub pose: Pose,
    pub seed: u64,
}

impl Message for PlanGoal {
    fn write(&self, out: &mut Vec<u8>) -> Result<(), MessageError> {
        self.pose.write(out)?;
        out.extend_from_slice(&self.seed.to_le_bytes());
        Ok(())
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, MessageError> {
        Ok(PlanGoal {
            pose: Pose::read(r)?,
            seed: r.u64()?,
        })
    }
}

pub fn failure_code(f: PlanFailure) -> u8 {
    match f {
        PlanFailure::StartInCollision => 1,
        PlanFailure::NoIkSolution => 2,
        PlanFailure::GoalInCollision => 3,
        PlanFailure::NoPath => 4,
        PlanFailure::Timeout => 5,
    }
}

pub fn failure_from_code(c: u8) -> Option<PlanFailure> {
    Some(match c {
        1 => PlanFailure::StartInCollision,
        2 => PlanFailure::NoIkSolution,
        3 => PlanFailure::GoalInCollision,
        4 => PlanFailure::NoPath,
        5 => PlanFailure::Timeout,
        _ => return None,
    })
}

/// Plan feedback: state {0 Pending, 1 Success, 2 Failure}, reason (0 unless
/// Failure), then the trajectory on Success only.
impl Message for PlanOutcome {
    fn write(&self, out: &mut Vec<u8>) -> Result<(), MessageError> {
        match self {
            PlanOutcome::Pending => out.extend_from_slice(&[0, 0]),
            PlanOutcome::Success(t) => {
                out.extend_from_slice(&[1, 0]);
                t.write(out)?;
            }
            PlanOutcome::Failure(f) => out.extend_from_slice(&[2, failure_code(*f)]),
        }
        Ok(())
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, MessageError> {
        let (state, reason) = (r.u8()?, r.u8()?);
        match (state, reason) {
            (0, 0) => Ok(PlanOutcome::Pending),
            (1, 0) => Ok(PlanOutcome::Success(JointTrajectory::read(r)?)),
            (2, c) => failure_from_code(c)
                .map(PlanOutcome::Failure)
                .ok_or(MessageError::BadTag { field: "reason", tag: c }),
            (0 | 1, c) => Err(MessageError::BadTag { field: "reason", tag: c }),
            (s, _) => Err(MessageError::BadTag { field: "state", tag: s }),
        }
    }
}

impl Message for GripperAction {
    fn write(&self, out: &mut Vec<u8>) -> Result<(), MessageError> {
        out.push(match self {
            GripperAction::Open => 0,
            GripperAction::Close => 1,
        });
        Ok(())
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, MessageError> {
        match r.u8()? {
            0 => Ok(GripperAction::Open),
            1 => Ok(GripperAction::Close),
            t => Err(MessageError::BadTag { field: "gripper", tag: t }),
        }
    }
}

/// u16 byte length then UTF-8.
impl Message for String {
    fn write(&self, out: &mut Vec<u8>) -> Result<(), MessageError> {
        let n = u16::try_from(self.len()).map_err(|_| MessageError::TooLarge)?;
        out.extend_from_slice(&n.to_le_bytes());
        out.extend_from_slice(self.as_bytes());
        Ok(())
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, MessageError> {
        let n = r.u16()? as usize;
        let s = std::str::from_utf8(r.take(n)?).map_err(|_| MessageError::BadUtf8)?;
        Ok(s.to_string())
    }
}

/// Cluster bounding boxes: u32 count then min xyz, max xyz as f64.
impl Message for Vec<Aabb> {
    fn write(&self, out: &mut Vec<u8>) -> Result<(), MessageError> {
        let n = u32::try_from(self.len()).map_err(|_| MessageError::TooLarge)?;
        out.extend_from_slice(&n.to_le_bytes());
        for b in self {
            for v in b.min.iter().chain(b.max.iter()) {
                put_f64(out, *v);
            }
        }
        Ok(())
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, MessageError> {
        let n = r.u32()? as usize;
        r.expect_records(n, 48)?;
        (0..n)
            .map(|_| {
                let min = Vec3::new(r.f64()?, r.f64()?, r.f64()?);
                let max = Vec3::new(r.f64()?, r.f64()?, r.f64()?);
                Ok(Aabb::new(min, max))
            })
            .collect()
    }
}

/// Elapsed and total seconds of an executing trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecuteProgress {
    pub elapsed: f64,
    pub duration: f64,
}

impl Message for ExecuteProgress {
    fn write(&self, out: &mut Vec<u8>) -> Result<(), MessageError> {
        put_f64(out, self.elapsed);
        put_f64(out, self.duration);
        Ok(())
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, MessageError> {
        Ok(ExecuteProgress {
            elapsed: r.f64()?,
            duration: r.f64()?,
        })
    }
}

/// Empty body (execute goals, gripper results).
impl Message for () {
    fn write(&self, _: &mut Vec<u8>) -> Result<(), MessageError> {
        Ok(())
    }

    fn read(_: &mut Reader<'_>) -> Result<Self, MessageError> {
        Ok(())
    }
}

// Actions.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ActionStatus {
    Pending = 0,
    Active = 1,
    Succeeded = 2,
    Aborted = 3,
    Canceled = 4,
}

impl ActionStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, ActionStatus::Succeeded | ActionStatus::Aborted | ActionStatus::Canceled)
    }

    pub fn from_u8(v: u8) -> Option<ActionStatus> {
        Some(match v {
            0 => ActionStatus::Pending,
            1 => ActionStatus::Active,
            2 => ActionStatus::Succeeded,
            3 => ActionStatus::Aborted,
            4 => ActionStatus::Canceled,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Succeeded,
    Aborted,
    Canceled,
}

impl Outcome {
    pub fn status(self) -> ActionStatus {
        match self {
            Outcome::Succeeded => ActionStatus::Succeeded,
            Outcome::Aborted => ActionStatus::Aborted,
            Outcome::Canceled => ActionStatus::Canceled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActionEvent {
    SendGoal,
    Accept,
    Cancel,
    Finish(Outcome),
}

impl ActionEvent {
    pub const ALL: [ActionEvent; 6] = [
        ActionEvent::SendGoal,
        ActionEvent::Accept,
        ActionEvent::Cancel,
        ActionEvent::Finish(Outcome::Succeeded),
        ActionEvent::Finish(Outcome::Aborted),
        ActionEvent::Finish(Outcome::Canceled),
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("protocol violation: {event:?} in state {state:?}")]
pub struct ProtocolViolation {
    pub state: Option<ActionStatus>,
    pub event: ActionEvent,
}

/// Legal moves: (no goal) -SendGoal-> Pending -Accept-> Active, Pending
/// -Cancel-> Canceled, Active -Cancel-> Canceled, Active -Finish(o)-> o.
/// A terminal state only accepts a repeat of the Finish that produced it.
pub fn action_transition(current: Option<ActionStatus>, event: ActionEvent) -> Result<ActionStatus, ProtocolViolation> {
    use ActionStatus::*;
    let next = match (current, event) {
        (None, ActionEvent::SendGoal) => Some(Pending),
        (Some(Pending), ActionEvent::Accept) => Some(Active),
        (Some(Pending), ActionEvent::Cancel) => Some(Canceled),
        (Some(Active), ActionEvent::Cancel) => Some(Canceled),
        (Some(Active), ActionEvent::Finish(o)) => Some(o.status()),
        (Some(s), ActionEvent::Finish(o)) if s.is_terminal() && s == o.status() => Some(s),
        _ => None,
    };
    next.ok_or(ProtocolViolation { state: current, event })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionState {
    pub goal_id: u64,
    pub status: ActionStatus,
}

impl ActionState {
    pub fn new(goal_id: u64) -> Self {
        ActionState {
            goal_id,
            status: ActionStatus::Pending,
        }
    }

    pub fn apply(&mut self, event: ActionEvent) -> Result<ActionStatus, ProtocolViolation> {
        self.status = action_transition(Some(self.status), event)?;
        Ok(self.status)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("goal id {got} is not greater than the previous id {last}")]
pub struct GoalIdViolation {
    pub last: u64,
    pub got: u64,
}

/// Goal ids must strictly increase on a connection.
#[derive(Debug, Clone, Default)]
pub struct GoalIds {
    last: Option<u64>,
}

impl GoalIds {
    pub fn admit(&mut self, id: u64) -> Result<(), GoalIdViolation> {
        if let Some(last) = self.last {
            if id <= last {
                return Err(GoalIdViolation { last, got: id });
            }
        }
        self.last = Some(id);
        Ok(())
    }
}

/// Why an action ended without success.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ResultCode {
    Ok = 0,
    Busy = 1,
    NoPlan = 2,
    SchemaError = 3,
    PlanFailed = 4,
    ProtocolViolation = 5,
    Canceled = 6,
}

impl ResultCode {
    pub fn from_u8(v: u8) -> Option<ResultCode> {
        Some(match v {
            0 => ResultCode::Ok,
            1 => ResultCode::Busy,
            2 => ResultCode::NoPlan,
            3 => ResultCode::SchemaError,
            4 => ResultCode::PlanFailed,
            5 => ResultCode::ProtocolViolation,
            6 => ResultCode::Canceled,
            _ => return None,
        })
    }
}

/// Goal, feedback and cancel payloads: u64 goal id then the body.
pub fn action_payload(goal_id: u64, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + body.len());
    out.extend_from_slice(&goal_id.to_le_bytes());
    out.extend_from_slice(body);
    out
}

pub fn split_action(payload: &[u8]) -> Result<(u64, &[u8]), MessageError> {
    if payload.len() < 8 {
        return Err(MessageError::WrongLength);
    }
    let id = u64::from_le_bytes(payload[..8].try_into().expect("length checked"));
    Ok((id, &payload[8..]))
}

/// Result payload: u64 goal id, u8 terminal status, u8 code, then the body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionResult {
    pub goal_id: u64,
    pub status: ActionStatus,
    pub code: ResultCode,
    pub body: Vec<u8>,
}

impl ActionResult {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = action_payload(self.goal_id, &[self.status as u8, self.code as u8]);
        out.extend_from_slice(&self.body);
        out
    }

    pub fn from_bytes(payload: &[u8]) -> Result<Self, MessageError> {
        let (goal_id, rest) = split_action(payload)?;
        if rest.len() < 2 {
            return Err(MessageError::WrongLength);
        }
        let status = ActionStatus::from_u8(rest[0])
            .filter(|s| s.is_terminal())
            .ok_or(MessageError::BadTag { field: "status", tag: rest[0] })?;
        let code = ResultCode::from_u8(rest[1]).ok_or(MessageError::BadTag { field: "code", tag: rest[1] })?;
        Ok(ActionResult {
            goal_id,
            status,
            code,
            body: rest[2..].to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joint_states_golden() {
        let bytes = encode_frame(FrameKind::Publish, "joint_states", &[0; 64]).unwrap();
        let mut want = vec![0x4F, 0, 0, 0, 0x01, 0x0C, 0x00];
        want.extend_from_slice(b"joint_states");
        want.extend_from_slice(&[0; 64]);
        assert_eq!(bytes, want);
        assert_eq!(decode_frame(&bytes[..bytes.len() - 1]), Err(DecodeError::NeedMoreBytes(1)));
        let (f, n) = decode_frame(&bytes).unwrap();
        assert_eq!(n, bytes.len());
        assert_eq!(f.payload, vec![0; 64]);
    }

    #[test]
    fn zero_joint_state_is_64_zero_bytes() {
        let js = JointState::new(JointVector::zeros(), 0.0);
        assert_eq!(js.to_bytes().unwrap(), vec![0; 64]);
    }

    #[test]
    fn header_errors_surface_early() {
        assert_eq!(decode_frame(&[2, 0, 0, 0]), Err(FramingError::TooShort(2).into()));
        assert_eq!(decode_frame(&[3, 0, 0, 0, 9]), Err(FramingError::BadKind(9).into()));
        assert_eq!(decode_frame(&[3, 0, 0, 0, 1, 1, 0]), Err(FramingError::ChannelOverrun.into()));
        assert_eq!(decode_frame(&[0xFF, 0xFF, 0xFF, 0xFF]), Err(FramingError::Oversize(u32::MAX as usize).into()));
        assert_eq!(decode_frame(&[5, 0, 0, 0, 1, 2, 0, 0xC3, 0x28]), Err(FramingError::BadChannel.into()));
    }

    #[test]
    fn transition_table_examples() {
        use ActionStatus::*;
        assert_eq!(action_transition(Some(Pending), ActionEvent::Accept), Ok(Active));
        assert_eq!(action_transition(Some(Active), ActionEvent::Finish(Outcome::Succeeded)), Ok(Succeeded));
        assert!(action_transition(Some(Succeeded), ActionEvent::Cancel).is_err());
        assert_eq!(action_transition(Some(Succeeded), ActionEvent::Finish(Outcome::Succeeded)), Ok(Succeeded));
        assert!(action_transition(Some(Succeeded), ActionEvent::Finish(Outcome::Aborted)).is_err());
        assert!(action_transition(Some(Pending), ActionEvent::Finish(Outcome::Succeeded)).is_err());
    }

    #[test]
    fn goal_ids_strictly_increase() {
        let mut ids = GoalIds::default();
        assert!(ids.admit(3).is_ok());
        assert!(ids.admit(3).is_err());
        assert!(ids.admit(2).is_err());
        assert!(ids.admit(10).is_ok());
    }

    #[test]
    fn plan_outcome_tags_are_checked() {
        assert_eq!(PlanOutcome::from_bytes(&[0, 0]), Ok(PlanOutcome::Pending));
        assert!(PlanOutcome::from_bytes(&[0, 1]).is_err());
        assert!(PlanOutcome::from_bytes(&[2, 0]).is_err());
        assert!(PlanOutcome::from_bytes(&[3, 0]).is_err());
        assert_eq!(PlanOutcome::from_bytes(&[2, 3]), Ok(PlanOutcome::Failure(PlanFailure::GoalInCollision)));
        assert_eq!(PlanOutcome::from_bytes(&[2, 3, 0]), Err(MessageError::TrailingBytes { trailing: 1 }));
    }

    #[test]
    fn hostile_counts_do_not_allocate() {
        assert_eq!(PointCloud::from_bytes(&[0xFF, 0xFF, 0xFF, 0xFF]), Err(MessageError::WrongLength));
        assert_eq!(JointTrajectory::from_bytes(&[0xFF, 0xFF, 0xFF, 0x7F, 0]), Err(MessageError::WrongLength));
    }
}
