//! The authoritative simulation loop: owns the world and the session,
//! turns client frames into session commands, runs plans on a worker
//! thread and publishes streams. One `tick` advances simulated time by one
//! fixed step.

use std::collections::{BTreeMap, BTreeSet};

use crossbeam_channel::{bounded, Receiver, TryRecvError};
use log::{info, warn};

use teleop_core::arm::JointState;
use teleop_core::frames::{compose, desk_pose_from_marker, Pose};
use teleop_core::perception::{Pipeline, PipelineOutput};
use teleop_core::planner::{plan_motion, PlanOutcome};
use teleop_core::protocol::{
    action_payload, channels, split_action, ActionEvent, ActionResult, ActionState, ActionStatus, ExecuteProgress,
    FrameKind, GoalIds, Message, Outcome, PlanGoal, ResultCode, WireFrame,
};
use teleop_core::simworld::{GripperAction, Image, World};

use crate::config::{plan_options, ServerConfig};
use crate::session::{Indicator, Session, SessionState};
use crate::streams::{hz_to_period, ChannelStats, StreamScheduler, StreamSource};

pub type ClientId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Planner results arrive after a fixed simulated latency, whatever
    /// the wall-clock cost. Runs are reproducible.
    Lockstep,
    /// Planner results arrive whenever the worker finishes.
    Realtime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Client(ClientId),
    All,
    /// Clients subscribed to the frame's channel.
    Subscribers,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub route: Route,
    pub frame: WireFrame,
}

/// Channels a client can subscribe to; joint states go to everyone.
pub const STREAM_CHANNELS: [&str; 4] = [
    channels::CAMERA_IMAGE,
    channels::POINT_CLOUD,
    channels::CLOUD_BOXES,
    channels::MARKER_POSE,
];

#[derive(Debug, Default)]
struct Client {
    goal_ids: GoalIds,
    subscriptions: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy)]
struct Goal {
    client: ClientId,
    action: ActionState,
}

impl Goal {
    fn id(&self) -> u64 {
        self.action.goal_id
    }
}

struct PlanJob {
    goal: Goal,
    rx: Receiver<PlanOutcome>,
    ready_at: u64,
    next_heartbeat: u64,
}

struct ExecJob {
    goal: Goal,
    duration: f64,
    started: u64,
    next_heartbeat: u64,
}

pub struct Engine {
    config: ServerConfig,
    mode: Mode,
    world: World,
    session: Session,
    streams: StreamScheduler,
    pipeline: Pipeline,
    desk_in_base: Pose,
    clients: BTreeMap<ClientId, Client>,
    next_client: ClientId,
    plan: Option<PlanJob>,
    exec: Option<ExecJob>,
    now: u64,
    dt: u64,
    heartbeat: u64,
    plan_latency: u64,
    outbox: Vec<Outgoing>,
}

struct WorldSource<'a> {
    world: &'a mut World,
    pipeline: &'a mut Pipeline,
    noise: f64,
}

impl StreamSource for WorldSource<'_> {
    fn joint_state(&mut self) -> JointState {
        self.world.arm_state
    }

    fn image(&mut self) -> Image {
        self.world.render_rgb_image()
    }

    fn cloud(&mut self, budget: usize, seed: u64) -> PipelineOutput {
        let raw = self.world.render_depth_cloud();
        self.pipeline.config.point_budget = budget;
        let camera = self.world.camera.pose_in_base.to_isometry();
        self.pipeline.process(&raw, &camera, seed)
    }

    fn marker(&mut self) -> Option<Pose> {
        let seen = self.world.observe_marker(self.noise).ok()?;
        compose(&self.world.camera.pose_in_base, &seen).ok()
    }
}

fn goal_label(channel: &str) -> &'static str {
    match channel {
        channels::PLAN_MOTION => "plan",
        channels::EXECUTE_TRAJECTORY => "execute",
        channels::GRIPPER => "gripper",
        _ => "action",
    }
}

fn code_text(code: ResultCode) -> &'static str {
    match code {
        ResultCode::Ok => "ok",
        ResultCode::Busy => "busy",
        ResultCode::NoPlan => "no plan to execute",
        ResultCode::SchemaError => "malformed goal",
        ResultCode::PlanFailed => "planning failed",
        ResultCode::ProtocolViolation => "protocol violation",
        ResultCode::Canceled => "canceled",
    }
}

impl Engine {
    pub fn new(mut world: World, config: ServerConfig, mode: Mode) -> Self {
        let desk_in_base = match world.observe_marker(config.marker.noise_std) {
            Ok(seen) => {
                let d = desk_pose_from_marker(&seen, &world.camera.pose_in_base, &world.marker.desk_offset)
                    .expect("marker observations are camera-relative");
                info!(
                    "desk localized from marker {} at ({:.4}, {:.4}, {:.4})",
                    world.marker.id, d.position.x, d.position.y, d.position.z
                );
                d
            }
            Err(e) => {
                warn!("{e}; using the scene's desk pose for planning");
                world.desk_pose()
            }
        };
        let dt = hz_to_period(config.sim.rate_hz);
        let streams = StreamScheduler::new(&config.streams, config.perception.enable_bounding_boxes, world.seed);
        Engine {
            pipeline: Pipeline::new(config.perception.clone()),
            streams,
            heartbeat: hz_to_period(config.session.heartbeat_hz),
            plan_latency: (config.sim.plan_latency * 1e9).round() as u64,
            config,
            mode,
            world,
            session: Session::default(),
            desk_in_base,
            clients: BTreeMap::new(),
            next_client: 1,
            plan: None,
            exec: None,
            now: 0,
            dt,
            outbox: Vec::new(),
        }
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    /// Simulated time in nanoseconds.
    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn step_nanos(&self) -> u64 {
        self.dt
    }

    pub fn desk_in_base(&self) -> &Pose {
        &self.desk_in_base
    }

    pub fn point_budget(&self) -> usize {
        self.streams.point_budget()
    }

    pub fn stream_stats(&self) -> &BTreeMap<&'static str, ChannelStats> {
        self.streams.stats()
    }

    pub fn connect(&mut self) -> ClientId {
        let id = self.next_client;
        self.next_client += 1;
        self.clients.insert(id, Client::default());
        info!("client {id} connected");
        id
    }

    pub fn disconnect(&mut self, client: ClientId) {
        if self.clients.remove(&client).is_some() {
            info!("client {client} disconnected");
        }
    }

    pub fn is_subscribed(&self, client: ClientId, channel: &str) -> bool {
        self.clients
            .get(&client)
            .is_some_and(|c| c.subscriptions.contains(channel))
    }

    pub fn clients(&self) -> impl Iterator<Item = ClientId> + '_ {
        self.clients.keys().copied()
    }

    fn send(&mut self, route: Route, kind: FrameKind, channel: &str, payload: Vec<u8>) {
        self.outbox.push(Outgoing {
            route,
            frame: WireFrame::new(kind, channel, payload),
        });
    }

    fn status_text(&mut self, line: String) {
        info!("{line}");
        let mut payload = line;
        while payload.len() > u16::MAX as usize {
            payload.pop();
        }
        let body = payload.to_bytes().expect("status text truncated to fit");
        self.send(Route::All, FrameKind::Publish, channels::PLAN_STATUS_TEXT, body);
    }

    fn feedback(&mut self, goal: &Goal, channel: &str, body: Vec<u8>) {
        self.send(Route::Client(goal.client), FrameKind::ActionFeedback, channel, action_payload(goal.id(), &body));
    }

    fn finish(&mut self, goal: &mut Goal, channel: &str, outcome: Outcome, code: ResultCode, body: Vec<u8>) {
        let status = goal
            .action
            .apply(ActionEvent::Finish(outcome))
            .expect("the engine only finishes active goals");
        let r = ActionResult {
            goal_id: goal.id(),
            status,
            code,
            body,
        };
        self.send(Route::Client(goal.client), FrameKind::ActionResult, channel, r.to_bytes());
    }

    fn accept(client: ClientId, goal_id: u64) -> Goal {
        let mut action = ActionState::new(goal_id);
        action.apply(ActionEvent::Accept).expect("pending goals can be accepted");
        Goal { client, action }
    }

    fn reject(&mut self, client: ClientId, channel: &str, goal_id: u64, code: ResultCode) {
        let mut goal = Self::accept(client, goal_id);
        self.status_text(format!("{} {goal_id}: rejected, {}", goal_label(channel), code_text(code)));
        self.finish(&mut goal, channel, Outcome::Aborted, code, Vec::new());
    }

    /// Dispatches one frame from a client. Responses are queued for the
    /// next `tick`.
    pub fn handle_frame(&mut self, client: ClientId, frame: WireFrame) {
        if !self.clients.contains_key(&client) {
            return;
        }
        match frame.kind {
            FrameKind::Subscribe => {
                if STREAM_CHANNELS.contains(&frame.channel.as_str()) {
                    info!("client {client} subscribed to {}", frame.channel);
                    self.clients.get_mut(&client).expect("checked above").subscriptions.insert(frame.channel);
                } else {
                    warn!("client {client} subscribed to unknown channel {:?}", frame.channel);
                }
            }
            FrameKind::ActionGoal => self.on_goal(client, &frame),
            FrameKind::ActionCancel => self.on_cancel(client, &frame),
            FrameKind::Publish | FrameKind::ActionFeedback | FrameKind::ActionResult => {
                warn!("client {client} sent a {:?} frame on {:?}; ignored", frame.kind, frame.channel);
            }
        }
    }

    fn on_goal(&mut self, client: ClientId, frame: &WireFrame) {
        let channel = frame.channel.as_str();
        let Ok((goal_id, body)) = split_action(&frame.payload) else {
            warn!("client {client} sent a goal without a goal id on {channel:?}");
            return;
        };
        let ids = &mut self.clients.get_mut(&client).expect("caller checked").goal_ids;
        if let Err(e) = ids.admit(goal_id) {
            warn!("client {client}: {e}");
            let r = ActionResult {
                goal_id,
                status: ActionStatus::Aborted,
                code: ResultCode::ProtocolViolation,
                body: Vec::new(),
            };
            self.send(Route::Client(client), FrameKind::ActionResult, channel, r.to_bytes());
            return;
        }
        match channel {
            channels::PLAN_MOTION => self.on_plan_goal(client, goal_id, body),
            channels::EXECUTE_TRAJECTORY => self.on_execute_goal(client, goal_id, body),
            channels::GRIPPER => self.on_gripper_goal(client, goal_id, body),
            _ => self.reject(client, channel, goal_id, ResultCode::SchemaError),
        }
    }

    fn on_plan_goal(&mut self, client: ClientId, goal_id: u64, body: &[u8]) {
        let ch = channels::PLAN_MOTION;
        let goal = match PlanGoal::from_bytes(body) {
            Ok(g) => g,
            Err(e) => {
                warn!("plan {goal_id}: {e}");
                return self.reject(client, ch, goal_id, ResultCode::SchemaError);
            }
        };
        match self.session.request_plan(goal_id) {
            Err(code) => self.reject(client, ch, goal_id, code),
            Ok(discarded) => {
                if let Some(old) = discarded {
                    self.status_text(format!("plan {old}: discarded"));
                }
                let g = Self::accept(client, goal_id);
                let p = goal.pose.position;
                self.status_text(format!("plan {goal_id}: planning to ({:.3}, {:.3}, {:.3})", p.x, p.y, p.z));
                self.feedback(&g, ch, PlanOutcome::Pending.to_bytes().expect("fixed size"));
                let rx = self.spawn_plan(goal);
                let ready_at = match self.mode {
                    Mode::Lockstep => self.now + self.plan_latency,
                    Mode::Realtime => self.now,
                };
                self.plan = Some(PlanJob {
                    goal: g,
                    rx,
                    ready_at,
                    next_heartbeat: self.now + self.heartbeat,
                });
            }
        }
    }

    /// Plans on a worker thread against a snapshot whose desk sits where
    /// the marker says it is.
    fn spawn_plan(&self, goal: PlanGoal) -> Receiver<PlanOutcome> {
        let mut snapshot = self.world.clone();
        snapshot.desk.pose = self.desk_in_base;
        let scene = snapshot.planning_scene();
        let start = snapshot.arm_state;
        let chain = snapshot.chain;
        let opts = plan_options(&self.config.planner, goal.seed);
        let (tx, rx) = bounded(1);
        std::thread::spawn(move || {
            let outcome = plan_motion(&scene, &chain, &start, &goal.pose, &opts);
            // The receiver is gone if the goal was canceled.
            let _ = tx.send(outcome);
        });
        rx
    }

    fn on_execute_goal(&mut self, client: ClientId, goal_id: u64, body: &[u8]) {
        let ch = channels::EXECUTE_TRAJECTORY;
        if <()>::from_bytes(body).is_err() {
            return self.reject(client, ch, goal_id, ResultCode::SchemaError);
        }
        match self.session.request_execute(goal_id) {
            Err(code) => self.reject(client, ch, goal_id, code),
            Ok(traj) => {
                let g = Self::accept(client, goal_id);
                let duration = traj.duration();
                self.status_text(format!("execute {goal_id}: running {duration:.2} s trajectory"));
                self.world.execute(traj);
                let progress = ExecuteProgress { elapsed: 0.0, duration };
                self.feedback(&g, ch, progress.to_bytes().expect("fixed size"));
                self.exec = Some(ExecJob {
                    goal: g,
                    duration,
                    started: self.now,
                    next_heartbeat: self.now + self.heartbeat,
                });
            }
        }
    }

    fn on_gripper_goal(&mut self, client: ClientId, goal_id: u64, body: &[u8]) {
        let ch = channels::GRIPPER;
        let action = match GripperAction::from_bytes(body) {
            Ok(a) => a,
            Err(_) => return self.reject(client, ch, goal_id, ResultCode::SchemaError),
        };
        if let Err(code) = self.session.request_gripper() {
            return self.reject(client, ch, goal_id, code);
        }
        let mut g = Self::accept(client, goal_id);
        let held_before = self.world.grasped.map(|h| h.object);
        self.world.command_gripper(action);
        let line = match (action, held_before, self.world.grasped) {
            (GripperAction::Close, _, Some(h)) => format!("closed on {}", self.world.objects[h.object].id),
            (GripperAction::Close, _, None) => "closed, nothing grasped".to_string(),
            (GripperAction::Open, Some(i), _) => {
                let support = self.world.supports[i].clone().unwrap_or_default();
                format!("opened, {} rests on {support}", self.world.objects[i].id)
            }
            (GripperAction::Open, None, _) => "opened".to_string(),
        };
        self.status_text(format!("gripper {goal_id}: {line}"));
        self.finish(&mut g, ch, Outcome::Succeeded, ResultCode::Ok, Vec::new());
    }

    fn on_cancel(&mut self, client: ClientId, frame: &WireFrame) {
        let Ok((goal_id, _)) = split_action(&frame.payload) else {
            return;
        };
        let matches = |g: &Goal| g.client == client && g.id() == goal_id;
        if self.plan.as_ref().is_some_and(|j| matches(&j.goal)) {
            let mut job = self.plan.take().expect("checked");
            self.session.cancel(goal_id);
            self.status_text(format!("plan {goal_id}: canceled"));
            self.cancel_goal(&mut job.goal, channels::PLAN_MOTION);
        } else if self.exec.as_ref().is_some_and(|j| matches(&j.goal)) {
            let mut job = self.exec.take().expect("checked");
            self.world.executing = None;
            self.session.cancel(goal_id);
            self.status_text(format!("execute {goal_id}: canceled"));
            self.cancel_goal(&mut job.goal, channels::EXECUTE_TRAJECTORY);
        } else {
            info!("client {client}: cancel for goal {goal_id}, which is not running");
        }
    }

    fn cancel_goal(&mut self, goal: &mut Goal, channel: &str) {
        goal.action.apply(ActionEvent::Cancel).expect("active goals can be canceled");
        let r = ActionResult {
            goal_id: goal.id(),
            status: ActionStatus::Canceled,
            code: ResultCode::Canceled,
            body: Vec::new(),
        };
        self.send(Route::Client(goal.client), FrameKind::ActionResult, channel, r.to_bytes());
    }

    fn poll_plan(&mut self) {
        let Some(job) = &mut self.plan else { return };
        if self.now < job.ready_at {
            return;
        }
        let outcome = match self.mode {
            Mode::Lockstep => job.rx.recv().ok(),
            Mode::Realtime => match job.rx.try_recv() {
                Ok(o) => Some(o),
                Err(TryRecvError::Empty) => return,
                Err(TryRecvError::Disconnected) => None,
            },
        };
        let mut job = self.plan.take().expect("checked above");
        let id = job.goal.id();
        let ch = channels::PLAN_MOTION;
        let Some(outcome) = outcome else {
            // The worker died; report the goal as failed without a reason.
            self.session.cancel(id);
            self.status_text(format!("plan {id}: planner crashed"));
            return self.finish(&mut job.goal, ch, Outcome::Aborted, ResultCode::PlanFailed, Vec::new());
        };
        self.session.plan_finished(id, &outcome);
        let body = outcome.to_bytes().expect("trajectory fits");
        self.feedback(&job.goal, ch, body.clone());
        match &outcome {
            PlanOutcome::Success(t) => {
                self.status_text(format!(
                    "plan {id}: success, {:.2} s trajectory with {} points",
                    t.duration(),
                    t.points.len()
                ));
                self.finish(&mut job.goal, ch, Outcome::Succeeded, ResultCode::Ok, body);
            }
            PlanOutcome::Failure(f) => {
                self.status_text(format!("plan {id}: failed, {f}"));
                self.finish(&mut job.goal, ch, Outcome::Aborted, ResultCode::PlanFailed, body);
            }
            PlanOutcome::Pending => unreachable!("planner returns a final outcome"),
        }
    }

    fn heartbeats(&mut self) {
        let now = self.now;
        let beat = self.heartbeat;
        if let Some(job) = &mut self.plan {
            if now >= job.next_heartbeat {
                job.next_heartbeat += beat;
                let g = job.goal;
                self.feedback(&g, channels::PLAN_MOTION, PlanOutcome::Pending.to_bytes().expect("fixed size"));
            }
        }
        if let Some(job) = &mut self.exec {
            if now >= job.next_heartbeat {
                job.next_heartbeat += beat;
                let g = job.goal;
                let progress = ExecuteProgress {
                    elapsed: (now - job.started) as f64 * 1e-9,
                    duration: job.duration,
                };
                self.feedback(&g, channels::EXECUTE_TRAJECTORY, progress.to_bytes().expect("fixed size"));
            }
        }
    }

    fn poll_execution(&mut self) {
        if self.world.is_executing() {
            return;
        }
        let Some(mut job) = self.exec.take() else { return };
        let id = job.goal.id();
        self.session.execute_finished(id);
        self.status_text(format!("execute {id}: done"));
        self.finish(&mut job.goal, channels::EXECUTE_TRAJECTORY, Outcome::Succeeded, ResultCode::Ok, Vec::new());
    }

    /// Advances one fixed step and returns everything to send, in order:
    /// action traffic and status text first, then stream frames.
    pub fn tick(&mut self) -> Vec<Outgoing> {
        self.poll_plan();
        self.world.step(self.dt as f64 * 1e-9);
        self.now += self.dt;
        self.poll_execution();
        self.heartbeats();
        debug_assert!(self.indicator_consistent());

        let mut src = WorldSource {
            world: &mut self.world,
            pipeline: &mut self.pipeline,
            noise: self.config.marker.noise_std,
        };
        for frame in self.streams.tick(self.now, &mut src) {
            let route = if frame.channel == channels::JOINT_STATES {
                Route::All
            } else {
                Route::Subscribers
            };
            self.outbox.push(Outgoing { route, frame });
        }
        std::mem::take(&mut self.outbox)
    }

    /// Drains queued responses without advancing time.
    pub fn take_outbox(&mut self) -> Vec<Outgoing> {
        std::mem::take(&mut self.outbox)
    }

    fn indicator_consistent(&self) -> bool {
        let want = match self.session.state() {
            SessionState::Planning(_) => Indicator::Blue,
            SessionState::Planned(..) => Indicator::Green,
            SessionState::Idle if self.session.last_failure().is_some() => Indicator::Red,
            _ => Indicator::None,
        };
        self.session.indicator() == want
    }

    /// Whether `client` should receive `out`.
    pub fn delivers_to(&self, out: &Outgoing, client: ClientId) -> bool {
        match out.route {
            Route::Client(c) => c == client,
            Route::All => self.clients.contains_key(&client),
            Route::Subscribers => self.is_subscribed(client, &out.frame.channel),
        }
    }
}
