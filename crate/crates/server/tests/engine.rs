//! Session behaviour seen through the wire, one client, lockstep time.

use std::path::PathBuf;

use teleop_core::frames::{FrameId, Pose, UnitQuat, Vec3};
use teleop_core::planner::{PlanFailure, PlanOutcome};
use teleop_core::protocol::{
    action_payload, channels, split_action, ActionResult, ActionStatus, FrameKind, Message, PlanGoal, ResultCode,
    WireFrame,
};
use teleop_core::simworld::GripperAction;
use teleop_server::config::ServerConfig;
use teleop_server::engine::{ClientId, Engine, Mode};
use teleop_server::load_world;
use teleop_server::session::{Indicator, SessionState};

fn asset(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../assets").join(name)
}

struct Harness {
    engine: Engine,
    client: ClientId,
    received: Vec<WireFrame>,
    indicators: Vec<Indicator>,
}

impl Harness {
    fn new() -> Self {
        let cfg = ServerConfig::default();
        let world = load_world(&asset("demo.scene"), &cfg).unwrap();
        let mut engine = Engine::new(world, cfg, Mode::Lockstep);
        let client = engine.connect();
        Harness {
            engine,
            client,
            received: Vec::new(),
            indicators: vec![Indicator::None],
        }
    }

    fn goal(&mut self, channel: &str, id: u64, body: &[u8]) {
        let f = WireFrame::new(FrameKind::ActionGoal, channel, action_payload(id, body));
        self.engine.handle_frame(self.client, f);
    }

    fn plan(&mut self, id: u64, p: [f64; 3]) {
        let goal = PlanGoal {
            pose: Pose::new(Vec3::from(p), top_down(), FrameId::Base),
            seed: 1,
        };
        self.goal(channels::PLAN_MOTION, id, &goal.to_bytes().unwrap());
    }

    fn tick(&mut self) {
        for out in self.engine.tick() {
            if self.engine.delivers_to(&out, self.client) {
                self.received.push(out.frame);
            }
        }
        let i = self.engine.session().indicator();
        if self.indicators.last() != Some(&i) {
            self.indicators.push(i);
        }
    }

    fn run(&mut self, seconds: f64) {
        let n = (seconds * 1e9 / self.engine.step_nanos() as f64).round() as usize;
        for _ in 0..n {
            self.tick();
        }
    }

    fn result(&self, id: u64) -> Option<ActionResult> {
        self.received
            .iter()
            .filter(|f| f.kind == FrameKind::ActionResult)
            .filter_map(|f| ActionResult::from_bytes(&f.payload).ok())
            .find(|r| r.goal_id == id)
    }

    fn plan_feedback(&self, id: u64) -> Vec<PlanOutcome> {
        self.received
            .iter()
            .filter(|f| f.kind == FrameKind::ActionFeedback && f.channel == channels::PLAN_MOTION)
            .filter_map(|f| split_action(&f.payload).ok())
            .filter(|(g, _)| *g == id)
            .map(|(_, b)| PlanOutcome::from_bytes(b).unwrap())
            .collect()
    }

    fn texts(&self) -> Vec<String> {
        self.received
            .iter()
            .filter(|f| f.channel == channels::PLAN_STATUS_TEXT)
            .map(|f| String::from_bytes(&f.payload).unwrap())
            .collect()
    }
}

fn top_down() -> UnitQuat {
    UnitQuat::from_euler_angles(0.0, std::f64::consts::FRAC_PI_2, 0.0)
}

const FREE: [f64; 3] = [0.63, 0.15, 0.70];
const OTHER: [f64; 3] = [0.55, -0.1, 0.8];
const IN_DESK: [f64; 3] = [0.7, 0.0, 0.45];

#[test]
fn free_goal_goes_blue_then_green_with_a_trajectory() {
    let mut h = Harness::new();
    h.plan(1, FREE);
    h.run(1.5);
    assert_eq!(h.indicators, vec![Indicator::None, Indicator::Blue, Indicator::Green]);
    let fb = h.plan_feedback(1);
    assert_eq!(fb[0], PlanOutcome::Pending);
    assert!(matches!(fb.last(), Some(PlanOutcome::Success(_))));
    let r = h.result(1).unwrap();
    assert_eq!((r.status, r.code), (ActionStatus::Succeeded, ResultCode::Ok));
    assert!(matches!(PlanOutcome::from_bytes(&r.body).unwrap(), PlanOutcome::Success(_)));
    assert!(h.texts().iter().any(|t| t.starts_with("plan 1: success")));
}

#[test]
fn goal_inside_the_desk_goes_red_with_the_reason() {
    let mut h = Harness::new();
    h.plan(1, IN_DESK);
    h.run(1.5);
    assert_eq!(h.indicators, vec![Indicator::None, Indicator::Blue, Indicator::Red]);
    let r = h.result(1).unwrap();
    assert_eq!((r.status, r.code), (ActionStatus::Aborted, ResultCode::PlanFailed));
    assert_eq!(
        PlanOutcome::from_bytes(&r.body).unwrap(),
        PlanOutcome::Failure(PlanFailure::GoalInCollision)
    );
    assert!(h.texts().iter().any(|t| t.contains("failed")));
}

#[test]
fn second_plan_while_planning_is_busy_and_the_first_survives() {
    let mut h = Harness::new();
    h.plan(1, FREE);
    h.plan(2, OTHER);
    h.tick();
    let r = h.result(2).unwrap();
    assert_eq!((r.status, r.code), (ActionStatus::Aborted, ResultCode::Busy));
    h.run(1.5);
    assert_eq!(h.result(1).unwrap().status, ActionStatus::Succeeded);
}

#[test]
fn execute_without_a_plan_is_rejected() {
    let mut h = Harness::new();
    h.goal(channels::EXECUTE_TRAJECTORY, 1, &[]);
    h.tick();
    let r = h.result(1).unwrap();
    assert_eq!((r.status, r.code), (ActionStatus::Aborted, ResultCode::NoPlan));
}

#[test]
fn execute_ends_exactly_on_the_last_point() {
    let mut h = Harness::new();
    h.plan(1, FREE);
    h.run(1.5);
    let PlanOutcome::Success(traj) = PlanOutcome::from_bytes(&h.result(1).unwrap().body).unwrap() else {
        panic!("plan failed")
    };
    h.goal(channels::EXECUTE_TRAJECTORY, 2, &[]);
    h.tick();
    assert_eq!(h.engine.session().state(), &SessionState::Executing(2));
    // Busy while executing.
    h.plan(3, OTHER);
    h.goal(channels::GRIPPER, 4, &GripperAction::Close.to_bytes().unwrap());
    h.run(traj.duration() + 0.5);
    assert_eq!(h.result(3).unwrap().code, ResultCode::Busy);
    assert_eq!(h.result(4).unwrap().code, ResultCode::Busy);
    assert_eq!(h.result(2).unwrap().status, ActionStatus::Succeeded);
    let end = traj.points.last().unwrap().q;
    assert!((h.engine.world().arm_state.q - end).amax() <= 1e-9);
    assert_eq!(h.engine.session().state(), &SessionState::Idle);
}

#[test]
fn replanning_discards_the_older_plan() {
    let mut h = Harness::new();
    h.plan(1, FREE);
    h.run(1.5);
    h.plan(2, OTHER);
    h.run(1.5);
    let PlanOutcome::Success(b) = PlanOutcome::from_bytes(&h.result(2).unwrap().body).unwrap() else {
        panic!("plan failed")
    };
    assert!(h.texts().contains(&"plan 1: discarded".to_string()));
    h.goal(channels::EXECUTE_TRAJECTORY, 3, &[]);
    h.run(b.duration() + 0.5);
    assert_eq!(h.result(3).unwrap().status, ActionStatus::Succeeded);
    let end = b.points.last().unwrap().q;
    assert!((h.engine.world().arm_state.q - end).amax() <= 1e-9);
}

#[test]
fn canceling_a_plan_clears_the_indicator() {
    let mut h = Harness::new();
    h.plan(1, FREE);
    h.tick();
    let f = WireFrame::new(FrameKind::ActionCancel, channels::PLAN_MOTION, action_payload(1, &[]));
    h.engine.handle_frame(h.client, f);
    h.run(1.5);
    let r = h.result(1).unwrap();
    assert_eq!((r.status, r.code), (ActionStatus::Canceled, ResultCode::Canceled));
    assert_eq!(h.indicators, vec![Indicator::None, Indicator::Blue, Indicator::None]);
    assert_eq!(h.received.iter().filter(|f| f.kind == FrameKind::ActionResult).count(), 1);
}

#[test]
fn reused_goal_ids_are_protocol_violations() {
    let mut h = Harness::new();
    h.goal(channels::GRIPPER, 5, &GripperAction::Open.to_bytes().unwrap());
    h.goal(channels::GRIPPER, 5, &GripperAction::Open.to_bytes().unwrap());
    h.goal(channels::GRIPPER, 4, &GripperAction::Open.to_bytes().unwrap());
    h.tick();
    let codes: Vec<ResultCode> = h
        .received
        .iter()
        .filter(|f| f.kind == FrameKind::ActionResult)
        .map(|f| ActionResult::from_bytes(&f.payload).unwrap().code)
        .collect();
    assert_eq!(codes, vec![ResultCode::Ok, ResultCode::ProtocolViolation, ResultCode::ProtocolViolation]);
}

#[test]
fn malformed_pose_is_a_schema_error() {
    let mut h = Harness::new();
    let mut body = PlanGoal {
        pose: Pose::new(Vec3::from(FREE), top_down(), FrameId::Base),
        seed: 1,
    }
    .to_bytes()
    .unwrap();
    // Scale the quaternion's w component off the unit sphere.
    body[48..56].copy_from_slice(&2.0f64.to_le_bytes());
    h.goal(channels::PLAN_MOTION, 1, &body);
    h.goal(channels::PLAN_MOTION, 2, &body[..10]);
    h.tick();
    for id in [1, 2] {
        let r = h.result(id).unwrap();
        assert_eq!((r.status, r.code), (ActionStatus::Aborted, ResultCode::SchemaError));
    }
    assert_eq!(h.engine.session().indicator(), Indicator::None);
}

#[test]
fn streams_reach_only_subscribers_but_joint_states_reach_everyone() {
    let mut h = Harness::new();
    let other = h.engine.connect();
    h.engine
        .handle_frame(other, WireFrame::new(FrameKind::Subscribe, channels::CAMERA_IMAGE, Vec::new()));
    let mut seen_other = Vec::new();
    for _ in 0..20 {
        for out in h.engine.tick() {
            if h.engine.delivers_to(&out, h.client) {
                h.received.push(out.frame.clone());
            }
            if h.engine.delivers_to(&out, other) {
                seen_other.push(out.frame.channel);
            }
        }
    }
    assert!(h.received.iter().all(|f| f.channel == channels::JOINT_STATES));
    assert!(seen_other.iter().any(|c| c == channels::CAMERA_IMAGE));
    assert!(seen_other.iter().any(|c| c == channels::JOINT_STATES));
    assert!(!seen_other.iter().any(|c| c == channels::POINT_CLOUD));
}

#[test]
fn desk_is_localized_from_the_marker() {
    let h = Harness::new();
    let truth = h.engine.world().desk_pose();
    let got = h.engine.desk_in_base();
    assert!((got.position - truth.position).norm() < 1e-9);
}
