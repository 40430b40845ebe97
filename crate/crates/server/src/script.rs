//! Headless scripted operator. Drives an engine in lockstep through the
//! same framed protocol a UI uses and writes a plain-text report.
//!
//! Script format, one command per line, `#` starts a comment:
//!
//! ```text
//! <time> set-goal-pose <x> <y> <z> <roll> <pitch> <yaw>
//! <time> plan [seed]
//! <time> await-state <blue|green|red|none|idle|executing> [timeout]
//! <time> execute [timeout]
//! <time> gripper <open|close> [timeout]
//! <time> wait <seconds>
//! <time> expect-inside <object id>
//! ```
//!
//! A step starts at its time (simulated seconds) or when the previous step
//! ends, whichever is later. The first failing step ends the run.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};
use thiserror::Error;

use teleop_core::frames::{FrameId, Pose, UnitQuat, Vec3};
use teleop_core::planner::PlanOutcome;
use teleop_core::protocol::{
    action_payload, channels, encode_frame, split_action, ActionResult, ActionStatus, FrameDecoder, FrameKind,
    Message, PlanGoal, ResultCode, WireFrame,
};
use teleop_core::simworld::GripperAction;

use crate::engine::{ClientId, Engine, STREAM_CHANNELS};
use crate::session::Indicator;
use crate::streams::NANOS;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Awaited {
    Indicator(Indicator),
    Idle,
    Executing,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    SetGoalPose(Pose),
    Plan(Option<u64>),
    AwaitState(Awaited, f64),
    Execute(f64),
    Gripper(GripperAction, f64),
    Wait(f64),
    ExpectInside(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub line: usize,
    pub at: f64,
    pub text: String,
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ScriptError {
    pub line: usize,
    pub message: String,
}

const DEFAULT_AWAIT: f64 = 10.0;
const DEFAULT_EXECUTE: f64 = 30.0;
const DEFAULT_GRIPPER: f64 = 2.0;

fn number(tok: Option<&str>, what: &str, line: usize) -> Result<f64, ScriptError> {
    let err = |m: String| ScriptError { line, message: m };
    let t = tok.ok_or_else(|| err(format!("missing {what}")))?;
    let v: f64 = t.parse().map_err(|_| err(format!("{what}: {t:?} is not a number")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(err(format!("{what} must be finite")))
    }
}

fn optional(tok: Option<&str>, default: f64, what: &str, line: usize) -> Result<f64, ScriptError> {
    match tok {
        None => Ok(default),
        t => number(t, what, line),
    }
}

pub fn parse(text: &str) -> Result<Vec<Step>, ScriptError> {
    let mut steps = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let err = |m: String| ScriptError { line, message: m };
        let mut toks = body.split_whitespace();
        let at = number(toks.next(), "time", line)?;
        if at < 0.0 {
            return Err(err("time must not be negative".into()));
        }
        let name = toks.next().ok_or_else(|| err("missing command".into()))?;
        let args: Vec<&str> = toks.collect();
        let arg = |k: usize| args.get(k).copied();
        let max_args = |n: usize| {
            if args.len() > n {
                Err(err(format!("{name} takes at most {n} arguments")))
            } else {
                Ok(())
            }
        };
        let command = match name {
            "set-goal-pose" => {
                if args.len() != 6 {
                    return Err(err("set-goal-pose needs x y z roll pitch yaw".into()));
                }
                let v: Vec<f64> = (0..6).map(|k| number(arg(k), "pose value", line)).collect::<Result<_, _>>()?;
                let r = UnitQuat::from_euler_angles(v[3], v[4], v[5]);
                Command::SetGoalPose(Pose::new(Vec3::new(v[0], v[1], v[2]), r, FrameId::Base))
            }
            "plan" => {
                max_args(1)?;
                let seed = match arg(0) {
                    None => None,
                    Some(t) => Some(t.parse().map_err(|_| err(format!("seed {t:?} is not an integer")))?),
                };
                Command::Plan(seed)
            }
            "await-state" => {
                max_args(2)?;
                let state = match arg(0) {
                    Some("blue") => Awaited::Indicator(Indicator::Blue),
                    Some("green") => Awaited::Indicator(Indicator::Green),
                    Some("red") => Awaited::Indicator(Indicator::Red),
                    Some("none") => Awaited::Indicator(Indicator::None),
                    Some("idle") => Awaited::Idle,
                    Some("executing") => Awaited::Executing,
                    other => return Err(err(format!("unknown state {other:?}"))),
                };
                Command::AwaitState(state, optional(arg(1), DEFAULT_AWAIT, "timeout", line)?)
            }
            "execute" => {
                max_args(1)?;
                Command::Execute(optional(arg(0), DEFAULT_EXECUTE, "timeout", line)?)
            }
            "gripper" => {
                max_args(2)?;
                let a = match arg(0) {
                    Some("open") => GripperAction::Open,
                    Some("close") => GripperAction::Close,
                    other => return Err(err(format!("gripper needs open or close, got {other:?}"))),
                };
                Command::Gripper(a, optional(arg(1), DEFAULT_GRIPPER, "timeout", line)?)
            }
            "wait" => {
                max_args(1)?;
                let s = number(arg(0), "duration", line)?;
                if s < 0.0 {
                    return Err(err("duration must not be negative".into()));
                }
                Command::Wait(s)
            }
            "expect-inside" => {
                max_args(1)?;
                Command::ExpectInside(arg(0).ok_or_else(|| err("missing object id".into()))?.to_string())
            }
            other => return Err(err(format!("unknown command {other:?}"))),
        };
        steps.push(Step {
            line,
            at,
            text: body.split_whitespace().collect::<Vec<_>>().join(" "),
            command,
        });
    }
    Ok(steps)
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Ok,
    Failed(String),
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: Step,
    pub started: f64,
    pub ended: f64,
    pub outcome: StepOutcome,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectReport {
    pub id: String,
    pub center: Vec3,
    pub support: Option<String>,
    pub inside_target: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub script: String,
    pub seed: u64,
    pub steps: Vec<StepReport>,
    pub indicators: Vec<Indicator>,
    pub objects: Vec<ObjectReport>,
    pub sim_time: f64,
    pub frames: u64,
    pub bytes: u64,
    pub frames_by_channel: BTreeMap<String, u64>,
    pub digest: String,
}

impl Report {
    pub fn success(&self) -> bool {
        self.steps.iter().all(|s| s.outcome == StepOutcome::Ok)
    }

    /// Deterministic text form; identical runs give identical bytes.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "script {}", self.script);
        let _ = writeln!(s, "seed {}", self.seed);
        for (i, st) in self.steps.iter().enumerate() {
            let outcome = match &st.outcome {
                StepOutcome::Ok => "ok".to_string(),
                StepOutcome::Failed(why) => format!("FAILED: {why}"),
                StepOutcome::Skipped => "skipped".to_string(),
            };
            let _ = write!(
                s,
                "step {} line {} [{:.2} -> {:.2}] {}: {}",
                i + 1,
                st.step.line,
                st.started,
                st.ended,
                st.step.text,
                outcome
            );
            if let Some(n) = &st.note {
                let _ = write!(s, " ({n})");
            }
            s.push('\n');
        }
        let names: Vec<&str> = self.indicators.iter().map(|i| i.name()).collect();
        let _ = writeln!(s, "indicator {}", names.join(" -> "));
        for o in &self.objects {
            let _ = writeln!(
                s,
                "object {} center ({:.6}, {:.6}, {:.6}) support {} {}",
                o.id,
                o.center.x,
                o.center.y,
                o.center.z,
                o.support.as_deref().unwrap_or("held"),
                if o.inside_target { "inside target box" } else { "outside target box" }
            );
        }
        let _ = writeln!(s, "sim time {:.2} s", self.sim_time);
        let per: Vec<String> = self.frames_by_channel.iter().map(|(c, n)| format!("{c}={n}")).collect();
        let _ = writeln!(s, "frames {} bytes {} ({})", self.frames, self.bytes, per.join(" "));
        let _ = writeln!(s, "stream sha256 {}", self.digest);
        let _ = writeln!(s, "result {}", if self.success() { "success" } else { "failure" });
        s
    }
}

/// The operator's view of the session, built only from received frames.
struct Operator {
    client: ClientId,
    server_decoder: FrameDecoder,
    decoder: FrameDecoder,
    hasher: Sha256,
    frames: u64,
    bytes: u64,
    by_channel: BTreeMap<String, u64>,
    next_goal: u64,
    goal_pose: Option<Pose>,
    plan_goal: Option<u64>,
    executing: Option<u64>,
    indicator: Indicator,
    indicators: Vec<Indicator>,
    results: BTreeMap<u64, ActionResult>,
    last_text: Option<String>,
}

impl Operator {
    fn new(client: ClientId) -> Self {
        Operator {
            client,
            server_decoder: FrameDecoder::new(),
            decoder: FrameDecoder::new(),
            hasher: Sha256::new(),
            frames: 0,
            bytes: 0,
            by_channel: BTreeMap::new(),
            next_goal: 1,
            goal_pose: None,
            plan_goal: None,
            executing: None,
            indicator: Indicator::None,
            indicators: vec![Indicator::None],
            results: BTreeMap::new(),
            last_text: None,
        }
    }

    /// Sends bytes to the engine the way a socket would.
    fn send(&mut self, engine: &mut Engine, kind: FrameKind, channel: &str, payload: &[u8]) {
        let bytes = encode_frame(kind, channel, payload).expect("operator frames are small");
        for f in self.server_decoder.push(&bytes).expect("operator frames are well formed") {
            engine.handle_frame(self.client, f);
        }
    }

    fn send_goal(&mut self, engine: &mut Engine, channel: &str, body: &[u8]) -> u64 {
        let id = self.next_goal;
        self.next_goal += 1;
        self.send(engine, FrameKind::ActionGoal, channel, &action_payload(id, body));
        id
    }

    fn set_indicator(&mut self, i: Indicator) {
        self.indicator = i;
        if self.indicators.last() != Some(&i) {
            self.indicators.push(i);
        }
    }

    fn receive(&mut self, bytes: &[u8]) {
        self.hasher.update(bytes);
        self.bytes += bytes.len() as u64;
        for f in self.decoder.push(bytes).expect("server frames are well formed") {
            self.frames += 1;
            *self.by_channel.entry(f.channel.clone()).or_default() += 1;
            self.observe(f);
        }
    }

    fn observe(&mut self, f: WireFrame) {
        match (f.kind, f.channel.as_str()) {
            (FrameKind::Publish, channels::PLAN_STATUS_TEXT) => {
                self.last_text = String::from_bytes(&f.payload).ok();
            }
            (FrameKind::ActionFeedback, channels::PLAN_MOTION) => {
                let Ok((id, body)) = split_action(&f.payload) else { return };
                if self.plan_goal.is_some_and(|g| id < g) {
                    return;
                }
                self.plan_goal = Some(id);
                match PlanOutcome::from_bytes(body) {
                    Ok(PlanOutcome::Pending) => self.set_indicator(Indicator::Blue),
                    Ok(PlanOutcome::Success(_)) => self.set_indicator(Indicator::Green),
                    Ok(PlanOutcome::Failure(_)) => self.set_indicator(Indicator::Red),
                    Err(_) => {}
                }
            }
            (FrameKind::ActionFeedback, channels::EXECUTE_TRAJECTORY) => {
                if let Ok((id, _)) = split_action(&f.payload) {
                    if self.executing != Some(id) {
                        self.executing = Some(id);
                        // The stored plan is consumed.
                        self.set_indicator(Indicator::None);
                    }
                }
            }
            (FrameKind::ActionResult, ch) => {
                let Ok(r) = ActionResult::from_bytes(&f.payload) else { return };
                if ch == channels::EXECUTE_TRAJECTORY && self.executing == Some(r.goal_id) {
                    self.executing = None;
                }
                if ch == channels::PLAN_MOTION && self.plan_goal == Some(r.goal_id) && r.status == ActionStatus::Canceled {
                    self.set_indicator(Indicator::None);
                }
                self.results.insert(r.goal_id, r);
            }
            _ => {}
        }
    }

    fn satisfied(&self, want: Awaited) -> bool {
        match want {
            Awaited::Indicator(i) => self.indicator == i,
            Awaited::Idle => self.executing.is_none() && self.indicator != Indicator::Blue,
            Awaited::Executing => self.executing.is_some(),
        }
    }
}

fn tick(engine: &mut Engine, op: &mut Operator) {
    for out in engine.tick() {
        if engine.delivers_to(&out, op.client) {
            let bytes = encode_frame(out.frame.kind, &out.frame.channel, &out.frame.payload)
                .expect("engine frames respect the size limits");
            op.receive(&bytes);
        }
    }
}

fn secs(nanos: u64) -> f64 {
    nanos as f64 / NANOS as f64
}

fn describe_result(r: &ActionResult) -> String {
    let status = match r.status {
        ActionStatus::Succeeded => "succeeded",
        ActionStatus::Aborted => "aborted",
        ActionStatus::Canceled => "canceled",
        _ => "unfinished",
    };
    if r.code == ResultCode::Ok {
        status.to_string()
    } else {
        format!("{status}, code {:?}", r.code)
    }
}

pub struct RunOptions {
    pub seed: u64,
    /// Simulated seconds after which the run is cut off.
    pub max_time: f64,
}

pub fn run(engine: &mut Engine, script_name: &str, steps: &[Step], opts: &RunOptions) -> Report {
    let client = engine.connect();
    let mut op = Operator::new(client);
    for ch in STREAM_CHANNELS {
        op.send(engine, FrameKind::Subscribe, ch, &[]);
    }
    let limit = (opts.max_time * NANOS as f64).round() as u64;
    let mut reports = Vec::new();
    let mut failed = false;

    for step in steps {
        let start_at = ((step.at * NANOS as f64).round() as u64).max(engine.now());
        if failed {
            reports.push(StepReport {
                step: step.clone(),
                started: secs(engine.now()),
                ended: secs(engine.now()),
                outcome: StepOutcome::Skipped,
                note: None,
            });
            continue;
        }
        while engine.now() < start_at && engine.now() < limit {
            tick(engine, &mut op);
        }
        let started = secs(engine.now());
        let (outcome, note) = run_step(engine, &mut op, step, opts, limit);
        failed = outcome != StepOutcome::Ok;
        reports.push(StepReport {
            step: step.clone(),
            started,
            ended: secs(engine.now()),
            outcome,
            note,
        });
    }
    // Let trailing frames of the last step arrive.
    tick(engine, &mut op);

    let world = engine.world();
    let interior = world.target_box.as_ref().map(|b| b.interior());
    let objects = world
        .objects
        .iter()
        .zip(&world.supports)
        .map(|(o, sup)| ObjectReport {
            id: o.id.clone(),
            center: o.center(),
            support: sup.clone(),
            inside_target: interior.as_ref().is_some_and(|b| b.contains(&o.center())),
        })
        .collect();
    Report {
        script: script_name.to_string(),
        seed: opts.seed,
        steps: reports,
        indicators: op.indicators.clone(),
        objects,
        sim_time: secs(engine.now()),
        frames: op.frames,
        bytes: op.bytes,
        frames_by_channel: op.by_channel.clone(),
        digest: op.hasher.clone().finalize().iter().map(|b| format!("{b:02x}")).collect(),
    }
}

/// Ticks until `done` holds, the step times out, or the run limit hits.
fn wait_until(
    engine: &mut Engine,
    op: &mut Operator,
    timeout: f64,
    limit: u64,
    mut done: impl FnMut(&Operator) -> bool,
) -> Result<(), String> {
    let deadline = engine.now().saturating_add((timeout * NANOS as f64).round() as u64).min(limit);
    loop {
        if done(op) {
            return Ok(());
        }
        if engine.now() >= deadline {
            return Err(if deadline == limit {
                "run time limit reached".to_string()
            } else {
                format!("timed out after {timeout} s")
            });
        }
        tick(engine, op);
    }
}

fn await_result(engine: &mut Engine, op: &mut Operator, id: u64, timeout: f64, limit: u64) -> (StepOutcome, Option<String>) {
    if let Err(why) = wait_until(engine, op, timeout, limit, |o| o.results.contains_key(&id)) {
        return (StepOutcome::Failed(why), None);
    }
    let r = &op.results[&id];
    let note = op.last_text.clone();
    if r.status == ActionStatus::Succeeded {
        (StepOutcome::Ok, note)
    } else {
        (StepOutcome::Failed(describe_result(r)), note)
    }
}

fn run_step(engine: &mut Engine, op: &mut Operator, step: &Step, opts: &RunOptions, limit: u64) -> (StepOutcome, Option<String>) {
    match &step.command {
        Command::SetGoalPose(p) => {
            op.goal_pose = Some(*p);
            (StepOutcome::Ok, None)
        }
        Command::Plan(seed) => {
            let Some(pose) = op.goal_pose else {
                return (StepOutcome::Failed("no goal pose set".into()), None);
            };
            let goal = PlanGoal {
                pose,
                seed: seed.unwrap_or(opts.seed),
            };
            let id = op.send_goal(engine, channels::PLAN_MOTION, &goal.to_bytes().expect("fixed size"));
            (StepOutcome::Ok, Some(format!("goal {id}")))
        }
        Command::AwaitState(want, timeout) => match wait_until(engine, op, *timeout, limit, |o| o.satisfied(*want)) {
            Ok(()) => (StepOutcome::Ok, None),
            Err(why) => (StepOutcome::Failed(format!("{why}, indicator {}", op.indicator.name())), op.last_text.clone()),
        },
        Command::Execute(timeout) => {
            let id = op.send_goal(engine, channels::EXECUTE_TRAJECTORY, &[]);
            await_result(engine, op, id, *timeout, limit)
        }
        Command::Gripper(action, timeout) => {
            let id = op.send_goal(engine, channels::GRIPPER, &action.to_bytes().expect("fixed size"));
            await_result(engine, op, id, *timeout, limit)
        }
        Command::Wait(s) => {
            let until = engine.now().saturating_add((s * NANOS as f64).round() as u64).min(limit);
            while engine.now() < until {
                tick(engine, op);
            }
            (StepOutcome::Ok, None)
        }
        Command::ExpectInside(id) => {
            let w = engine.world();
            let Some(o) = w.object(id) else {
                return (StepOutcome::Failed(format!("no object {id:?}")), None);
            };
            let Some(b) = &w.target_box else {
                return (StepOutcome::Failed("scene has no target box".into()), None);
            };
            if b.interior().contains(&o.center()) {
                (StepOutcome::Ok, None)
            } else {
                let c = o.center();
                (StepOutcome::Failed(format!("{id} is at ({:.3}, {:.3}, {:.3})", c.x, c.y, c.z)), None)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_command() {
        let text = "# pick\n0 set-goal-pose 0.6 0 0.8 0 1.5707963267948966 0\n0 plan 5\n0.5  await-state green 3\n1 execute\n1 gripper close\n2 wait 0.5 # pause\n3 expect-inside cube\n";
        let steps = parse(text).unwrap();
        assert_eq!(steps.len(), 7);
        assert_eq!(steps[1].command, Command::Plan(Some(5)));
        assert_eq!(steps[2].command, Command::AwaitState(Awaited::Indicator(Indicator::Green), 3.0));
        assert_eq!(steps[3].command, Command::Execute(DEFAULT_EXECUTE));
        assert_eq!(steps[4].command, Command::Gripper(GripperAction::Close, DEFAULT_GRIPPER));
        assert_eq!(steps[5].text, "2 wait 0.5");
        assert_eq!(steps[6].line, 8);
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(parse("0 plan\nx plan\n").unwrap_err().line, 2);
        assert!(parse("0 fly\n").unwrap_err().message.contains("fly"));
        assert!(parse("0 set-goal-pose 1 2 3\n").is_err());
        assert!(parse("0 await-state purple\n").is_err());
        assert!(parse("0 wait -1\n").is_err());
        assert!(parse("0 execute 1 2\n").is_err());
    }
}
