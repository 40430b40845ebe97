//! Collision world, joint-space planning to a task-space goal, and
//! trajectory timing.
//!
//! Planning pipeline: start check, IK, goal check, RRT-Connect, shortcut
//! smoothing, trapezoidal time parameterization. Planning checks use spheres
//! inflated by `padding`, and edges are sampled densely enough that no
//! sphere center moves more than `padding` between samples, so every
//! returned path is collision-free for the unpadded geometry in between
//! samples too.

use std::fmt;
use std::time::{Duration, Instant};

use nalgebra::Isometry3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm::{IkOptions, IkResult, JointState, JointVector, KinematicChain, DOF};
use crate::frames::{FrameId, Pose, UnitQuat, Vec3};

pub const FLOOR_ID: &str = "floor";

/// Oriented box obstacle.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionBox {
    pub id: String,
    pub pose: Pose,
    pub half_extents: Vec3,
}

impl CollisionBox {
    pub fn new(id: impl Into<String>, pose: Pose, half_extents: Vec3) -> Self {
        Self {
            id: id.into(),
            pose,
            half_extents,
        }
    }

    pub fn axis_aligned(id: impl Into<String>, center: Vec3, half_extents: Vec3) -> Self {
        Self::new(id, Pose::new(center, UnitQuat::identity(), FrameId::Base), half_extents)
    }

    /// Distance from `p` (parent frame) to the box; zero inside.
    pub fn distance_to(&self, p: &Vec3) -> f64 {
        let local = self.pose.to_isometry().inverse_transform_point(&(*p).into());
        clamp_distance(&local.coords, &self.half_extents)
    }

    /// Exact sphere overlap: the closest box point lies strictly inside the
    /// sphere.
    pub fn intersects_sphere(&self, center: &Vec3, radius: f64) -> bool {
        self.distance_to(center) < radius
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let local = self.pose.to_isometry().inverse_transform_point(&(*p).into());
        (0..3).all(|i| local[i].abs() <= self.half_extents[i])
    }

    pub fn top_z(&self) -> f64 {
        self.pose.position.z + self.half_extents.z
    }

    pub fn bounding_radius(&self) -> f64 {
        self.half_extents.norm()
    }
}

fn clamp_distance(local: &Vec3, half: &Vec3) -> f64 {
    let mut sq = 0.0;
    for i in 0..3 {
        let excess = local[i].abs() - half[i];
        if excess > 0.0 {
            sq += excess * excess;
        }
    }
    sq.sqrt()
}

/// Object held by the gripper, with its box given in the tool frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AttachedObject {
    pub shape: CollisionBox,
    /// Scene boxes the held object may touch (the surface it was picked from).
    pub touch_ids: Vec<String>,
}

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("duplicate collision object id `{0}`")]
    DuplicateId(String),
    #[error("collision object `{0}` has a non-positive half extent")]
    BadExtents(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanningScene {
    boxes: Vec<CollisionBox>,
    pub attached: Option<AttachedObject>,
}

impl PlanningScene {
    /// Builds a scene from `boxes`, adding the floor slab (top at z = 0) if
    /// the caller did not supply one.
    pub fn new(boxes: Vec<CollisionBox>) -> Result<Self, SceneError> {
        let mut scene = Self {
            boxes: Vec::new(),
            attached: None,
        };
        for b in boxes {
            scene.add_box(b)?;
        }
        if !scene.boxes.iter().any(|b| b.id == FLOOR_ID) {
            scene.add_box(CollisionBox::axis_aligned(
                FLOOR_ID,
                Vec3::new(0.0, 0.0, -0.05),
                Vec3::new(10.0, 10.0, 0.05),
            ))?;
        }
        Ok(scene)
    }

    pub fn add_box(&mut self, b: CollisionBox) -> Result<(), SceneError> {
        if b.half_extents.iter().any(|h| !(*h > 0.0)) {
            return Err(SceneError::BadExtents(b.id));
        }
        if self.boxes.iter().any(|o| o.id == b.id) {
            return Err(SceneError::DuplicateId(b.id));
        }
        self.boxes.push(b);
        Ok(())
    }

    pub fn boxes(&self) -> &[CollisionBox] {
        &self.boxes
    }

    /// Adds a chain of thin boxes along the camera's line of sight so plans
    /// avoid parking the arm between the camera and the workspace. The chain
    /// stops `standoff` meters short of `target`.
    pub fn add_occlusion_cone(
        &mut self,
        camera: Vec3,
        target: Vec3,
        segments: usize,
        half_width: f64,
        standoff: f64,
    ) -> Result<(), SceneError> {
        let dir = target - camera;
        let len = dir.norm() - standoff;
        if segments == 0 || len <= 0.0 {
            return Ok(());
        }
        let unit = dir / dir.norm();
        let rot = UnitQuat::rotation_between(&Vec3::x(), &unit).unwrap_or_else(|| {
            UnitQuat::from_axis_angle(&Vec3::z_axis(), std::f64::consts::PI)
        });
        let seg_len = len / segments as f64;
        for k in 0..segments {
            let center = camera + unit * (seg_len * (k as f64 + 0.5));
            self.add_box(CollisionBox::new(
                format!("occlusion_cone:{k}"),
                Pose::new(center, rot, FrameId::Base),
                Vec3::new(seg_len / 2.0, half_width, half_width),
            ))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollisionLink {
    Link(usize),
    Attached,
}

impl fmt::Display for CollisionLink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CollisionLink::Link(i) => write!(f, "link {i}"),
            CollisionLink::Attached => f.write_str("held object"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollisionReport {
    pub colliding: bool,
    pub first_pair: Option<(CollisionLink, String)>,
}

/// Exact sphere-versus-box test of every link sphere (and the held object's
/// bounding sphere) against every scene box.
pub fn check_state_collision(
    scene: &PlanningScene,
    chain: &KinematicChain,
    q: &JointVector,
) -> CollisionReport {
    let checker = Checker::new(scene, chain, 0.0, f64::INFINITY);
    match checker.first_collision(q) {
        Some((link, b)) => CollisionReport {
            colliding: true,
            first_pair: Some((link, scene.boxes[b].id.clone())),
        },
        None => CollisionReport {
            colliding: false,
            first_pair: None,
        },
    }
}

struct Checker<'a> {
    scene: &'a PlanningScene,
    chain: &'a KinematicChain,
    padding: f64,
    resolution: f64,
    box_inverse: Vec<Isometry3<f64>>,
    attached: Option<(Vec3, f64, Vec<bool>)>,
    levers: JointVector,
}

impl<'a> Checker<'a> {
    fn new(scene: &'a PlanningScene, chain: &'a KinematicChain, padding: f64, resolution: f64) -> Self {
        let attached = scene.attached.as_ref().map(|a| {
            let ignore = scene
                .boxes
                .iter()
                .map(|b| a.touch_ids.contains(&b.id))
                .collect();
            (a.shape.pose.position, a.shape.bounding_radius(), ignore)
        });
        let tool_extent = attached.as_ref().map_or(0.0, |(c, _, _)| c.norm());
        Self {
            scene,
            chain,
            padding,
            resolution,
            box_inverse: scene.boxes.iter().map(|b| b.pose.to_isometry().inverse()).collect(),
            attached,
            levers: chain.lever_arms(tool_extent),
        }
    }

    fn sphere_hits(&self, center: &Vec3, radius: f64, skip: Option<&[bool]>) -> Option<usize> {
        let r = radius + self.padding;
        for (i, inv) in self.box_inverse.iter().enumerate() {
            if skip.is_some_and(|s| s[i]) {
                continue;
            }
            let local = inv.transform_point(&(*center).into()).coords;
            if clamp_distance(&local, &self.scene.boxes[i].half_extents) < r {
                return Some(i);
            }
        }
        None
    }

    fn first_collision(&self, q: &JointVector) -> Option<(CollisionLink, usize)> {
        let frames = self.chain.link_frames(q);
        for (link, frame) in frames.iter().enumerate() {
            for s in &self.chain.link_spheres[link] {
                if let Some(b) = self.sphere_hits(&frame.transform_point(&s.center.into()).coords, s.radius, None) {
                    return Some((CollisionLink::Link(link), b));
                }
            }
        }
        if let Some((center, radius, skip)) = &self.attached {
            let tool = frames[DOF - 1] * self.chain.tool;
            let c = tool.transform_point(&(*center).into()).coords;
            if let Some(b) = self.sphere_hits(&c, *radius, Some(skip)) {
                return Some((CollisionLink::Attached, b));
            }
        }
        None
    }

    fn state_free(&self, q: &JointVector) -> bool {
        self.first_collision(q).is_none()
    }

    /// Number of interpolation steps for the straight edge `a -> b`.
    fn edge_steps(&self, a: &JointVector, b: &JointVector) -> usize {
        let delta = b - a;
        let mut steps = (delta.amax() / self.resolution).ceil();
        if self.padding > 0.0 {
            let sweep: f64 = delta.abs().dot(&self.levers);
            steps = steps.max((sweep / self.padding).ceil());
        }
        (steps as usize).max(1)
    }

    /// Checks interior and end samples; `a` itself is assumed checked.
    fn edge_free(&self, a: &JointVector, b: &JointVector) -> bool {
        let n = self.edge_steps(a, b);
        (1..=n).all(|k| self.state_free(&a.lerp(b, k as f64 / n as f64)))
    }
}

/// One timestamped waypoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub q: JointVector,
    pub time_from_start: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointTrajectory {
    pub points: Vec<TrajectoryPoint>,
}

impl JointTrajectory {
    pub fn duration(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.time_from_start)
    }

    pub fn final_q(&self) -> Option<JointVector> {
        self.points.last().map(|p| p.q)
    }

    /// Linear interpolation in joint space, clamped to the ends.
    pub fn sample(&self, t: f64) -> JointVector {
        let pts = &self.points;
        if t <= pts[0].time_from_start {
            return pts[0].q;
        }
        let last = pts[pts.len() - 1];
        if t >= last.time_from_start {
            return last.q;
        }
        let idx = pts.partition_point(|p| p.time_from_start <= t);
        let (a, b) = (&pts[idx - 1], &pts[idx]);
        let s = (t - a.time_from_start) / (b.time_from_start - a.time_from_start);
        a.q.lerp(&b.q, s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PlanFailure {
    StartInCollision,
    NoIkSolution,
    GoalInCollision,
    NoPath,
    Timeout,
}

impl fmt::Display for PlanFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlanFailure::StartInCollision => "start state is in collision",
            PlanFailure::NoIkSolution => "no inverse kinematics solution for the goal pose",
            PlanFailure::GoalInCollision => "goal pose is in collision",
            PlanFailure::NoPath => "no collision-free path found",
            PlanFailure::Timeout => "planning time budget exhausted",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanOutcome {
    Pending,
    Success(JointTrajectory),
    Failure(PlanFailure),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanOptions {
    pub seed: u64,
    pub ik: IkOptions,
    /// Independent IK runs tried before giving up on a collision-free goal.
    pub ik_attempts: usize,
    /// RRT extension step (rad, Euclidean in joint space).
    pub step: f64,
    /// Every n-th extension aims at the other tree's root.
    pub connect_every: usize,
    pub max_iterations: usize,
    /// Wall-clock budget in seconds.
    pub time_budget: f64,
    /// Largest per-joint change between edge samples (rad).
    pub edge_resolution: f64,
    /// Sphere inflation used while planning (m).
    pub padding: f64,
    pub shortcut_attempts: usize,
    /// Spacing of emitted trajectory samples (s).
    pub sample_dt: f64,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            ik: IkOptions::default(),
            ik_attempts: 4,
            step: 0.2,
            connect_every: 10,
            max_iterations: 20_000,
            time_budget: 5.0,
            edge_resolution: 0.05,
            padding: 0.01,
            shortcut_attempts: 100,
            sample_dt: 0.1,
        }
    }
}

pub fn plan_motion(
    scene: &PlanningScene,
    chain: &KinematicChain,
    start: &JointState,
    target: &Pose,
    opts: &PlanOptions,
) -> PlanOutcome {
    match plan_path(scene, chain, &start.q, target, opts) {
        Ok(path) => PlanOutcome::Success(time_parameterize_with(chain, &path, opts.sample_dt)),
        Err(reason) => PlanOutcome::Failure(reason),
    }
}

/// Untimed, smoothed joint-space path from `start` to a pose goal.
pub fn plan_path(
    scene: &PlanningScene,
    chain: &KinematicChain,
    start: &JointVector,
    target: &Pose,
    opts: &PlanOptions,
) -> Result<Vec<JointVector>, PlanFailure> {
    let deadline = Instant::now() + Duration::from_secs_f64(opts.time_budget.max(0.0));
    if check_state_collision(scene, chain, start).colliding {
        return Err(PlanFailure::StartInCollision);
    }
    let checker = Checker::new(scene, chain, opts.padding, opts.edge_resolution);
    let goal = find_goal(&checker, chain, start, target, opts)?;
    if goal == *start {
        return Ok(vec![*start]);
    }
    let path = if checker.edge_free(start, &goal) {
        vec![*start, goal]
    } else {
        rrt_connect(&checker, start, &goal, opts, deadline)?
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5348_4f52_5443_5554);
    Ok(shortcut(&checker, path, opts.shortcut_attempts, &mut rng))
}

fn find_goal(
    checker: &Checker,
    chain: &KinematicChain,
    start: &JointVector,
    target: &Pose,
    opts: &PlanOptions,
) -> Result<JointVector, PlanFailure> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x4b49_4e45_4d41_5449);
    let mut any_solution = false;
    for attempt in 0..opts.ik_attempts.max(1) {
        let seed = if attempt == 0 {
            *start
        } else {
            chain.random_configuration(&mut rng)
        };
        let ik = IkOptions {
            seed: opts.ik.seed.wrapping_add(opts.seed).wrapping_add(attempt as u64),
            ..opts.ik
        };
        match chain.solve_ik(target, &seed, &ik) {
            IkResult::Solved { q, .. } => {
                any_solution = true;
                // Already there: the start was checked exactly above.
                if q == *start || checker.state_free(&q) {
                    return Ok(q);
                }
            }
            IkResult::NoSolution(crate::arm::IkFailure::Unreachable) => break,
            IkResult::NoSolution(_) => {}
        }
    }
    Err(if any_solution {
        PlanFailure::GoalInCollision
    } else {
        PlanFailure::NoIkSolution
    })
}

struct Tree {
    nodes: Vec<JointVector>,
    parents: Vec<usize>,
}

enum Extend {
    Trapped,
    Advanced(usize),
    Reached(usize),
}

impl Tree {
    fn new(root: JointVector) -> Self {
        Self {
            nodes: vec![root],
            parents: vec![usize::MAX],
        }
    }

    fn nearest(&self, q: &JointVector) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, n) in self.nodes.iter().enumerate() {
            let d = (n - q).norm_squared();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    fn extend(&mut self, target: &JointVector, step: f64, checker: &Checker) -> Extend {
        let near = self.nearest(target);
        let from = self.nodes[near];
        let delta = target - from;
        let dist = delta.norm();
        let (new, reached) = if dist <= step {
            (*target, true)
        } else {
            (from + delta * (step / dist), false)
        };
        if !checker.edge_free(&from, &new) {
            return Extend::Trapped;
        }
        self.nodes.push(new);
        self.parents.push(near);
        let idx = self.nodes.len() - 1;
        if reached {
            Extend::Reached(idx)
        } else {
            Extend::Advanced(idx)
        }
    }

    fn connect(&mut self, target: &JointVector, step: f64, checker: &Checker) -> Extend {
        loop {
            match self.extend(target, step, checker) {
                Extend::Advanced(_) => continue,
                other => return other,
            }
        }
    }

    /// Nodes from the root down to `idx`.
    fn branch(&self, mut idx: usize) -> Vec<JointVector> {
        let mut out = Vec::new();
        while idx != usize::MAX {
            out.push(self.nodes[idx]);
            idx = self.parents[idx];
        }
        out.reverse();
        out
    }
}

fn rrt_connect(
    checker: &Checker,
    start: &JointVector,
    goal: &JointVector,
    opts: &PlanOptions,
    deadline: Instant,
) -> Result<Vec<JointVector>, PlanFailure> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let lower = checker.chain.lower_limits();
    let upper = checker.chain.upper_limits();
    let mut a = Tree::new(*start);
    let mut b = Tree::new(*goal);
    let mut a_is_start = true;
    let connect_every = opts.connect_every.max(1);
    for iteration in 1..=opts.max_iterations {
        if Instant::now() >= deadline {
            return Err(PlanFailure::Timeout);
        }
        let sample = if iteration % connect_every == 0 {
            b.nodes[0]
        } else {
            JointVector::from_fn(|i, _| rng.gen_range(lower[i]..=upper[i]))
        };
        let new = match a.extend(&sample, opts.step, checker) {
            Extend::Trapped => None,
            Extend::Advanced(i) | Extend::Reached(i) => Some(i),
        };
        if let Some(i) = new {
            let q = a.nodes[i];
            if let Extend::Reached(j) = b.connect(&q, opts.step, checker) {
                let mut from_a = a.branch(i);
                let mut from_b = b.branch(j);
                from_b.pop();
                from_b.reverse();
                from_a.extend(from_b);
                if !a_is_start {
                    from_a.reverse();
                }
                return Ok(from_a);
            }
        }
        std::mem::swap(&mut a, &mut b);
        a_is_start = !a_is_start;
    }
    Err(PlanFailure::NoPath)
}

fn shortcut(
    checker: &Checker,
    mut path: Vec<JointVector>,
    attempts: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<JointVector> {
    for _ in 0..attempts {
        if path.len() < 3 {
            break;
        }
        let i = rng.gen_range(0..path.len() - 2);
        let j = rng.gen_range(i + 2..path.len());
        if checker.edge_free(&path[i], &path[j]) {
            path.drain(i + 1..j);
        }
    }
    path
}

/// Shortcut smoothing exposed for callers that already have a valid path.
pub fn shortcut_path(
    scene: &PlanningScene,
    chain: &KinematicChain,
    path: Vec<JointVector>,
    opts: &PlanOptions,
) -> Vec<JointVector> {
    let checker = Checker::new(scene, chain, opts.padding, opts.edge_resolution);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5348_4f52_5443_5554);
    shortcut(&checker, path, opts.shortcut_attempts, &mut rng)
}

/// Sum of Euclidean joint-space segment lengths.
pub fn path_length(path: &[JointVector]) -> f64 {
    path.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Rest-to-rest trapezoidal time on a normalized segment `s ∈ [0, 1]`.
#[derive(Debug, Clone, Copy)]
struct Profile {
    vel: f64,
    acc: f64,
    t_acc: f64,
    duration: f64,
}

impl Profile {
    fn new(vel: f64, acc: f64) -> Self {
        if vel * vel / acc <= 1.0 {
            Self {
                vel,
                acc,
                t_acc: vel / acc,
                duration: 1.0 / vel + vel / acc,
            }
        } else {
            let t_acc = (1.0 / acc).sqrt();
            Self {
                vel: acc * t_acc,
                acc,
                t_acc,
                duration: 2.0 * t_acc,
            }
        }
    }

    fn position(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.duration);
        let t_dec = self.duration - self.t_acc;
        if t < self.t_acc {
            0.5 * self.acc * t * t
        } else if t <= t_dec {
            0.5 * self.acc * self.t_acc * self.t_acc + self.vel * (t - self.t_acc)
        } else {
            let r = self.duration - t;
            1.0 - 0.5 * self.acc * r * r
        }
    }
}

/// Minimum rest-to-rest duration of a straight segment given per-joint
/// velocity and acceleration limits. Zero for a zero-length segment.
pub fn segment_duration(chain: &KinematicChain, a: &JointVector, b: &JointVector) -> f64 {
    segment_profile(chain, a, b).map_or(0.0, |p| p.duration)
}

fn segment_profile(chain: &KinematicChain, a: &JointVector, b: &JointVector) -> Option<Profile> {
    let mut vel = f64::INFINITY;
    let mut acc = f64::INFINITY;
    for (i, joint) in chain.joints.iter().enumerate() {
        let d = (b[i] - a[i]).abs();
        if d > 0.0 {
            vel = vel.min(joint.max_velocity / d);
            acc = acc.min(joint.max_acceleration / d);
        }
    }
    vel.is_finite().then(|| Profile::new(vel, acc))
}

pub fn time_parameterize(chain: &KinematicChain, path: &[JointVector]) -> JointTrajectory {
    time_parameterize_with(chain, path, PlanOptions::default().sample_dt)
}

/// Stops at every waypoint; each segment follows a synchronized trapezoidal
/// profile and is sampled every `sample_dt` seconds or finer.
pub fn time_parameterize_with(
    chain: &KinematicChain,
    path: &[JointVector],
    sample_dt: f64,
) -> JointTrajectory {
    assert!(!path.is_empty(), "cannot time an empty path");
    let mut points = vec![TrajectoryPoint {
        q: path[0],
        time_from_start: 0.0,
    }];
    let mut t0 = 0.0;
    for w in path.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let Some(profile) = segment_profile(chain, a, b) else {
            continue;
        };
        let n = ((profile.duration / sample_dt).ceil() as usize).max(1);
        for k in 1..=n {
            let t = profile.duration * k as f64 / n as f64;
            let q = if k == n { *b } else { a.lerp(b, profile.position(t)) };
            points.push(TrajectoryPoint {
                q,
                time_from_start: t0 + t,
            });
        }
        t0 += profile.duration;
    }
    JointTrajectory { points }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrajectoryViolation {
    Empty,
    Timing { index: usize },
    JointLimit { index: usize, joint: usize },
    Velocity { index: usize, joint: usize },
    Collision { segment: usize, link: CollisionLink, object: String },
}

impl fmt::Display for TrajectoryViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrajectoryViolation::Empty => f.write_str("trajectory has no points"),
            TrajectoryViolation::Timing { index } => {
                write!(f, "point {index} breaks the start-at-zero, strictly increasing time rule")
            }
            TrajectoryViolation::JointLimit { index, joint } => {
                write!(f, "point {index} puts joint {joint} outside its limits")
            }
            TrajectoryViolation::Velocity { index, joint } => {
                write!(f, "segment ending at point {index} exceeds joint {joint} velocity limit")
            }
            TrajectoryViolation::Collision { segment, link, object } => {
                write!(f, "segment {segment}: {link} collides with `{object}`")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Validation {
    pub valid: bool,
    pub violation: Option<TrajectoryViolation>,
}

/// Largest per-joint spacing used when re-checking trajectories.
pub const VALIDATION_RESOLUTION: f64 = 1e-3;

/// Re-checks a trajectory with exact geometry at fine resolution: timing,
/// joint limits, velocity limits and collisions along every segment.
pub fn validate_trajectory(
    scene: &PlanningScene,
    chain: &KinematicChain,
    traj: &JointTrajectory,
) -> Validation {
    match find_violation(scene, chain, traj) {
        Some(v) => Validation {
            valid: false,
            violation: Some(v),
        },
        None => Validation {
            valid: true,
            violation: None,
        },
    }
}

fn find_violation(
    scene: &PlanningScene,
    chain: &KinematicChain,
    traj: &JointTrajectory,
) -> Option<TrajectoryViolation> {
    let pts = &traj.points;
    if pts.is_empty() {
        return Some(TrajectoryViolation::Empty);
    }
    if pts[0].time_from_start != 0.0 {
        return Some(TrajectoryViolation::Timing { index: 0 });
    }
    for (index, p) in pts.iter().enumerate() {
        for (joint, j) in chain.joints.iter().enumerate() {
            if p.q[joint] < j.limits[0] - 1e-9 || p.q[joint] > j.limits[1] + 1e-9 {
                return Some(TrajectoryViolation::JointLimit { index, joint });
            }
        }
    }
    let checker = Checker::new(scene, chain, 0.0, VALIDATION_RESOLUTION);
    if let Some((link, b)) = checker.first_collision(&pts[0].q) {
        return Some(TrajectoryViolation::Collision {
            segment: 0,
            link,
            object: scene.boxes[b].id.clone(),
        });
    }
    for (segment, w) in pts.windows(2).enumerate() {
        let dt = w[1].time_from_start - w[0].time_from_start;
        if !(dt > 0.0) {
            return Some(TrajectoryViolation::Timing { index: segment + 1 });
        }
        for (joint, j) in chain.joints.iter().enumerate() {
            if (w[1].q[joint] - w[0].q[joint]).abs() > j.max_velocity * dt + 1e-6 {
                return Some(TrajectoryViolation::Velocity {
                    index: segment + 1,
                    joint,
                });
            }
        }
        let n = checker.edge_steps(&w[0].q, &w[1].q);
        for k in 1..=n {
            let q = w[0].q.lerp(&w[1].q, k as f64 / n as f64);
            if let Some((link, b)) = checker.first_collision(&q) {
                return Some(TrajectoryViolation::Collision {
                    segment,
                    link,
                    object: scene.boxes[b].id.clone(),
                });
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> CollisionBox {
        CollisionBox::axis_aligned("desk", Vec3::new(0.85, 0.0, 0.275), Vec3::new(0.3, 0.6, 0.275))
    }

    fn over_desk() -> JointVector {
        JointVector::from_column_slice(&[0.0, -0.9, 0.0, 1.2, 0.0, -0.3, 0.0])
    }

    #[test]
    fn floor_is_always_present() {
        let scene = PlanningScene::new(vec![desk()]).unwrap();
        let floor = scene.boxes().iter().find(|b| b.id == FLOOR_ID).unwrap();
        assert!((floor.top_z() - 0.0).abs() < 1e-12);
    }

    #[test]
    fn scene_rejects_duplicates_and_flat_boxes() {
        assert_eq!(
            PlanningScene::new(vec![desk(), desk()]),
            Err(SceneError::DuplicateId("desk".into()))
        );
        let flat = CollisionBox::axis_aligned("f", Vec3::zeros(), Vec3::new(1.0, 0.0, 1.0));
        assert_eq!(PlanningScene::new(vec![flat]), Err(SceneError::BadExtents("f".into())));
    }

    #[test]
    fn box_distance_and_containment() {
        let b = desk();
        assert!(b.contains(&Vec3::new(0.85, 0.0, 0.55)));
        assert_eq!(b.distance_to(&Vec3::new(0.85, 0.0, 0.5)), 0.0);
        assert!((b.distance_to(&Vec3::new(0.85, 0.0, 0.65)) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn raised_arm_clears_the_desk() {
        let chain = KinematicChain::canonical();
        let scene = PlanningScene::new(vec![desk()]).unwrap();
        // Upper arm pitched up, forearm and gripper level over the desk.
        let q = over_desk();
        let report = check_state_collision(&scene, &chain, &q);
        assert!(!report.colliding, "{report:?}");
    }

    #[test]
    fn sphere_just_inside_a_face_collides() {
        let b = CollisionBox::axis_aligned("b", Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.2, 0.2, 0.2));
        let scene = PlanningScene::new(vec![b]).unwrap();
        let chain = KinematicChain::canonical();
        let checker = Checker::new(&scene, &chain, 0.0, 0.05);
        assert_eq!(checker.sphere_hits(&Vec3::new(0.19, 0.0, 1.0), 0.05, None), Some(0));
        assert_eq!(checker.sphere_hits(&Vec3::new(0.26, 0.0, 1.0), 0.05, None), None);
    }

    #[test]
    fn attached_object_ignores_its_support() {
        let chain = KinematicChain::canonical();
        let mut scene = PlanningScene::new(vec![desk()]).unwrap();
        let q = over_desk();
        let tool_z = chain.ee_isometry(&q).translation.vector.z;
        // A bar sticking out of the tool frame along -z (straight down,
        // since the gripper is level) into the desk.
        let drop = tool_z - 0.5;
        let shape = CollisionBox::axis_aligned("bar", Vec3::new(0.0, 0.0, -drop / 2.0), Vec3::new(0.01, 0.01, drop / 2.0));
        scene.attached = Some(AttachedObject {
            shape: shape.clone(),
            touch_ids: vec![],
        });
        let report = check_state_collision(&scene, &chain, &q);
        assert_eq!(report.first_pair, Some((CollisionLink::Attached, "desk".into())));
        scene.attached = Some(AttachedObject {
            shape,
            touch_ids: vec!["desk".into()],
        });
        assert!(!check_state_collision(&scene, &chain, &q).colliding);
    }

    #[test]
    fn single_waypoint_has_zero_duration() {
        let chain = KinematicChain::canonical();
        let traj = time_parameterize(&chain, &[JointVector::zeros()]);
        assert_eq!(traj.points.len(), 1);
        assert_eq!(traj.duration(), 0.0);
        let traj = time_parameterize(&chain, &[JointVector::zeros(), JointVector::zeros()]);
        assert_eq!(traj.duration(), 0.0);
    }

    #[test]
    fn one_radian_on_one_joint_takes_trapezoid_time() {
        // v²/a = 0.78125 < 1, so the profile cruises: 1/1.25 + 1.25/2.
        let chain = KinematicChain::canonical();
        let a = JointVector::zeros();
        let mut b = a;
        b[2] = 1.0;
        let traj = time_parameterize(&chain, &[a, b]);
        assert!((traj.duration() - 1.425).abs() < 1e-12);
        assert_eq!(traj.final_q(), Some(b));
    }

    #[test]
    fn short_moves_use_triangular_profile() {
        let chain = KinematicChain::canonical();
        let a = JointVector::zeros();
        let mut b = a;
        b[3] = 0.5;
        // 0.5 < v²/a: t = 2·sqrt(d/a).
        assert!((segment_duration(&chain, &a, &b) - 2.0 * (0.5f64 / 2.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn scaling_the_move_never_shortens_it() {
        let chain = KinematicChain::canonical();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let a = chain.random_configuration(&mut rng) * 0.4;
            let b = chain.random_configuration(&mut rng) * 0.4;
            let b2 = a + (b - a) * 2.0;
            assert!(segment_duration(&chain, &a, &b2) >= segment_duration(&chain, &a, &b));
        }
    }

    #[test]
    fn sampled_profile_respects_velocity_bound() {
        let chain = KinematicChain::canonical();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let path: Vec<_> = (0..5).map(|_| chain.random_configuration(&mut rng)).collect();
        let traj = time_parameterize(&chain, &path);
        for w in traj.points.windows(2) {
            let dt = w[1].time_from_start - w[0].time_from_start;
            assert!(dt > 0.0);
            for j in 0..DOF {
                assert!((w[1].q[j] - w[0].q[j]).abs() <= chain.joints[j].max_velocity * dt + 1e-6);
            }
        }
    }

    #[test]
    fn trajectory_sampling_interpolates_linearly() {
        let a = JointVector::zeros();
        let b = JointVector::repeat(1.0);
        let traj = JointTrajectory {
            points: vec![
                TrajectoryPoint { q: a, time_from_start: 0.0 },
                TrajectoryPoint { q: b, time_from_start: 2.0 },
            ],
        };
        assert_eq!(traj.sample(-1.0), a);
        assert_eq!(traj.sample(1.0), JointVector::repeat(0.5));
        assert_eq!(traj.sample(5.0), b);
    }

    #[test]
    fn validation_flags_collisions_and_accepts_still_trajectories() {
        let chain = KinematicChain::canonical();
        let scene = PlanningScene::new(vec![desk()]).unwrap();
        let free = over_desk();
        let still = time_parameterize(&chain, &[free]);
        assert!(validate_trajectory(&scene, &chain, &still).valid);

        // Arm pointing straight down into the desk.
        let down = JointVector::from_column_slice(&[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let traj = time_parameterize(&chain, &[free, down, free]);
        let v = validate_trajectory(&scene, &chain, &traj);
        assert!(!v.valid);
        assert!(matches!(v.violation, Some(TrajectoryViolation::Collision { .. })));
    }

    #[test]
    fn validation_flags_bad_timing_and_speed() {
        let chain = KinematicChain::canonical();
        let scene = PlanningScene::new(vec![]).unwrap();
        let q0 = over_desk();
        let mut q1 = q0;
        q1[0] = 1.0;
        let fast = JointTrajectory {
            points: vec![
                TrajectoryPoint { q: q0, time_from_start: 0.0 },
                TrajectoryPoint { q: q1, time_from_start: 0.1 },
            ],
        };
        assert_eq!(
            validate_trajectory(&scene, &chain, &fast).violation,
            Some(TrajectoryViolation::Velocity { index: 1, joint: 0 })
        );
        let late = JointTrajectory {
            points: vec![TrajectoryPoint { q: q0, time_from_start: 0.5 }],
        };
        assert_eq!(
            validate_trajectory(&scene, &chain, &late).violation,
            Some(TrajectoryViolation::Timing { index: 0 })
        );
    }

    #[test]
    fn occlusion_cone_adds_boxes_along_sight_line() {
        let mut scene = PlanningScene::new(vec![]).unwrap();
        scene
            .add_occlusion_cone(Vec3::new(0.1, 0.0, 1.2), Vec3::new(0.8, 0.0, 0.6), 4, 0.02, 0.15)
            .unwrap();
        let cones: Vec<_> = scene.boxes().iter().filter(|b| b.id.starts_with("occlusion_cone")).collect();
        assert_eq!(cones.len(), 4);
        // Midpoint of the sight line is inside one of the boxes.
        let mid = Vec3::new(0.1, 0.0, 1.2).lerp(&Vec3::new(0.8, 0.0, 0.6), 0.4);
        assert!(cones.iter().any(|b| b.contains(&mid)));
    }
}
