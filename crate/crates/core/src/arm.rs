//! Serial 7-DOF arm: description loading, forward kinematics, geometric
//! Jacobian and damped-least-squares inverse kinematics.

use std::fmt;
use std::path::Path;

use nalgebra::{
    Isometry3, Matrix6, SMatrix, SVector, Translation3, Unit, Vector6,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::doc::{from_toml, PoseDoc, SchemaError};
use crate::frames::{rotation_angle_between, FrameId, Pose, UnitQuat, Vec3};

pub const DOF: usize = 7;

pub type JointVector = SVector<f64, DOF>;
pub type Jacobian = SMatrix<f64, 6, DOF>;

const CANONICAL_DESCRIPTION: &str = include_str!("../../../assets/robot.toml");

/// Synchronized robot state: arm joint angles and gripper opening.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointState {
    pub q: JointVector,
    pub gripper_aperture: f64,
}

impl JointState {
    pub fn new(q: JointVector, gripper_aperture: f64) -> Self {
        Self {
            q,
            gripper_aperture,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionSphere {
    pub center: Vec3,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub axis: Unit<Vec3>,
    /// Fixed transform from the previous link frame.
    pub origin: Isometry3<f64>,
    pub limits: [f64; 2],
    pub max_velocity: f64,
    pub max_acceleration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GripperSpec {
    pub aperture_max: f64,
    /// Length of each fingertip contact segment along the approach axis.
    pub finger_length: f64,
    /// Newtons; recorded when an object is pinched.
    pub force_limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    pub name: String,
    pub base: Isometry3<f64>,
    pub joints: Vec<Joint>,
    /// Spheres per link, in the frame of the link following joint `i`.
    pub link_spheres: Vec<Vec<CollisionSphere>>,
    /// Tool (fingertip center) relative to the last link. The tool frame's x
    /// axis is the approach direction and y the closing axis.
    pub tool: Isometry3<f64>,
    pub gripper: GripperSpec,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DescriptionDoc {
    name: String,
    #[serde(default)]
    base: PoseDoc,
    tool: PoseDoc,
    gripper: GripperSpec,
    joints: Vec<JointDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointDoc {
    name: String,
    axis: [f64; 3],
    origin: PoseDoc,
    limits: [f64; 2],
    max_velocity: f64,
    max_acceleration: f64,
    spheres: Vec<SphereDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SphereDoc {
    center: [f64; 3],
    radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FkResult {
    pub link_frames: [Isometry3<f64>; DOF],
    pub ee: Isometry3<f64>,
}

impl FkResult {
    pub fn link_poses(&self) -> Vec<Pose> {
        self.link_frames
            .iter()
            .map(|t| Pose::from_isometry(t, FrameId::Base))
            .collect()
    }

    pub fn ee_pose(&self) -> Pose {
        Pose::from_isometry(&self.ee, FrameId::Base)
    }
}

impl KinematicChain {
    /// The arm shipped in `assets/robot.toml`.
    pub fn canonical() -> Self {
        Self::from_toml_str(CANONICAL_DESCRIPTION).expect("bundled robot description is valid")
    }

    pub fn load(path: &Path) -> Result<Self, SchemaError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SchemaError::new(path.display().to_string(), e.to_string()))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SchemaError> {
        let doc: DescriptionDoc = from_toml(text)?;
        if doc.joints.len() != DOF {
            return Err(SchemaError::new(
                "joints",
                format!("expected {DOF} joints, found {}", doc.joints.len()),
            ));
        }
        let mut joints = Vec::with_capacity(DOF);
        let mut link_spheres = Vec::with_capacity(DOF);
        for (i, j) in doc.joints.iter().enumerate() {
            let path = format!("joints[{i}]");
            let axis = Vec3::from(j.axis);
            if (axis.norm() - 1.0).abs() > 1e-9 {
                return Err(SchemaError::new(format!("{path}.axis"), "axis must be unit length"));
            }
            if !(j.limits[0] < j.limits[1]) {
                return Err(SchemaError::new(format!("{path}.limits"), "lower limit must be below upper"));
            }
            if !(j.max_velocity > 0.0) || !(j.max_acceleration > 0.0) {
                return Err(SchemaError::new(path, "velocity and acceleration limits must be positive"));
            }
            if j.spheres.is_empty() {
                return Err(SchemaError::new(format!("{path}.spheres"), "every link needs a collision sphere"));
            }
            let mut spheres = Vec::with_capacity(j.spheres.len());
            for (k, s) in j.spheres.iter().enumerate() {
                if !(s.radius > 0.0) {
                    return Err(SchemaError::new(format!("{path}.spheres[{k}].radius"), "radius must be positive"));
                }
                spheres.push(CollisionSphere {
                    center: Vec3::from(s.center),
                    radius: s.radius,
                });
            }
            joints.push(Joint {
                name: j.name.clone(),
                axis: Unit::new_unchecked(axis),
                origin: j.origin.to_isometry(&format!("{path}.origin"))?,
                limits: j.limits,
                max_velocity: j.max_velocity,
                max_acceleration: j.max_acceleration,
            });
            link_spheres.push(spheres);
        }
        if !(doc.gripper.aperture_max > 0.0) {
            return Err(SchemaError::new("gripper.aperture_max", "must be positive"));
        }
        Ok(Self {
            name: doc.name,
            base: doc.base.to_isometry("base")?,
            joints,
            link_spheres,
            tool: doc.tool.to_isometry("tool")?,
            gripper: doc.gripper,
        })
    }

    pub fn base_pose(&self) -> Pose {
        Pose::from_isometry(&self.base, FrameId::Base)
    }

    pub fn link_frames(&self, q: &JointVector) -> [Isometry3<f64>; DOF] {
        let mut frames = [Isometry3::identity(); DOF];
        let mut t = self.base;
        for (i, joint) in self.joints.iter().enumerate() {
            let rot = UnitQuat::from_axis_angle(&joint.axis, q[i]);
            t = t * joint.origin * Isometry3::from_parts(Translation3::identity(), rot);
            frames[i] = t;
        }
        frames
    }

    pub fn forward_kinematics(&self, q: &JointVector) -> FkResult {
        let link_frames = self.link_frames(q);
        FkResult {
            ee: link_frames[DOF - 1] * self.tool,
            link_frames,
        }
    }

    pub fn ee_isometry(&self, q: &JointVector) -> Isometry3<f64> {
        self.link_frames(q)[DOF - 1] * self.tool
    }

    /// Geometric Jacobian at the tool point; rows are linear then angular
    /// velocity in the base frame.
    pub fn jacobian(&self, q: &JointVector) -> Jacobian {
        let frames = self.link_frames(q);
        let ee = (frames[DOF - 1] * self.tool).translation.vector;
        let mut jac = Jacobian::zeros();
        for (i, frame) in frames.iter().enumerate() {
            let axis = frame.rotation * self.joints[i].axis.into_inner();
            let lin = axis.cross(&(ee - frame.translation.vector));
            jac.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
            jac.fixed_view_mut::<3, 1>(3, i).copy_from(&axis);
        }
        jac
    }

    pub fn lower_limits(&self) -> JointVector {
        JointVector::from_fn(|i, _| self.joints[i].limits[0])
    }

    pub fn upper_limits(&self) -> JointVector {
        JointVector::from_fn(|i, _| self.joints[i].limits[1])
    }

    pub fn within_limits(&self, q: &JointVector) -> bool {
        self.joints
            .iter()
            .zip(q.iter())
            .all(|(j, v)| *v >= j.limits[0] && *v <= j.limits[1])
    }

    pub fn clamp(&self, q: &JointVector) -> JointVector {
        JointVector::from_fn(|i, _| q[i].clamp(self.joints[i].limits[0], self.joints[i].limits[1]))
    }

    pub fn random_configuration(&self, rng: &mut impl Rng) -> JointVector {
        JointVector::from_fn(|i, _| {
            let [lo, hi] = self.joints[i].limits;
            rng.gen_range(lo..=hi)
        })
    }

    /// Center of the first joint, the point all reach is measured from.
    pub fn shoulder(&self) -> Vec3 {
        (self.base * self.joints[0].origin).translation.vector
    }

    /// Sum of all link lengths from the shoulder to the tool point.
    pub fn max_reach(&self) -> f64 {
        self.joints[1..]
            .iter()
            .map(|j| j.origin.translation.vector.norm())
            .sum::<f64>()
            + self.tool.translation.vector.norm()
    }

    /// Upper bound, per joint, on how far any point of the arm downstream of
    /// that joint (collision spheres, tool, and an extra `tool_extent` around
    /// the tool point) can be from the joint's center.
    pub fn lever_arms(&self, tool_extent: f64) -> JointVector {
        let mut out = JointVector::zeros();
        for i in 0..DOF {
            let mut chain_len = 0.0;
            let mut best: f64 = 0.0;
            for k in i..DOF {
                if k > i {
                    chain_len += self.joints[k].origin.translation.vector.norm();
                }
                for s in &self.link_spheres[k] {
                    best = best.max(chain_len + s.center.norm());
                }
            }
            best = best.max(chain_len + self.tool.translation.vector.norm() + tool_extent);
            out[i] = best;
        }
        out
    }

    pub fn solve_ik(&self, target: &Pose, seed: &JointVector, opts: &IkOptions) -> IkResult {
        let target_iso = target.to_isometry();
        if (target.position - self.shoulder()).norm() > self.max_reach() {
            return IkResult::NoSolution(IkFailure::Unreachable);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        for attempt in 0..=opts.restarts {
            let start = if attempt == 0 {
                self.clamp(seed)
            } else {
                self.random_configuration(&mut rng)
            };
            if let Some((q, iterations)) = self.dls_descent(&target_iso, start, opts) {
                return IkResult::Solved {
                    q,
                    iterations,
                    restarts: attempt,
                };
            }
        }
        IkResult::NoSolution(IkFailure::IterationLimit)
    }

    fn dls_descent(
        &self,
        target: &Isometry3<f64>,
        mut q: JointVector,
        opts: &IkOptions,
    ) -> Option<(JointVector, usize)> {
        let damping_sq = opts.damping * opts.damping;
        for iteration in 0..=opts.max_iters {
            let ee = self.ee_isometry(&q);
            let dp = target.translation.vector - ee.translation.vector;
            if dp.norm() <= opts.pos_tol
                && rotation_angle_between(&target.rotation, &ee.rotation) <= opts.ori_tol
            {
                return Some((q, iteration));
            }
            if iteration == opts.max_iters {
                break;
            }
            let dr = (target.rotation * ee.rotation.inverse()).scaled_axis();
            let err = Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z);
            let jac = self.jacobian(&q);
            let jjt = jac * jac.transpose() + Matrix6::identity() * damping_sq;
            let y = jjt.cholesky()?.solve(&err);
            let mut dq = jac.transpose() * y;
            let largest = dq.amax();
            if largest > opts.max_step {
                dq *= opts.max_step / largest;
            }
            q = self.clamp(&(q + dq));
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IkOptions {
    pub max_iters: usize,
    pub pos_tol: f64,
    pub ori_tol: f64,
    pub damping: f64,
    pub restarts: usize,
    /// Largest per-joint change in one iteration (rad).
    pub max_step: f64,
    pub seed: u64,
}

impl Default for IkOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            pos_tol: 1e-3,
            ori_tol: 1e-2,
            damping: 0.05,
            restarts: 8,
            max_step: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IkFailure {
    Unreachable,
    IterationLimit,
}

impl fmt::Display for IkFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IkFailure::Unreachable => f.write_str("target is beyond the arm's reach"),
            IkFailure::IterationLimit => f.write_str("no converged solution within the iteration limit"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IkResult {
    Solved {
        q: JointVector,
        iterations: usize,
        restarts: usize,
    },
    NoSolution(IkFailure),
}

impl IkResult {
    pub fn solution(&self) -> Option<&JointVector> {
        match self {
            IkResult::Solved { q, .. } => Some(q),
            IkResult::NoSolution(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn canonical_chain_matches_reference_dimensions() {
        let chain = KinematicChain::canonical();
        assert_eq!(chain.joints.len(), DOF);
        assert_eq!(chain.shoulder(), Vec3::new(0.12, 0.0, 0.75));
        let offsets: Vec<f64> = chain.joints[1..]
            .iter()
            .map(|j| j.origin.translation.vector.x)
            .collect();
        assert_eq!(offsets, vec![0.117, 0.219, 0.133, 0.197, 0.1245, 0.1385]);
        // Last link offset 0.1664 plus the 0.15 tool offset.
        assert!((chain.tool.translation.vector.x - (0.1664 + 0.15)).abs() < 1e-12);
        let axes: Vec<[f64; 3]> = chain.joints.iter().map(|j| (*j.axis).into()).collect();
        let (x, y, z) = ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]);
        assert_eq!(axes, vec![z, y, x, y, x, y, x]);
        for j in &chain.joints {
            assert_eq!(j.max_velocity, 1.25);
            assert_eq!(j.max_acceleration, 2.0);
            assert!(j.limits[1] >= 1.6 && j.limits[1] <= PI);
            assert_eq!(j.limits[0], -j.limits[1]);
        }
    }

    #[test]
    fn zero_configuration_is_the_fixed_transform_product() {
        let chain = KinematicChain::canonical();
        let fk = chain.forward_kinematics(&JointVector::zeros());
        let mut t = chain.base;
        for j in &chain.joints {
            t *= j.origin;
        }
        t *= chain.tool;
        assert!((fk.ee.translation.vector - t.translation.vector).norm() < 1e-12);
        let reach = 0.12 + 0.117 + 0.219 + 0.133 + 0.197 + 0.1245 + 0.1385 + 0.1664 + 0.15;
        assert!((fk.ee.translation.vector - Vec3::new(reach, 0.0, 0.75)).norm() < 1e-12);
    }

    #[test]
    fn half_turn_of_the_pan_joint_mirrors_about_its_axis() {
        let chain = KinematicChain::canonical();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shoulder = chain.shoulder();
        for _ in 0..10 {
            let mut q = chain.random_configuration(&mut rng);
            q[0] = 0.0;
            let a = chain.ee_isometry(&q).translation.vector - shoulder;
            q[0] = PI;
            let b = chain.ee_isometry(&q).translation.vector - shoulder;
            assert!((a.x + b.x).abs() < 1e-12);
            assert!((a.y + b.y).abs() < 1e-12);
            assert!((a.z - b.z).abs() < 1e-12);
        }
    }

    #[test]
    fn fk_is_bitwise_deterministic() {
        let chain = KinematicChain::canonical();
        let q = JointVector::from_fn(|i, _| 0.1 * i as f64 - 0.3);
        assert_eq!(chain.forward_kinematics(&q), chain.forward_kinematics(&q));
    }

    #[test]
    fn jacobian_columns_have_axis_angular_parts() {
        let chain = KinematicChain::canonical();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = chain.random_configuration(&mut rng);
        let frames = chain.link_frames(&q);
        let jac = chain.jacobian(&q);
        for i in 0..DOF {
            let axis = frames[i].rotation * chain.joints[i].axis.into_inner();
            let col = jac.fixed_view::<3, 1>(3, i).into_owned();
            assert!((col - axis).norm() < 1e-15);
        }
    }

    #[test]
    fn roll_joint_through_tool_point_has_no_linear_part() {
        // The last joint rolls about the approach axis, which passes through
        // the tool point.
        let chain = KinematicChain::canonical();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = chain.random_configuration(&mut rng);
        let jac = chain.jacobian(&q);
        assert!(jac.fixed_view::<3, 1>(0, DOF - 1).norm() < 1e-12);
    }

    #[test]
    fn ik_at_seed_converges_in_zero_iterations() {
        let chain = KinematicChain::canonical();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let seed = chain.random_configuration(&mut rng);
        let target = chain.forward_kinematics(&seed).ee_pose();
        match chain.solve_ik(&target, &seed, &IkOptions::default()) {
            IkResult::Solved { q, iterations, restarts } => {
                assert_eq!(q, seed);
                assert_eq!(iterations, 0);
                assert_eq!(restarts, 0);
            }
            other => panic!("expected a solution, got {other:?}"),
        }
    }

    #[test]
    fn ik_rejects_targets_beyond_reach() {
        let chain = KinematicChain::canonical();
        let far = chain.shoulder() + Vec3::new(chain.max_reach() + 0.01, 0.0, 0.0);
        let target = Pose::new(far, UnitQuat::identity(), FrameId::Base);
        assert_eq!(
            chain.solve_ik(&target, &JointVector::zeros(), &IkOptions::default()),
            IkResult::NoSolution(IkFailure::Unreachable)
        );
    }

    #[test]
    fn ik_solutions_respect_limits_and_tolerance() {
        let chain = KinematicChain::canonical();
        let opts = IkOptions::default();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut solved = 0;
        for _ in 0..40 {
            let goal = chain.random_configuration(&mut rng);
            let seed = chain.random_configuration(&mut rng);
            let target = chain.forward_kinematics(&goal).ee_pose();
            if let IkResult::Solved { q, .. } = chain.solve_ik(&target, &seed, &opts) {
                solved += 1;
                assert!(chain.within_limits(&q));
                let ee = chain.ee_isometry(&q);
                assert!((ee.translation.vector - target.position).norm() <= opts.pos_tol);
                assert!(rotation_angle_between(&ee.rotation, &target.orientation) <= opts.ori_tol);
            }
        }
        assert!(solved >= 36, "solved {solved}/40");
    }

    #[test]
    fn description_validation_reports_paths() {
        let text = CANONICAL_DESCRIPTION.replacen("limits = [-1.6, 1.6]", "limits = [1.6, -1.6]", 1);
        let err = KinematicChain::from_toml_str(&text).unwrap_err();
        assert_eq!(err.path, "joints[0].limits");

        let text = CANONICAL_DESCRIPTION.replacen("axis = [0.0, 0.0, 1.0]", "axis = [0.0, 0.0, 2.0]", 1);
        assert_eq!(KinematicChain::from_toml_str(&text).unwrap_err().path, "joints[0].axis");
    }

    #[test]
    fn lever_arms_bound_downstream_geometry() {
        let chain = KinematicChain::canonical();
        let arms = chain.lever_arms(0.0);
        for i in 1..DOF {
            assert!(arms[i] <= arms[i - 1]);
        }
        assert!(arms[0] >= chain.max_reach());
    }
}
