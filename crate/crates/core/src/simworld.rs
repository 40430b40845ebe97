//! Simulated workcell: desk, tabletop objects, an open-top target box, one
//! marker, a pinhole RGB-D camera that sees the arm, trajectory execution
//! and a geometric grasp model. Physics is instant settling only.

use std::path::Path;

use nalgebra::{Isometry3, Translation3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;
use thiserror::Error;

use crate::arm::{JointState, JointVector, KinematicChain, DOF};
use crate::doc::{from_toml, PoseDoc, SchemaError};
use crate::frames::{invert, FrameId, Pose, UnitQuat, Vec3};
use crate::perception::{Aabb, PointCloud};
use crate::planner::{AttachedObject, CollisionBox, JointTrajectory, PlanningScene, FLOOR_ID};

pub type Rgb = [u8; 3];

/// Color of pixels whose ray hits nothing.
pub const BACKGROUND: Rgb = [0, 0, 0];
pub const DESK_ID: &str = "desk";
const NANOS: f64 = 1e9;
/// The floor is rendered over the same footprint as the planner's slab.
const FLOOR_HALF: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub id: String,
    pub shape: CollisionBox,
    pub color: Rgb,
    /// Per-face colors in +x, -x, +y, -y, +z, -z order; overrides `color`.
    pub face_colors: Option<[Rgb; 6]>,
    pub graspable: bool,
    pub grasp_width: f64,
}

impl SceneObject {
    pub fn colors(&self) -> Vec<Rgb> {
        match self.face_colors {
            Some(f) => f.to_vec(),
            None => vec![self.color],
        }
    }

    pub fn center(&self) -> Vec3 {
        self.shape.pose.position
    }
}

/// Open-top container built from a floor plate and four walls. `outer` is
/// the axis-aligned outer shell; the box has no yaw.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetBox {
    pub outer: SceneObject,
    pub wall: f64,
}

impl TargetBox {
    pub fn parts(&self) -> Vec<CollisionBox> {
        let c = self.outer.center();
        let h = self.outer.shape.half_extents;
        let t = self.wall / 2.0;
        let id = &self.outer.id;
        let part = |name: &str, offset: Vec3, half: Vec3| CollisionBox::axis_aligned(format!("{id}/{name}"), c + offset, half);
        vec![
            part("floor", Vec3::new(0.0, 0.0, -h.z + t), Vec3::new(h.x, h.y, t)),
            part("wall+x", Vec3::new(h.x - t, 0.0, 0.0), Vec3::new(t, h.y, h.z)),
            part("wall-x", Vec3::new(-h.x + t, 0.0, 0.0), Vec3::new(t, h.y, h.z)),
            part("wall+y", Vec3::new(0.0, h.y - t, 0.0), Vec3::new(h.x - 2.0 * t, t, h.z)),
            part("wall-y", Vec3::new(0.0, -h.y + t, 0.0), Vec3::new(h.x - 2.0 * t, t, h.z)),
        ]
    }

    /// Space enclosed by the walls, from the top of the floor plate to the rim.
    pub fn interior(&self) -> Aabb {
        let c = self.outer.center();
        let h = self.outer.shape.half_extents;
        let w = self.wall;
        Aabb::new(
            Vec3::new(c.x - h.x + w, c.y - h.y + w, c.z - h.z + w),
            Vec3::new(c.x + h.x - w, c.y + h.y - w, c.z + h.z),
        )
    }

    fn opening_contains(&self, x: f64, y: f64) -> bool {
        let i = self.interior();
        x > i.min.x && x < i.max.x && y > i.min.y && y < i.max.y
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Marker {
    pub id: u32,
    pub pose_in_base: Pose,
    /// Desk pose expressed in the marker frame.
    pub desk_offset: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub pose_in_base: Pose,
    pub hfov: f64,
    pub width: u32,
    pub height: u32,
}

impl Camera {
    /// Focal length in pixels (square pixels).
    pub fn focal(&self) -> f64 {
        self.width as f64 / 2.0 / (self.hfov / 2.0).tan()
    }

    /// Ray direction in the camera frame for pixel (u, v), scaled so that
    /// its x (depth) component is 1.
    pub fn pixel_ray(&self, u: u32, v: u32) -> Vec3 {
        let f = self.focal();
        let xn = (u as f64 + 0.5 - self.width as f64 / 2.0) / f;
        let yn = (v as f64 + 0.5 - self.height as f64 / 2.0) / f;
        Vec3::new(1.0, -xn, -yn)
    }

    /// Continuous pixel coordinates of a camera-frame point in front of the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        if p.x <= 0.0 {
            return None;
        }
        let f = self.focal();
        Some((
            self.width as f64 / 2.0 - f * p.y / p.x,
            self.height as f64 / 2.0 - f * p.z / p.x,
        ))
    }

    pub fn in_frustum(&self, p: &Vec3) -> bool {
        match self.project(p) {
            Some((u, v)) => (0.0..=self.width as f64).contains(&u) && (0.0..=self.height as f64).contains(&v),
            None => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    /// Row-major rgb8.
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn pixel(&self, u: u32, v: u32) -> Rgb {
        let i = 3 * (v as usize * self.width as usize + u as usize);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub trajectory: JointTrajectory,
    t_nanos: u64,
}

impl Execution {
    pub fn elapsed(&self) -> f64 {
        self.t_nanos as f64 / NANOS
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grasp {
    pub object: usize,
    pub tool_from_object: Isometry3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GripperAction {
    Open,
    Close,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("marker is not visible from the camera")]
    NotVisible,
}

#[derive(Debug, Clone)]
pub struct World {
    pub chain: KinematicChain,
    pub desk: CollisionBox,
    pub desk_color: Rgb,
    pub floor_color: Rgb,
    pub arm_color: Rgb,
    pub objects: Vec<SceneObject>,
    /// Id of the support each object rests on, None while held.
    pub supports: Vec<Option<String>>,
    pub target_box: Option<TargetBox>,
    pub marker: Marker,
    pub camera: Camera,
    pub arm_state: JointState,
    pub executing: Option<Execution>,
    pub grasped: Option<Grasp>,
    /// Grip force recorded at the last close, N.
    pub grip_force: f64,
    pub seed: u64,
    clock_nanos: u64,
    rng: ChaCha8Rng,
}

// Scene document.

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneDoc {
    #[serde(default)]
    seed: u64,
    desk: DeskDoc,
    #[serde(default)]
    objects: Vec<ObjectDoc>,
    target_box: Option<TargetBoxDoc>,
    marker: MarkerDoc,
    #[serde(default)]
    camera: CameraDoc,
    #[serde(default)]
    start: StartDoc,
    #[serde(default = "default_arm_color")]
    arm_color: Rgb,
    #[serde(default = "default_floor_color")]
    floor_color: Rgb,
}

fn default_arm_color() -> Rgb {
    [90, 90, 100]
}

fn default_floor_color() -> Rgb {
    [60, 60, 60]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeskDoc {
    pose: PoseDoc,
    size: [f64; 3],
    #[serde(default = "default_desk_color")]
    color: Rgb,
}

fn default_desk_color() -> Rgb {
    [150, 111, 70]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectDoc {
    id: String,
    size: [f64; 3],
    /// [x, y] rests the object on the desk; [x, y, z] places its center.
    position: Vec<f64>,
    #[serde(default)]
    yaw: f64,
    #[serde(default = "default_object_color")]
    color: Rgb,
    face_colors: Option<Vec<Rgb>>,
    #[serde(default = "yes")]
    graspable: bool,
    grasp_width: Option<f64>,
}

fn default_object_color() -> Rgb {
    [200, 30, 30]
}

fn yes() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetBoxDoc {
    id: String,
    /// [x, y]; the box stands on the desk.
    position: [f64; 2],
    outer: [f64; 3],
    wall: f64,
    #[serde(default = "default_box_color")]
    color: Rgb,
}

fn default_box_color() -> Rgb {
    [40, 160, 60]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MarkerDoc {
    #[serde(default)]
    id: u32,
    /// Marker pose in the desk frame (the desk box center).
    pose_in_desk: PoseDoc,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraDoc {
    pose: PoseDoc,
    hfov_deg: f64,
    width: u32,
    height: u32,
}

impl Default for CameraDoc {
    fn default() -> Self {
        CameraDoc {
            pose: PoseDoc {
                xyz: [0.1, 0.0, 1.2],
                rpy: Some([0.0, 40f64.to_radians(), 0.0]),
                quat: None,
            },
            hfov_deg: 60.0,
            width: 160,
            height: 120,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StartDoc {
    q: [f64; DOF],
    gripper_aperture: Option<f64>,
}

/// Arm tucked to the left of the desk, out of the camera's view of it.
pub const HOME: [f64; DOF] = [1.5, -1.2, 0.0, 2.0, 0.0, 0.8, 0.0];

impl Default for StartDoc {
    fn default() -> Self {
        StartDoc {
            q: HOME,
            gripper_aperture: None,
        }
    }
}

fn positive(v: &[f64], path: &str) -> Result<(), SchemaError> {
    if v.iter().all(|x| x.is_finite() && *x > 0.0) {
        Ok(())
    } else {
        Err(SchemaError::new(path, "every component must be positive"))
    }
}

/// Lowest point of a box below its center, in world z.
fn half_height(b: &CollisionBox) -> f64 {
    let r = b.pose.orientation.to_rotation_matrix();
    (0..3).map(|i| r[(2, i)].abs() * b.half_extents[i]).sum()
}

impl World {
    pub fn load(path: &Path) -> Result<World, SchemaError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SchemaError::new(path.display().to_string(), e.to_string()))?;
        World::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<World, SchemaError> {
        World::from_toml_with_chain(text, KinematicChain::canonical())
    }

    pub fn from_toml_with_chain(text: &str, chain: KinematicChain) -> Result<World, SchemaError> {
        let doc: SceneDoc = from_toml(text)?;

        positive(&doc.desk.size, "desk.size")?;
        let desk_iso = doc.desk.pose.to_isometry("desk.pose")?;
        let desk = CollisionBox::new(
            DESK_ID,
            Pose::from_isometry(&desk_iso, FrameId::Base),
            Vec3::from(doc.desk.size) / 2.0,
        );
        if desk.pose.position.z - half_height(&desk) < -1e-9 {
            return Err(SchemaError::new("desk.pose", "desk extends below the floor"));
        }
        let desk_top = desk.top_z();

        let mut objects = Vec::new();
        let mut supports = Vec::new();
        for (i, o) in doc.objects.iter().enumerate() {
            let path = |f: &str| format!("objects[{i}].{f}");
            positive(&o.size, &path("size"))?;
            let half = Vec3::from(o.size) / 2.0;
            let rot = UnitQuat::from_axis_angle(&Vec3::z_axis(), o.yaw);
            let (center, support) = match o.position[..] {
                [x, y] => (Vec3::new(x, y, desk_top + half.z), Some(DESK_ID.to_string())),
                [x, y, z] => (Vec3::new(x, y, z), None),
                _ => return Err(SchemaError::new(path("position"), "expected [x, y] or [x, y, z]")),
            };
            if !center.iter().all(|v| v.is_finite()) {
                return Err(SchemaError::new(path("position"), "non-finite value"));
            }
            if center.z - half.z < -1e-9 {
                return Err(SchemaError::new(path("position"), "object extends below the floor"));
            }
            let face_colors = match &o.face_colors {
                None => None,
                Some(f) => Some(<[Rgb; 6]>::try_from(f.as_slice()).map_err(|_| {
                    SchemaError::new(path("face_colors"), "expected 6 colors (+x, -x, +y, -y, +z, -z)")
                })?),
            };
            let grasp_width = o.grasp_width.unwrap_or(o.size[1]);
            if o.graspable && !(grasp_width > 0.0 && grasp_width <= chain.gripper.aperture_max) {
                return Err(SchemaError::new(
                    path("grasp_width"),
                    format!("must be in (0, {}] for a graspable object", chain.gripper.aperture_max),
                ));
            }
            if objects.iter().any(|p: &SceneObject| p.id == o.id) || o.id == DESK_ID || o.id == FLOOR_ID {
                return Err(SchemaError::new(path("id"), format!("duplicate id `{}`", o.id)));
            }
            objects.push(SceneObject {
                id: o.id.clone(),
                shape: CollisionBox::new(o.id.clone(), Pose::new(center, rot, FrameId::Base), half),
                color: o.color,
                face_colors,
                graspable: o.graspable,
                grasp_width,
            });
            supports.push(support);
        }

        let target_box = match &doc.target_box {
            None => None,
            Some(t) => {
                positive(&t.outer, "target_box.outer")?;
                let half = Vec3::from(t.outer) / 2.0;
                if !(t.wall > 0.0 && 2.0 * t.wall < t.outer[0].min(t.outer[1]) && t.wall < t.outer[2]) {
                    return Err(SchemaError::new("target_box.wall", "wall must be positive and thinner than the box"));
                }
                if objects.iter().any(|o| o.id == t.id) {
                    return Err(SchemaError::new("target_box.id", format!("duplicate id `{}`", t.id)));
                }
                let center = Vec3::new(t.position[0], t.position[1], desk_top + half.z);
                Some(TargetBox {
                    outer: SceneObject {
                        id: t.id.clone(),
                        shape: CollisionBox::axis_aligned(t.id.clone(), center, half),
                        color: t.color,
                        face_colors: None,
                        graspable: false,
                        grasp_width: 0.0,
                    },
                    wall: t.wall,
                })
            }
        };

        let marker_in_desk = doc.marker.pose_in_desk.to_isometry("marker.pose_in_desk")?;
        let marker = Marker {
            id: doc.marker.id,
            pose_in_base: Pose::from_isometry(&(desk_iso * marker_in_desk), FrameId::Base),
            desk_offset: Pose::from_isometry(&marker_in_desk.inverse(), FrameId::Marker(doc.marker.id)),
        };

        let cam = &doc.camera;
        if cam.width == 0 || cam.height == 0 {
            return Err(SchemaError::new("camera.width", "image size must be positive"));
        }
        if !(cam.hfov_deg > 0.0 && cam.hfov_deg < 180.0) {
            return Err(SchemaError::new("camera.hfov_deg", "must be in (0, 180)"));
        }
        let camera = Camera {
            pose_in_base: doc.camera.pose.to_pose(FrameId::Base, "camera.pose")?,
            hfov: cam.hfov_deg.to_radians(),
            width: cam.width,
            height: cam.height,
        };

        let q = JointVector::from(doc.start.q);
        if !chain.within_limits(&q) {
            return Err(SchemaError::new("start.q", "outside joint limits"));
        }
        let aperture = doc.start.gripper_aperture.unwrap_or(chain.gripper.aperture_max);
        if !(0.0..=chain.gripper.aperture_max).contains(&aperture) {
            return Err(SchemaError::new("start.gripper_aperture", "outside [0, aperture_max]"));
        }

        Ok(World {
            desk,
            desk_color: doc.desk.color,
            floor_color: doc.floor_color,
            arm_color: doc.arm_color,
            objects,
            supports,
            target_box,
            marker,
            camera,
            arm_state: JointState::new(q, aperture),
            executing: None,
            grasped: None,
            grip_force: 0.0,
            seed: doc.seed,
            clock_nanos: 0,
            rng: ChaCha8Rng::seed_from_u64(doc.seed),
            chain,
        })
    }

    /// Replaces the scene seed and restarts the noise generator from it.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn clock(&self) -> f64 {
        self.clock_nanos as f64 / NANOS
    }

    pub fn object(&self, id: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn tool_isometry(&self) -> Isometry3<f64> {
        self.chain.ee_isometry(&self.arm_state.q)
    }

    /// True desk pose in the base frame (the desk box center).
    pub fn desk_pose(&self) -> Pose {
        self.desk.pose
    }

    /// Collision geometry for the planner: desk, target box parts and every
    /// object not held, plus the held object attached to the tool.
    pub fn planning_scene(&self) -> PlanningScene {
        let mut boxes = vec![self.desk.clone()];
        if let Some(t) = &self.target_box {
            boxes.extend(t.parts());
        }
        for (i, o) in self.objects.iter().enumerate() {
            if self.grasped.map_or(true, |g| g.object != i) {
                boxes.push(o.shape.clone());
            }
        }
        let mut scene = PlanningScene::new(boxes).expect("scene ids are validated on load");
        if let Some(g) = self.grasped {
            let o = &self.objects[g.object];
            let mut shape = o.shape.clone();
            shape.pose = Pose::from_isometry(&g.tool_from_object, FrameId::Base);
            scene.attached = Some(AttachedObject {
                shape,
                touch_ids: self.grasp_touch_ids(g.object),
            });
        }
        scene
    }

    /// Boxes the held object may touch: the one it was lifted from and, for
    /// the target box, its parts.
    fn grasp_touch_ids(&self, _object: usize) -> Vec<String> {
        let mut ids = vec![DESK_ID.to_string()];
        if let Some(t) = &self.target_box {
            ids.extend(t.parts().into_iter().map(|b| b.id));
        }
        ids
    }

    // Execution.

    /// Starts executing `trajectory` from its first point.
    pub fn execute(&mut self, trajectory: JointTrajectory) {
        if trajectory.points.is_empty() {
            return;
        }
        self.arm_state.q = trajectory.points[0].q;
        self.executing = Some(Execution { trajectory, t_nanos: 0 });
        self.update_grasped_pose();
    }

    /// Moves the arm instantly, carrying any held object.
    pub fn set_joint_positions(&mut self, q: JointVector) {
        self.arm_state.q = q;
        self.update_grasped_pose();
    }

    pub fn is_executing(&self) -> bool {
        self.executing.is_some()
    }

    /// Advances simulated time. The clock counts whole nanoseconds so that
    /// repeated fixed steps land exactly on trajectory timestamps.
    pub fn step(&mut self, dt: f64) {
        if !(dt > 0.0) {
            return;
        }
        let dn = (dt * NANOS).round() as u64;
        self.clock_nanos += dn;
        if let Some(exec) = &mut self.executing {
            exec.t_nanos += dn;
            let t = exec.elapsed();
            let traj = &exec.trajectory;
            if t >= traj.duration() {
                self.arm_state.q = traj.final_q().expect("non-empty trajectory");
                self.executing = None;
            } else {
                self.arm_state.q = traj.sample(t);
            }
            self.update_grasped_pose();
        }
    }

    fn update_grasped_pose(&mut self) {
        if let Some(g) = self.grasped {
            let iso = self.tool_isometry() * g.tool_from_object;
            self.objects[g.object].shape.pose = Pose::from_isometry(&iso, FrameId::Base);
        }
    }

    // Gripper.

    /// Index of a graspable object whose grasp region holds both fingertip
    /// contact points of a gripper closing around it.
    pub fn pinch_candidate(&self) -> Option<usize> {
        let tool = self.tool_isometry();
        let closing = tool.rotation * Vec3::y();
        let tcp = tool.translation.vector;
        let cos_tol = 10f64.to_radians().cos();
        self.objects.iter().enumerate().position(|(i, o)| {
            if !o.graspable || self.grasped.is_some_and(|g| g.object == i) {
                return false;
            }
            if o.grasp_width > self.arm_state.gripper_aperture + 1e-12 {
                return false;
            }
            let iso = o.shape.pose.to_isometry();
            let axis_local = iso.rotation.inverse() * closing;
            let Some(k) = (0..3).find(|&k| axis_local[k].abs() >= cos_tol) else {
                return false;
            };
            // Grasp region: the object grown by 1 cm along the closing axis.
            let mut region = o.shape.half_extents;
            region[k] += 0.01;
            [1.0, -1.0].iter().all(|s| {
                let tip = tcp + closing * (s * o.grasp_width / 2.0);
                let local = iso.inverse_transform_point(&tip.into()).coords;
                (0..3).all(|j| local[j].abs() <= region[j] + 1e-9)
            })
        })
    }

    pub fn command_gripper(&mut self, action: GripperAction) {
        match action {
            GripperAction::Close => {
                if self.grasped.is_some() {
                    return;
                }
                match self.pinch_candidate() {
                    Some(i) => {
                        let o = &self.objects[i];
                        self.arm_state.gripper_aperture = o.grasp_width;
                        self.grip_force = self.chain.gripper.force_limit;
                        let tool_from_object = self.tool_isometry().inverse() * o.shape.pose.to_isometry();
                        self.grasped = Some(Grasp { object: i, tool_from_object });
                        self.supports[i] = None;
                    }
                    None => {
                        self.arm_state.gripper_aperture = 0.0;
                        self.grip_force = 0.0;
                    }
                }
            }
            GripperAction::Open => {
                self.arm_state.gripper_aperture = self.chain.gripper.aperture_max;
                self.grip_force = 0.0;
                if let Some(g) = self.grasped.take() {
                    self.settle(g.object);
                }
            }
        }
    }

    /// Drops an object straight down onto the highest support below it,
    /// landing on the face closest to facing down.
    fn settle(&mut self, i: usize) {
        let rot = self.objects[i].shape.pose.orientation;
        let m = rot.to_rotation_matrix();
        let k = (0..3).max_by(|&a, &b| m[(2, a)].abs().total_cmp(&m[(2, b)].abs())).unwrap();
        let axis = m.matrix().column(k) * m[(2, k)].signum();
        if let Some(tilt) = UnitQuat::rotation_between(&axis, &Vec3::z()) {
            self.objects[i].shape.pose.orientation = tilt * rot;
        }
        let shape = &self.objects[i].shape;
        let c = shape.pose.position;
        let hz = half_height(shape);
        let bottom = c.z - hz;
        let mut best = (0.0, FLOOR_ID.to_string());
        let mut consider = |top: f64, id: String| {
            if top <= bottom + 1e-9 && top > best.0 {
                best = (top, id);
            }
        };
        if self.desk.contains(&Vec3::new(c.x, c.y, self.desk.top_z() - 1e-9)) {
            consider(self.desk.top_z(), DESK_ID.to_string());
        }
        if let Some(t) = &self.target_box {
            let parts = t.parts();
            if t.opening_contains(c.x, c.y) {
                consider(t.interior().min.z, parts[0].id.clone());
            } else {
                for p in &parts[1..] {
                    if p.contains(&Vec3::new(c.x, c.y, p.top_z() - 1e-9)) {
                        consider(p.top_z(), p.id.clone());
                    }
                }
            }
        }
        for (j, o) in self.objects.iter().enumerate() {
            if j != i && o.shape.contains(&Vec3::new(c.x, c.y, o.shape.top_z() - 1e-9)) {
                consider(o.shape.top_z(), o.id.clone());
            }
        }
        let (top, id) = best;
        self.objects[i].shape.pose.position.z = top + hz;
        self.supports[i] = Some(id);
    }

    // Sensing.

    fn arm_spheres(&self) -> Vec<(Vec3, f64)> {
        let frames = self.chain.link_frames(&self.arm_state.q);
        let mut out = Vec::new();
        for (frame, spheres) in frames.iter().zip(&self.chain.link_spheres) {
            for s in spheres {
                out.push((frame.transform_point(&s.center.into()).coords, s.radius));
            }
        }
        out
    }

    fn scene(&self) -> RayScene {
        let mut boxes = vec![RayBox::new(&self.desk, [self.desk_color; 6])];
        if let Some(t) = &self.target_box {
            for p in t.parts() {
                boxes.push(RayBox::new(&p, [t.outer.color; 6]));
            }
        }
        for o in &self.objects {
            boxes.push(RayBox::new(&o.shape, o.face_colors.unwrap_or([o.color; 6])));
        }
        RayScene {
            boxes,
            spheres: self.arm_spheres(),
            arm_color: self.arm_color,
            floor_color: self.floor_color,
        }
    }

    fn cast_all(&self) -> Vec<Option<(f64, Rgb)>> {
        let scene = self.scene();
        let cam = self.camera.pose_in_base.to_isometry();
        let origin = cam.translation.vector;
        let mut out = Vec::with_capacity((self.camera.width * self.camera.height) as usize);
        for v in 0..self.camera.height {
            for u in 0..self.camera.width {
                let dir = cam.rotation * self.camera.pixel_ray(u, v);
                out.push(scene.cast(&origin, &dir));
            }
        }
        out
    }

    /// Colored points in the camera frame, one per pixel whose ray hits
    /// something, in row-major pixel order.
    pub fn render_depth_cloud(&self) -> PointCloud {
        let mut cloud = PointCloud::new(FrameId::Camera);
        let hits = self.cast_all();
        let mut k = 0;
        for v in 0..self.camera.height {
            for u in 0..self.camera.width {
                if let Some((depth, color)) = hits[k] {
                    cloud.push(self.camera.pixel_ray(u, v) * depth, color);
                }
                k += 1;
            }
        }
        cloud
    }

    pub fn render_rgb_image(&self) -> Image {
        let pixels = self
            .cast_all()
            .into_iter()
            .flat_map(|h| h.map_or(BACKGROUND, |(_, c)| c))
            .collect();
        Image {
            width: self.camera.width,
            height: self.camera.height,
            pixels,
        }
    }

    /// Marker pose in the camera frame with optional Gaussian noise on
    /// position (m) and rotation (rad per axis).
    pub fn observe_marker(&mut self, noise_std: f64) -> Result<Pose, SimError> {
        let cam = &self.camera;
        let rel = invert(&cam.pose_in_base).to_isometry() * self.marker.pose_in_base.to_isometry();
        let p = rel.translation.vector;
        if !cam.in_frustum(&p) {
            return Err(SimError::NotVisible);
        }
        let origin = cam.pose_in_base.position;
        let to_marker = self.marker.pose_in_base.position - origin;
        let dist = to_marker.norm();
        let dir = to_marker / dist;
        if self
            .arm_spheres()
            .iter()
            .any(|(c, r)| ray_sphere(&origin, &dir, c, *r).is_some_and(|t| t < dist))
        {
            return Err(SimError::NotVisible);
        }
        let mut out = rel;
        if noise_std > 0.0 {
            let n = Normal::new(0.0, noise_std).expect("finite std");
            let dp = Vec3::from_fn(|_, _| n.sample(&mut self.rng));
            let dr = Vec3::from_fn(|_, _| n.sample(&mut self.rng));
            out = Isometry3::from_parts(
                Translation3::from(p + dp),
                UnitQuat::from_scaled_axis(dr) * rel.rotation,
            );
        }
        Ok(Pose::from_isometry(&out, FrameId::Camera))
    }
}

struct RayBox {
    inv: Isometry3<f64>,
    half: Vec3,
    colors: [Rgb; 6],
}

impl RayBox {
    fn new(b: &CollisionBox, colors: [Rgb; 6]) -> Self {
        RayBox {
            inv: b.pose.to_isometry().inverse(),
            half: b.half_extents,
            colors,
        }
    }

    /// Entry distance and the color of the face the ray enters through.
    /// Rays starting inside the box do not hit it.
    fn hit(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, Rgb)> {
        let o = self.inv.transform_point(&(*origin).into()).coords;
        let d = self.inv.rotation * dir;
        let (mut tmin, mut tmax) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut face = 0;
        for i in 0..3 {
            if d[i].abs() < 1e-15 {
                if o[i].abs() > self.half[i] {
                    return None;
                }
                continue;
            }
            let t1 = (-self.half[i] - o[i]) / d[i];
            let t2 = (self.half[i] - o[i]) / d[i];
            let (near, far) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            if near > tmin {
                tmin = near;
                // Entering through the -face when moving in +direction.
                face = 2 * i + usize::from(d[i] > 0.0);
            }
            tmax = tmax.min(far);
        }
        (tmin <= tmax && tmin > 0.0).then(|| (tmin, self.colors[face]))
    }
}

fn ray_sphere(origin: &Vec3, dir: &Vec3, center: &Vec3, radius: f64) -> Option<f64> {
    let oc = origin - center;
    let a = dir.norm_squared();
    let b = oc.dot(dir);
    let c = oc.norm_squared() - radius * radius;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let t = (-b - disc.sqrt()) / a;
    (t > 0.0).then_some(t)
}

struct RayScene {
    boxes: Vec<RayBox>,
    spheres: Vec<(Vec3, f64)>,
    arm_color: Rgb,
    floor_color: Rgb,
}

impl RayScene {
    fn cast(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, Rgb)> {
        let mut best: Option<(f64, Rgb)> = None;
        let mut offer = |hit: Option<(f64, Rgb)>| {
            if let Some((t, c)) = hit {
                if best.map_or(true, |(b, _)| t < b) {
                    best = Some((t, c));
                }
            }
        };
        if dir.z < 0.0 && origin.z > 0.0 {
            let t = -origin.z / dir.z;
            let p = origin + dir * t;
            if p.x.abs() <= FLOOR_HALF && p.y.abs() <= FLOOR_HALF {
                offer(Some((t, self.floor_color)));
            }
        }
        for b in &self.boxes {
            offer(b.hit(origin, dir));
        }
        for (c, r) in &self.spheres {
            offer(ray_sphere(origin, dir, c, *r).map(|t| (t, self.arm_color)));
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[desk]
pose = { xyz = [0.85, 0.0, 0.275] }
size = [0.6, 1.2, 0.55]

[marker]
pose_in_desk = { xyz = [-0.2, 0.4, 0.275] }
"#;

    #[test]
    fn minimal_scene_has_no_objects() {
        let w = World::from_toml_str(MINIMAL).unwrap();
        assert!(w.objects.is_empty() && w.target_box.is_none());
        assert_eq!(w.camera.width, 160);
        assert_eq!(w.arm_state.q, JointVector::from(HOME));
        assert_eq!(w.arm_state.gripper_aperture, w.chain.gripper.aperture_max);
    }

    #[test]
    fn objects_rest_on_the_desk() {
        let text = format!("{MINIMAL}\n[[objects]]\nid = \"cube\"\nsize = [0.05, 0.05, 0.05]\nposition = [0.7, 0.1]\n");
        let w = World::from_toml_str(&text).unwrap();
        assert!((w.objects[0].center().z - 0.575).abs() < 1e-12);
        assert_eq!(w.supports[0].as_deref(), Some(DESK_ID));
    }

    #[test]
    fn schema_errors_name_the_field() {
        let below = format!("{MINIMAL}\n[[objects]]\nid = \"c\"\nsize = [0.05, 0.05, 0.05]\nposition = [0.7, 0.1, 0.01]\n");
        assert_eq!(World::from_toml_str(&below).unwrap_err().path, "objects[0].position");
        let wide = format!("{MINIMAL}\n[[objects]]\nid = \"c\"\nsize = [0.2, 0.2, 0.05]\nposition = [0.7, 0.1]\n");
        assert_eq!(World::from_toml_str(&wide).unwrap_err().path, "objects[0].grasp_width");
        let typo = MINIMAL.replace("size =", "sise =");
        assert_eq!(World::from_toml_str(&typo).unwrap_err().path, "desk.sise");
        let faces = format!("{MINIMAL}\n[[objects]]\nid = \"c\"\nsize = [0.05, 0.05, 0.05]\nposition = [0.7, 0.1]\nface_colors = [[1, 2, 3]]\n");
        assert_eq!(World::from_toml_str(&faces).unwrap_err().path, "objects[0].face_colors");
        let q = format!("{MINIMAL}\n[start]\nq = [3.0, 0, 0, 0, 0, 0, 0]\n");
        assert_eq!(World::from_toml_str(&q).unwrap_err().path, "start.q");
    }

    #[test]
    fn ray_box_faces() {
        let b = CollisionBox::axis_aligned("b", Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0));
        let colors = [[1; 3], [2; 3], [3; 3], [4; 3], [5; 3], [6; 3]];
        let rb = RayBox::new(&b, colors);
        assert_eq!(rb.hit(&Vec3::new(0.0, 0.0, 5.0), &-Vec3::z()), Some((4.0, [5; 3])));
        assert_eq!(rb.hit(&Vec3::new(-3.0, 0.2, 0.0), &Vec3::x()), Some((2.0, [2; 3])));
        assert_eq!(rb.hit(&Vec3::new(0.0, 0.0, 5.0), &Vec3::z()), None);
        assert_eq!(rb.hit(&Vec3::zeros(), &Vec3::z()), None);
        assert_eq!(rb.hit(&Vec3::new(3.0, 3.0, 0.0), &-Vec3::x()), None);
    }

    #[test]
    fn ray_sphere_distance() {
        let t = ray_sphere(&Vec3::zeros(), &Vec3::x(), &Vec3::new(5.0, 0.0, 0.0), 1.0);
        assert_eq!(t, Some(4.0));
        assert_eq!(ray_sphere(&Vec3::zeros(), &-Vec3::x(), &Vec3::new(5.0, 0.0, 0.0), 1.0), None);
    }

    #[test]
    fn stepping_without_a_trajectory_only_moves_the_clock() {
        let mut w = World::from_toml_str(MINIMAL).unwrap();
        let q = w.arm_state.q;
        for _ in 0..100 {
            w.step(0.01);
        }
        assert_eq!(w.arm_state.q, q);
        assert_eq!(w.clock(), 1.0);
    }
}
