//! Rigid-body geometry and the two axis conventions used across the stack.
//!
//! Robot-side math is done in FLU (x forward, y left, z up; right-handed).
//! The visualization side uses RUF (x right, y up, z forward; left-handed).
//! Conversion only happens at the UI boundary.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Isometry3, Matrix3, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type UnitQuat = UnitQuaternion<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FrameConvention {
    /// Forward, left, up.
    Flu,
    /// Right, up, forward.
    Ruf,
}

/// The fixed frames this system knows about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameId {
    Base,
    Camera,
    Marker(u32),
    Desk,
}

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameId::Base => f.write_str("base"),
            FrameId::Camera => f.write_str("camera"),
            FrameId::Marker(n) => write!(f, "marker:{n}"),
            FrameId::Desk => f.write_str("desk"),
        }
    }
}

impl FromStr for FrameId {
    type Err = FrameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base" => Ok(FrameId::Base),
            "camera" => Ok(FrameId::Camera),
            "desk" => Ok(FrameId::Desk),
            _ => s
                .strip_prefix("marker:")
                .and_then(|n| n.parse().ok())
                .map(FrameId::Marker)
                .ok_or_else(|| FrameError::UnknownFrame(s.to_string())),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FrameError {
    #[error("cannot combine poses in {0:?} and {1:?} conventions")]
    ConventionMismatch(FrameConvention, FrameConvention),
    #[error("unknown frame id `{0}`")]
    UnknownFrame(String),
}

/// A rigid transform of a child frame expressed in `parent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: UnitQuat,
    pub frame: FrameConvention,
    pub parent: FrameId,
}

impl Pose {
    pub fn new(position: Vec3, orientation: UnitQuat, parent: FrameId) -> Self {
        Self {
            position,
            orientation,
            frame: FrameConvention::Flu,
            parent,
        }
    }

    pub fn identity(parent: FrameId) -> Self {
        Self::new(Vec3::zeros(), UnitQuat::identity(), parent)
    }

    pub fn from_translation(x: f64, y: f64, z: f64, parent: FrameId) -> Self {
        Self::new(Vec3::new(x, y, z), UnitQuat::identity(), parent)
    }

    pub fn from_isometry(iso: &Isometry3<f64>, parent: FrameId) -> Self {
        Self::new(iso.translation.vector, iso.rotation, parent)
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.orientation)
    }

    pub fn with_parent(mut self, parent: FrameId) -> Self {
        self.parent = parent;
        self
    }

    /// Maps a point given in this pose's local frame into the parent frame.
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.orientation * p + self.position
    }
}

/// Applies `b` (expressed in `a`'s local frame) after `a`. The result keeps
/// `a`'s parent.
pub fn compose(a: &Pose, b: &Pose) -> Result<Pose, FrameError> {
    if a.frame != b.frame {
        return Err(FrameError::ConventionMismatch(a.frame, b.frame));
    }
    Ok(Pose {
        position: a.orientation * b.position + a.position,
        orientation: renormalize(a.orientation * b.orientation),
        frame: a.frame,
        parent: a.parent,
    })
}

/// Inverse transform. The parent id is left untouched; callers that know
/// the child frame should relabel with [`Pose::with_parent`].
pub fn invert(p: &Pose) -> Pose {
    let inv = p.orientation.inverse();
    Pose {
        position: -(inv * p.position),
        orientation: inv,
        frame: p.frame,
        parent: p.parent,
    }
}

fn renormalize(q: UnitQuat) -> UnitQuat {
    UnitQuat::new_normalize(q.into_inner())
}

/// Signed axis permutation taking coordinates in `from` to coordinates in `to`.
pub fn axis_map(from: FrameConvention, to: FrameConvention) -> Matrix3<f64> {
    use FrameConvention::*;
    match (from, to) {
        (Flu, Ruf) => Matrix3::new(
            0.0, -1.0, 0.0, //
            0.0, 0.0, 1.0, //
            1.0, 0.0, 0.0,
        ),
        (Ruf, Flu) => Matrix3::new(
            0.0, 0.0, 1.0, //
            -1.0, 0.0, 0.0, //
            0.0, 1.0, 0.0,
        ),
        _ => Matrix3::identity(),
    }
}

pub fn convert_point(v: &Vec3, from: FrameConvention, to: FrameConvention) -> Vec3 {
    use FrameConvention::*;
    match (from, to) {
        (Flu, Ruf) => Vec3::new(-v.y, v.z, v.x),
        (Ruf, Flu) => Vec3::new(v.z, -v.x, v.y),
        _ => *v,
    }
}

/// Re-expresses a rotation in the other convention by conjugating its matrix
/// with the (improper) axis map.
pub fn convert_rotation(q: &UnitQuat, from: FrameConvention, to: FrameConvention) -> UnitQuat {
    if from == to {
        return *q;
    }
    let m = axis_map(from, to);
    let r = m * q.to_rotation_matrix().into_inner() * m.transpose();
    quat_from_matrix(&r)
}

pub fn convert_pose(p: &Pose, to: FrameConvention) -> Pose {
    Pose {
        position: convert_point(&p.position, p.frame, to),
        orientation: convert_rotation(&p.orientation, p.frame, to),
        frame: to,
        parent: p.parent,
    }
}

/// Rotation matrix to quaternion, branching on the largest diagonal term.
pub fn quat_from_matrix(r: &Matrix3<f64>) -> UnitQuat {
    let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
    let (w, x, y, z);
    if trace > r[(0, 0)] && trace > r[(1, 1)] && trace > r[(2, 2)] {
        let s = (1.0 + trace).sqrt() * 2.0;
        w = 0.25 * s;
        x = (r[(2, 1)] - r[(1, 2)]) / s;
        y = (r[(0, 2)] - r[(2, 0)]) / s;
        z = (r[(1, 0)] - r[(0, 1)]) / s;
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
        w = (r[(2, 1)] - r[(1, 2)]) / s;
        x = 0.25 * s;
        y = (r[(0, 1)] + r[(1, 0)]) / s;
        z = (r[(0, 2)] + r[(2, 0)]) / s;
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
        w = (r[(0, 2)] - r[(2, 0)]) / s;
        x = (r[(0, 1)] + r[(1, 0)]) / s;
        y = 0.25 * s;
        z = (r[(1, 2)] + r[(2, 1)]) / s;
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
        w = (r[(1, 0)] - r[(0, 1)]) / s;
        x = (r[(0, 2)] + r[(2, 0)]) / s;
        y = (r[(1, 2)] + r[(2, 1)]) / s;
        z = 0.25 * s;
    }
    UnitQuat::new_normalize(Quaternion::new(w, x, y, z))
}

/// Angle of the relative rotation between two orientations, in [0, π].
///
/// Equal to `2·acos|⟨a, b⟩|`, evaluated through `atan2` on the relative
/// quaternion so it stays accurate for nearly identical rotations.
pub fn rotation_angle_between(a: &UnitQuat, b: &UnitQuat) -> f64 {
    let rel = a.inverse() * b;
    2.0 * rel.imag().norm().atan2(rel.w.abs())
}

/// Desk pose in the base frame from a single observed marker.
pub fn desk_pose_from_marker(
    marker_in_camera: &Pose,
    camera_in_base: &Pose,
    desk_offset_in_marker: &Pose,
) -> Result<Pose, FrameError> {
    let marker_in_base = compose(camera_in_base, marker_in_camera)?;
    Ok(compose(&marker_in_base, desk_offset_in_marker)?.with_parent(FrameId::Base))
}
