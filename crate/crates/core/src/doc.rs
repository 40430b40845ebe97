//! Shared pieces of the plain-text (TOML) document formats: robot
//! description, scene, and server config.

use nalgebra::{Isometry3, Quaternion, Translation3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{FrameId, Pose, UnitQuat, Vec3};

/// A document that failed to parse or validate. `path` names the offending
/// field, e.g. `objects[0].position`.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("{path}: {message}")]
pub struct SchemaError {
    pub path: String,
    pub message: String,
}

impl SchemaError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub fn from_toml<T: DeserializeOwned>(text: &str) -> Result<T, SchemaError> {
    let de = toml::Deserializer::new(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        SchemaError::new(path, e.into_inner().message().trim())
    })
}

/// Pose as written in documents: translation plus either roll/pitch/yaw
/// (radians, fixed-axis x-y-z) or a quaternion in x, y, z, w order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PoseDoc {
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rpy: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quat: Option<[f64; 4]>,
}

impl PoseDoc {
    pub fn rotation(&self, path: &str) -> Result<UnitQuat, SchemaError> {
        match (self.rpy, self.quat) {
            (Some(_), Some(_)) => Err(SchemaError::new(
                path,
                "give either `rpy` or `quat`, not both",
            )),
            (Some([r, p, y]), None) => Ok(UnitQuat::from_euler_angles(r, p, y)),
            (None, Some([x, y, z, w])) => {
                let q = Quaternion::new(w, x, y, z);
                if (q.norm() - 1.0).abs() > 1e-6 {
                    return Err(SchemaError::new(
                        format!("{path}.quat"),
                        "quaternion is not unit length",
                    ));
                }
                Ok(UnitQuat::new_normalize(q))
            }
            (None, None) => Ok(UnitQuat::identity()),
        }
    }

    pub fn to_isometry(&self, path: &str) -> Result<Isometry3<f64>, SchemaError> {
        let t = Vec3::from(self.xyz);
        if !t.iter().all(|v| v.is_finite()) {
            return Err(SchemaError::new(format!("{path}.xyz"), "non-finite value"));
        }
        Ok(Isometry3::from_parts(
            Translation3::from(t),
            self.rotation(path)?,
        ))
    }

    pub fn to_pose(&self, parent: FrameId, path: &str) -> Result<Pose, SchemaError> {
        Ok(Pose::from_isometry(&self.to_isometry(path)?, parent))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Deserialize)]
    struct Doc {
        #[allow(dead_code)]
        items: Vec<Item>,
    }

    #[derive(Debug, Deserialize)]
    struct Item {
        #[allow(dead_code)]
        size: f64,
    }

    #[test]
    fn error_names_the_field_path() {
        let err = from_toml::<Doc>("[[items]]\nsize = 1.0\n[[items]]\nsize = \"x\"\n").unwrap_err();
        assert_eq!(err.path, "items[1].size");
    }

    #[test]
    fn pose_doc_rejects_two_rotations_and_non_unit_quats() {
        let both = PoseDoc {
            rpy: Some([0.0; 3]),
            quat: Some([0.0, 0.0, 0.0, 1.0]),
            ..Default::default()
        };
        assert!(both.rotation("p").is_err());
        let bad = PoseDoc {
            quat: Some([0.0, 0.0, 0.0, 2.0]),
            ..Default::default()
        };
        assert_eq!(bad.rotation("p").unwrap_err().path, "p.quat");
    }
}
