//! Server configuration document. Every key is optional; see
//! `assets/config.toml` for the full set with their defaults.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use teleop_core::arm::IkOptions;
use teleop_core::doc::{from_toml, SchemaError};
use teleop_core::perception::PerceptionConfig;
use teleop_core::planner::PlanOptions;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    /// Robot description; the built-in chain when absent. Relative paths
    /// resolve against the config file's directory.
    pub robot: Option<PathBuf>,
    pub sim: SimConfig,
    pub streams: StreamConfig,
    pub session: SessionConfig,
    pub marker: MarkerConfig,
    /// The seed here is ignored; each plan request carries its own.
    pub planner: PlanOptions,
    pub perception: PerceptionConfig,
    pub net: NetConfig,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub rate_hz: f64,
    /// Simulated seconds a plan request takes in lockstep runs.
    pub plan_latency: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    pub joint_rate: f64,
    pub image_rate: f64,
    pub cloud_rate: f64,
    pub marker_rate: f64,
    pub point_budget: usize,
    pub min_point_budget: usize,
    pub bytes_per_second_cap: u64,
    /// Length of the sliding window the cap is enforced over (s).
    pub window: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub heartbeat_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkerConfig {
    /// Std dev of simulated marker detection noise (m, rad).
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub bind: String,
    pub port: u16,
    pub ws_port: u16,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            robot: None,
            sim: SimConfig::default(),
            streams: StreamConfig::default(),
            session: SessionConfig::default(),
            marker: MarkerConfig::default(),
            planner: PlanOptions::default(),
            perception: PerceptionConfig::default(),
            net: NetConfig::default(),
        }
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            rate_hz: 100.0,
            plan_latency: 1.0,
        }
    }
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            joint_rate: 50.0,
            image_rate: 10.0,
            cloud_rate: 5.0,
            marker_rate: 1.0,
            point_budget: 10_000,
            min_point_budget: 500,
            bytes_per_second_cap: 1_000_000,
            window: 2.0,
        }
    }
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig { heartbeat_hz: 2.0 }
    }
}

impl Default for MarkerConfig {
    fn default() -> Self {
        MarkerConfig { noise_std: 0.0 }
    }
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            bind: "127.0.0.1".into(),
            port: 9090,
            ws_port: 9091,
        }
    }
}

/// Planner options for one request; the request's seed drives both the
/// sampler and IK restarts.
pub fn plan_options(base: &PlanOptions, seed: u64) -> PlanOptions {
    PlanOptions {
        seed,
        ik: IkOptions { seed, ..base.ik },
        ..*base
    }
}

fn positive(v: f64, path: &str) -> Result<(), SchemaError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(SchemaError::new(path, format!("must be positive, got {v}")))
    }
}

impl ServerConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, SchemaError> {
        let cfg: ServerConfig = from_toml(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SchemaError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SchemaError::new(path.display().to_string(), e.to_string()))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| {
            SchemaError::new(format!("{}: {}", path.display(), e.path), e.message)
        })?;
        if let (Some(robot), Some(dir)) = (&cfg.robot, path.parent()) {
            if robot.is_relative() {
                cfg.robot = Some(dir.join(robot));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        positive(self.sim.rate_hz, "sim.rate_hz")?;
        if !(self.sim.plan_latency >= 0.0) {
            return Err(SchemaError::new("sim.plan_latency", "must not be negative"));
        }
        let s = &self.streams;
        positive(s.joint_rate, "streams.joint_rate")?;
        positive(s.image_rate, "streams.image_rate")?;
        positive(s.cloud_rate, "streams.cloud_rate")?;
        positive(s.marker_rate, "streams.marker_rate")?;
        positive(s.window, "streams.window")?;
        if s.bytes_per_second_cap == 0 {
            return Err(SchemaError::new("streams.bytes_per_second_cap", "must be positive"));
        }
        if s.min_point_budget == 0 || s.point_budget < s.min_point_budget {
            return Err(SchemaError::new(
                "streams.point_budget",
                "must be at least streams.min_point_budget, which must be positive",
            ));
        }
        positive(self.session.heartbeat_hz, "session.heartbeat_hz")?;
        if !(self.marker.noise_std >= 0.0) {
            return Err(SchemaError::new("marker.noise_std", "must not be negative"));
        }
        let p = &self.planner;
        positive(p.step, "planner.step")?;
        positive(p.time_budget, "planner.time_budget")?;
        positive(p.edge_resolution, "planner.edge_resolution")?;
        positive(p.sample_dt, "planner.sample_dt")?;
        if p.connect_every == 0 {
            return Err(SchemaError::new("planner.connect_every", "must be positive"));
        }
        if self.perception.point_budget == 0 {
            return Err(SchemaError::new("perception.point_budget", "must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        assert_eq!(ServerConfig::from_toml_str("").unwrap(), ServerConfig::default());
    }

    #[test]
    fn errors_name_the_key() {
        let e = ServerConfig::from_toml_str("[streams]\ncloud_rate = 0.0\n").unwrap_err();
        assert_eq!(e.path, "streams.cloud_rate");
        let e = ServerConfig::from_toml_str("[streams]\nclod_rate = 1.0\n").unwrap_err();
        assert!(e.message.contains("clod_rate"), "{e}");
        let e = ServerConfig::from_toml_str("[planner.ik]\nrestarts = \"x\"\n").unwrap_err();
        assert_eq!(e.path, "planner.ik.restarts");
    }
}
