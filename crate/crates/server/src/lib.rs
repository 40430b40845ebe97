pub mod config;
pub mod engine;
pub mod net;
pub mod script;
pub mod session;
pub mod streams;

use std::path::Path;

use teleop_core::arm::KinematicChain;
use teleop_core::doc::SchemaError;
use teleop_core::simworld::World;

/// Loads a scene with the robot named by the config, or the built-in chain.
pub fn load_world(scene: &Path, config: &config::ServerConfig) -> Result<World, SchemaError> {
    let chain = match &config.robot {
        Some(path) => KinematicChain::from_toml_str(&read(path)?).map_err(|e| in_file(path, e))?,
        None => KinematicChain::canonical(),
    };
    World::from_toml_with_chain(&read(scene)?, chain).map_err(|e| in_file(scene, e))
}

fn read(path: &Path) -> Result<String, SchemaError> {
    std::fs::read_to_string(path).map_err(|e| SchemaError::new(path.display().to_string(), e.to_string()))
}

fn in_file(path: &Path, e: SchemaError) -> SchemaError {
    SchemaError::new(format!("{}: {}", path.display(), e.path), e.message)
}
