//! Network gateway and headless runner for the aerovac simulator.
//!
//! [`server::serve`] runs a live session and streams it to clients over
//! newline-delimited JSON (TCP) or WebSocket text frames; [`headless`]
//! records and replays scenario traces without a network.

pub mod headless;
pub mod protocol;
pub mod server;

use std::path::PathBuf;

use aerovac_core::dynamics::ProfileRegistry;
use aerovac_core::session::SessionSetup;

use crate::protocol::ScenarioSummary;

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("cannot bind port {port}: {source}")]
    Bind { port: u16, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: aerovac_core::Error },
    #[error("replay diverged at tick {tick}")]
    Diverged { tick: u64 },
    #[error("bad override `{0}`, expected key=value")]
    Override(String),
    #[error(transparent)]
    Core(#[from] aerovac_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("server stopped")]
    Stopped,
}

pub type Result<T, E = GatewayError> = std::result::Result<T, E>;

/// Splits `key=value` and applies it to the setup's config.
pub fn apply_override(setup: &mut SessionSetup, spec: &str) -> Result<()> {
    let (key, value) = spec.split_once('=').ok_or_else(|| GatewayError::Override(spec.to_owned()))?;
    setup.config.set(key.trim(), value.trim())?;
    Ok(())
}

pub fn summarize(setup: &SessionSetup, registry: &ProfileRegistry) -> ScenarioSummary {
    ScenarioSummary {
        name: setup.name.clone(),
        dt: setup.config.dt,
        bounds: setup.environment.bounds,
        obstacles: setup.environment.obstacles.clone(),
        start: setup.start.p,
        voxel_size: setup.config.voxel_size,
        profiles: registry.names().map(str::to_owned).collect(),
    }
}
