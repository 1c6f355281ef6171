//! Scenario runs and trace replays without a network.

use std::path::Path;

use aerovac_core::scenario::Scenario;
use aerovac_core::session::{replay, MetricsReport, SessionSetup, Trace};
use serde::{Deserialize, Serialize};

use crate::{apply_override, GatewayError, Result};

/// Contents of a report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub metrics: MetricsReport,
}

impl Report {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("reports serialize");
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| GatewayError::Io(e.into()))
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    Scenario::load(path).map_err(|source| GatewayError::File { path: path.to_owned(), source })
}

/// The scenario's session setup with `key=value` overrides applied.
pub fn setup_with(scenario: &Scenario, overrides: &[String]) -> Result<SessionSetup> {
    let mut setup = scenario.setup();
    for o in overrides {
        apply_override(&mut setup, o)?;
    }
    Ok(setup)
}

/// Replays `trace` against `scenario` and writes the report. Nothing is
/// written unless every tick digest matches.
pub fn run_headless(scenario: &Path, trace: &Path, report: &Path) -> Result<Report> {
    replay_with(scenario, trace, report, &[])
}

pub fn replay_with(scenario: &Path, trace: &Path, report: &Path, overrides: &[String]) -> Result<Report> {
    let sc = load_scenario(scenario)?;
    let setup = setup_with(&sc, overrides)?;
    let recorded = Trace::load(trace).map_err(|source| GatewayError::File { path: trace.to_owned(), source })?;
    let metrics = replay(&recorded, &setup).map_err(|e| match e {
        aerovac_core::Error::DigestMismatch { tick } => GatewayError::Diverged { tick },
        other => other.into(),
    })?;
    let out = Report { scenario: setup.name, metrics };
    out.write(report)?;
    Ok(out)
}

/// Runs the scripted scenario, optionally saving its trace and report.
pub fn record(scenario: &Path, trace_out: Option<&Path>, report: Option<&Path>, overrides: &[String]) -> Result<Report> {
    let mut sc = load_scenario(scenario)?;
    sc.config = setup_with(&sc, overrides)?.config;
    let outcome = sc.run()?;
    if let Some(path) = trace_out {
        outcome.trace.save(path).map_err(|source| GatewayError::File { path: path.to_owned(), source })?;
    }
    let out = Report { scenario: sc.name, metrics: outcome.report };
    if let Some(path) = report {
        out.write(path)?;
    }
    Ok(out)
}
