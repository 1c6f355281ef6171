//! Scenario files: a room, a start pose, config overrides and a scripted
//! operator, in TOML.
//!
//! ```toml
//! schema = 1
//! name = "doorway"
//! duration = 20.0
//! start = [0.0, 0.0, 0.8]
//!
//! [environment]
//! drone_radius = 0.2
//! bounds = { min = [-1.0, -3.0, 0.0], max = [6.0, 3.0, 2.5] }
//! obstacles = [{ min = [2.0, -3.0, 0.0], max = [2.2, -0.4, 2.5] }]
//!
//! [config.admittance]
//! profile = "squared"
//!
//! [[script]]
//! kind = "event"
//! at = 0.1
//! event = { type = "place_goal", goal = [5.0, 0.0, 0.8] }
//!
//! [[script]]
//! kind = "marker_line"
//! from = 2.0
//! to = 4.0
//! start = [1.0, 0.0, 0.8]
//! end = [3.0, 0.0, 0.8]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::session::{InputEvent, MetricsReport, Session, SessionConfig, SessionSetup, Snapshot, Trace};
use crate::world::{DroneState, Environment, SensorConfig};
use crate::{Error, Result, Vec3};

pub const SCENARIO_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub p: Vec3,
    #[serde(default)]
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScriptItem {
    /// One input at time `at` (s).
    Event { at: f64, event: InputEvent },
    /// The operator drags the marker from `start` to `end` at constant
    /// speed over `[from, to]`, one sample per tick, then lets go.
    MarkerLine {
        from: f64,
        to: f64,
        start: Vec3,
        end: Vec3,
        #[serde(default = "yes")]
        release: bool,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    pub name: String,
    /// Run length (s).
    pub duration: f64,
    pub start: Vec3,
    #[serde(default)]
    pub start_yaw: f64,
    pub environment: Environment,
    #[serde(default)]
    pub config: SessionConfig,
    #[serde(default)]
    pub device_viewpoints: Vec<Viewpoint>,
    #[serde(default)]
    pub device_sensor: SensorConfig,
    #[serde(default)]
    pub script: Vec<ScriptItem>,
}

/// Result of running a scenario headless.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: MetricsReport,
    pub trace: Trace,
    pub reference: Vec<Vec3>,
    pub commanded: Vec<Vec3>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCENARIO_SCHEMA {
            return Err(Error::Scenario(format!("unsupported schema {}", self.schema)));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::Scenario("duration must be positive".into()));
        }
        self.environment.validate()?;
        self.config.validate()?;
        self.device_sensor.validate()?;
        if !self.environment.bounds.contains(&self.start) || self.environment.is_inside_obstacle(&self.start) {
            return Err(Error::Scenario("start must lie in free space".into()));
        }
        let in_run = |t: f64| (0.0..=self.duration).contains(&t);
        for (i, item) in self.script.iter().enumerate() {
            let ok = match item {
                ScriptItem::Event { at, .. } => in_run(*at),
                ScriptItem::MarkerLine { from, to, .. } => in_run(*from) && in_run(*to) && from <= to,
            };
            if !ok {
                return Err(Error::Scenario(format!("script item {i} falls outside the run")));
            }
        }
        Ok(())
    }

    pub fn ticks(&self) -> u64 {
        (self.duration / self.config.dt).round() as u64
    }

    pub fn setup(&self) -> SessionSetup {
        SessionSetup {
            name: self.name.clone(),
            config: self.config.clone(),
            environment: self.environment.clone(),
            start: DroneState::at_rest(self.start, self.start_yaw),
            device_viewpoints: self.device_viewpoints.iter().map(|v| DroneState::at_rest(v.p, v.yaw)).collect(),
            device_sensor: self.device_sensor,
        }
    }

    /// Inputs per tick, in script order within a tick.
    pub fn schedule(&self) -> Vec<Vec<InputEvent>> {
        let n = self.ticks() as usize;
        let dt = self.config.dt;
        let tick_of = |t: f64| ((t / dt).round() as usize).min(n.saturating_sub(1));
        let mut out = vec![Vec::new(); n];
        if n == 0 {
            return out;
        }
        for item in &self.script {
            match item {
                ScriptItem::Event { at, event } => out[tick_of(*at)].push(event.clone()),
                ScriptItem::MarkerLine { from, to, start, end, release } => {
                    let (a, b) = (tick_of(*from), tick_of(*to));
                    for (k, slot) in out.iter_mut().enumerate().take(b + 1).skip(a) {
                        let s = if b > a { (k - a) as f64 / (b - a) as f64 } else { 1.0 };
                        slot.push(InputEvent::Marker { p: start.lerp(end, s) });
                    }
                    if *release {
                        out[(b + 1).min(n - 1)].push(InputEvent::MarkerRelease);
                    }
                }
            }
        }
        out
    }

    /// Runs headless for the full duration, recording a trace.
    pub fn run(&self) -> Result<RunOutcome> {
        self.run_with(|_| {})
    }

    /// Like [`run`](Self::run), calling `observe` after every tick.
    pub fn run_with(&self, mut observe: impl FnMut(&Snapshot)) -> Result<RunOutcome> {
        let mut session = Session::new(self.setup())?;
        session.start_recording();
        for inputs in self.schedule() {
            let snapshot = session.step(&inputs)?;
            observe(&snapshot);
        }
        Ok(RunOutcome {
            report: session.report(),
            reference: session.reference_log().to_vec(),
            commanded: session.commanded_log().to_vec(),
            trace: session.take_trace().expect("recording was started"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOC: &str = r#"
schema = 1
name = "t"
duration = 1.0
start = [0.0, 0.0, 0.8]

[environment]
drone_radius = 0.2
bounds = { min = [-2.0, -2.0, 0.0], max = [4.0, 2.0, 2.0] }
obstacles = [{ min = [2.0, -2.0, 0.0], max = [2.5, 2.0, 2.0] }]

[config]
rng_seed = 3

[config.admittance]
profile = "squared"

[[script]]
kind = "event"
at = 0.05
event = { type = "place_goal", goal = [1.0, 0.0, 0.8] }

[[script]]
kind = "marker_line"
from = 0.5
to = 0.6
start = [0.0, 0.0, 0.8]
end = [0.1, 0.0, 0.8]
"#;

    #[test]
    fn parses_and_schedules() {
        let s = Scenario::from_toml(DOC).unwrap();
        assert_eq!(s.config.rng_seed, 3);
        assert_eq!(s.config.admittance.profile, "squared");
        assert_eq!(s.config.admittance.d_max, 70.0);
        let sched = s.schedule();
        assert_eq!(sched.len(), 100);
        assert_eq!(sched[5], vec![InputEvent::PlaceGoal { goal: Vec3::new(1.0, 0.0, 0.8) }]);
        assert_eq!(sched[50], vec![InputEvent::Marker { p: Vec3::new(0.0, 0.0, 0.8) }]);
        assert_eq!(sched[60], vec![InputEvent::Marker { p: Vec3::new(0.1, 0.0, 0.8) }]);
        assert_eq!(sched[61], vec![InputEvent::MarkerRelease]);
    }

    #[test]
    fn rejects_bad_files() {
        let outside = DOC.replace("max = [2.5, 2.0, 2.0]", "max = [5.0, 2.0, 2.0]");
        assert!(matches!(Scenario::from_toml(&outside), Err(Error::Scenario(_))));
        let schema = DOC.replace("schema = 1", "schema = 9");
        assert!(Scenario::from_toml(&schema).is_err());
        let late = DOC.replace("at = 0.05", "at = 3.0");
        assert!(Scenario::from_toml(&late).is_err());
        let typo = DOC.replace("rng_seed = 3", "rng_sed = 3");
        assert!(Scenario::from_toml(&typo).is_err());
    }
}
