use serde::{Deserialize, Serialize};

use crate::dynamics::{AdmittanceParams, FieldParams, KfParams};
use crate::map::DEFAULT_VOXEL_SIZE;
use crate::planner::PlannerParams;
use crate::world::{DroneParams, SensorConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    /// Tick period (s).
    pub dt: f64,
    pub admittance: AdmittanceParams,
    /// Fixed damping used while the planner is off.
    pub fpvi_damping: f64,
    pub field: FieldParams,
    pub planner: PlannerParams,
    pub sensor: SensorConfig,
    pub drone: DroneParams,
    pub kf: KfParams,
    pub voxel_size: f64,
    /// Seeds every planner invocation; `planner.rng_seed` is ignored by sessions.
    pub rng_seed: u64,
    /// Setpoint capture radius (m).
    pub capture_radius: f64,
    pub goal_tolerance: f64,
    /// Speed of the reference along the path when nobody holds the marker (m/s).
    pub cruise_speed: f64,
    /// Minimum time between two planner launches (s).
    pub replan_period: f64,
    /// Ticks between launching a plan and adopting its result.
    pub planner_latency_ticks: u32,
    /// Drone-to-reference distance above which releasing the marker replans
    /// from the drone position.
    pub rebase_distance: f64,
    /// RMSE over the last N ticks instead of the whole run.
    pub metrics_window: Option<usize>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            admittance: AdmittanceParams::default(),
            fpvi_damping: 20.0,
            field: FieldParams::default(),
            planner: PlannerParams::default(),
            sensor: SensorConfig::default(),
            drone: DroneParams::default(),
            kf: KfParams::default(),
            voxel_size: DEFAULT_VOXEL_SIZE,
            rng_seed: 0,
            capture_radius: 0.15,
            goal_tolerance: 0.2,
            cruise_speed: 0.5,
            replan_period: 0.5,
            planner_latency_ticks: 1,
            rebase_distance: 0.5,
            metrics_window: None,
        }
    }
}

/// Keys that cannot change once a session runs.
const FROZEN_KEYS: [&str; 3] = ["dt", "voxel_size", "rng_seed"];

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::NonPositiveDt(self.dt));
        }
        if !(self.voxel_size > 0.0) {
            return Err(Error::InvalidParam("voxel_size must be positive".into()));
        }
        if !(self.fpvi_damping > 0.0) {
            return Err(Error::InvalidParam("fpvi_damping must be positive".into()));
        }
        if !(self.capture_radius > 0.0 && self.goal_tolerance > 0.0 && self.cruise_speed >= 0.0) {
            return Err(Error::InvalidParam("capture radius, goal tolerance and cruise speed".into()));
        }
        if !(self.replan_period >= 0.0 && self.rebase_distance > 0.0) {
            return Err(Error::InvalidParam("replan period and rebase distance".into()));
        }
        if self.metrics_window == Some(0) {
            return Err(Error::InvalidParam("metrics_window must be positive".into()));
        }
        self.admittance.validate()?;
        self.field.validate()?;
        self.planner.validate()?;
        self.sensor.validate()?;
        self.drone.validate()?;
        Ok(())
    }

    pub fn replan_period_ticks(&self) -> u64 {
        (self.replan_period / self.dt).round() as u64
    }

    /// Applies a dotted `key=value` override, e.g. `field.horizon=2.0` or
    /// `admittance.stiffness=30` (a scalar fills all three axes).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |msg: String| Error::InvalidParam(format!("{key}: {msg}"));
        let mut doc = toml::Value::try_from(&*self).map_err(|e| bad(e.to_string()))?;
        let parsed = parse_value(value);

        let mut slot = &mut doc;
        for part in key.split('.') {
            slot = slot
                .as_table_mut()
                .and_then(|t| t.get_mut(part))
                .ok_or_else(|| bad("unknown key".into()))?;
        }
        *slot = coerce(slot, parsed).ok_or_else(|| bad(format!("cannot assign `{value}`")))?;
        let next: SessionConfig = doc.try_into().map_err(|e: toml::de::Error| bad(e.to_string()))?;
        next.validate()?;
        *self = next;
        Ok(())
    }

    /// Like [`set`](Self::set) but refuses keys that would break a running session.
    pub fn set_live(&mut self, key: &str, value: &str) -> Result<()> {
        if FROZEN_KEYS.contains(&key) {
            return Err(Error::InvalidParam(format!("{key} cannot change during a session")));
        }
        self.set(key, value)
    }
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

fn coerce(current: &toml::Value, new: toml::Value) -> Option<toml::Value> {
    use toml::Value as V;
    match (current, new) {
        (V::Float(_), V::Integer(i)) => Some(V::Float(i as f64)),
        (V::Array(items), v @ (V::Integer(_) | V::Float(_))) => {
            let item = coerce(items.first()?, v)?;
            Some(V::Array(vec![item; items.len()]))
        }
        (V::Array(items), V::Array(new_items)) if items.len() == new_items.len() => items
            .iter()
            .zip(new_items)
            .map(|(c, n)| coerce(c, n))
            .collect::<Option<Vec<_>>>()
            .map(V::Array),
        (cur, n) if std::mem::discriminant(cur) == std::mem::discriminant(&n) => Some(n),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Vec3;

    #[test]
    fn dotted_overrides() {
        let mut c = SessionConfig::default();
        c.set("field.horizon", "2").unwrap();
        assert_eq!(c.field.horizon, 2.0);
        c.set("admittance.stiffness", "30").unwrap();
        assert_eq!(c.admittance.stiffness, Vec3::repeat(30.0));
        c.set("admittance.k_p", "[1, 2, 3.5]").unwrap();
        assert_eq!(c.admittance.k_p, Vec3::new(1.0, 2.0, 3.5));
        c.set("admittance.profile", "squared").unwrap();
        assert_eq!(c.admittance.profile, "squared");
        c.set("planner.planar", "false").unwrap();
        assert!(!c.planner.planar);
    }

    #[test]
    fn rejected_overrides_leave_config_untouched() {
        let mut c = SessionConfig::default();
        assert!(c.set("field.nope", "1").is_err());
        assert!(c.set("field.horizon", "-1").is_err());
        assert!(c.set("planner.planar", "3").is_err());
        assert!(c.set_live("dt", "0.02").is_err());
        assert_eq!(c, SessionConfig::default());
    }
}
