use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

/// Virtual mass-spring-damper parameters (diagonal per world axis) and the
/// user-force gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmittanceParams {
    pub mass: Vec3,
    pub stiffness: Vec3,
    pub d_min: f64,
    pub d_max: f64,
    pub profile: String,
    pub k_p: Vec3,
    pub k_d: Vec3,
}

impl Default for AdmittanceParams {
    fn default() -> Self {
        Self {
            mass: Vec3::repeat(2.4),
            stiffness: Vec3::repeat(20.0),
            d_min: 1.0,
            d_max: 70.0,
            profile: "linear".into(),
            k_p: Vec3::repeat(20.0),
            k_d: Vec3::repeat(4.0),
        }
    }
}

impl AdmittanceParams {
    pub fn validate(&self) -> Result<()> {
        if !self.mass.iter().all(|m| *m > 0.0) {
            return Err(Error::InvalidParam("mass entries must be positive".into()));
        }
        if !self.stiffness.iter().chain(self.k_p.iter()).chain(self.k_d.iter()).all(|k| *k >= 0.0) {
            return Err(Error::InvalidParam("stiffness and user gains must be non-negative".into()));
        }
        if !(self.d_min > 0.0 && self.d_min <= self.d_max) {
            return Err(Error::InvalidParam("damping bounds must satisfy 0 < d_min <= d_max".into()));
        }
        Ok(())
    }
}

/// Commanded-minus-reference perturbation and its rate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AdmittanceState {
    pub x: Vec3,
    pub x_dot: Vec3,
}

/// One semi-implicit Euler step of `M·ẍ + D·ẋ + K·x = F_v` per axis.
///
/// Damping is taken implicitly and the spring explicitly, then the position
/// advances with the updated rate. With `F_v = 0` the energy
/// `½Mẋ² + ½Kx²` never grows.
pub fn admittance_step(
    state: &AdmittanceState,
    f_v: &Vec3,
    damping: f64,
    params: &AdmittanceParams,
    dt: f64,
) -> Result<AdmittanceState> {
    if !(dt > 0.0) {
        return Err(Error::NonPositiveDt(dt));
    }
    if !f_v.iter().all(|f| f.is_finite()) {
        return Err(Error::NonFinite("virtual force"));
    }
    let mut next = *state;
    for k in 0..3 {
        let m = params.mass[k];
        next.x_dot[k] = (m * state.x_dot[k] + dt * (f_v[k] - params.stiffness[k] * state.x[k])) / (m + dt * damping);
        next.x[k] = state.x[k] + dt * next.x_dot[k];
    }
    Ok(next)
}
