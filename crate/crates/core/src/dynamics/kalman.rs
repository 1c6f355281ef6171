//! Constant-acceleration Kalman filter for the interaction marker.
//!
//! State layout is `[p; v; a]` (9 entries); only position is measured.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

type Mat9 = SMatrix<f64, 9, 9>;
type Mat3x9 = SMatrix<f64, 3, 9>;
type Vec9 = SVector<f64, 9>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KfParams {
    /// Std of the per-step acceleration increment (m/s²).
    pub accel_noise: f64,
    /// Std of the position measurement (m).
    pub meas_noise: f64,
    /// Initial velocity and acceleration std.
    pub init_vel_std: f64,
    pub init_acc_std: f64,
}

impl Default for KfParams {
    fn default() -> Self {
        Self { accel_noise: 2.0, meas_noise: 0.01, init_vel_std: 1.0, init_acc_std: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerEstimate {
    pub p_u: Vec3,
    pub v_u: Vec3,
    pub a_u: Vec3,
    pub covariance: Mat9,
}

impl MarkerEstimate {
    /// Zero-covariance estimate resting at `p`.
    pub fn at(p: Vec3) -> Self {
        Self { p_u: p, v_u: Vec3::zeros(), a_u: Vec3::zeros(), covariance: Mat9::zeros() }
    }

    pub fn initialize(measurement: &Vec3, params: &KfParams) -> Result<Self> {
        check(measurement)?;
        let mut cov = Mat9::zeros();
        for k in 0..3 {
            cov[(k, k)] = params.meas_noise.powi(2);
            cov[(k + 3, k + 3)] = params.init_vel_std.powi(2);
            cov[(k + 6, k + 6)] = params.init_acc_std.powi(2);
        }
        Ok(Self { p_u: *measurement, v_u: Vec3::zeros(), a_u: Vec3::zeros(), covariance: cov })
    }

    fn state(&self) -> Vec9 {
        let mut s = Vec9::zeros();
        s.fixed_rows_mut::<3>(0).copy_from(&self.p_u);
        s.fixed_rows_mut::<3>(3).copy_from(&self.v_u);
        s.fixed_rows_mut::<3>(6).copy_from(&self.a_u);
        s
    }
}

fn check(z: &Vec3) -> Result<()> {
    if z.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("marker measurement"))
    }
}

fn transition(dt: f64) -> Mat9 {
    let mut f = Mat9::identity();
    for k in 0..3 {
        f[(k, k + 3)] = dt;
        f[(k, k + 6)] = 0.5 * dt * dt;
        f[(k + 3, k + 6)] = dt;
    }
    f
}

fn process_noise(dt: f64, sigma_a: f64) -> Mat9 {
    let g = [0.5 * dt * dt, dt, 1.0];
    let mut q = Mat9::zeros();
    for axis in 0..3 {
        for i in 0..3 {
            for j in 0..3 {
                q[(axis + 3 * i, axis + 3 * j)] = g[i] * g[j] * sigma_a * sigma_a;
            }
        }
    }
    q
}

/// Predict over `dt` then correct with a position measurement (Joseph form).
pub fn kf_update(est: &MarkerEstimate, measurement: &Vec3, dt: f64, params: &KfParams) -> Result<MarkerEstimate> {
    if !(dt > 0.0) {
        return Err(Error::NonPositiveDt(dt));
    }
    check(measurement)?;
    let f = transition(dt);
    let x = f * est.state();
    let p = f * est.covariance * f.transpose() + process_noise(dt, params.accel_noise);

    let mut h = Mat3x9::zeros();
    h.fixed_view_mut::<3, 3>(0, 0).fill_with_identity();
    let r = nalgebra::Matrix3::identity() * params.meas_noise.powi(2);
    let s = h * p * h.transpose() + r;
    let s_inv = s.try_inverse().ok_or(Error::NonFinite("innovation covariance"))?;
    let gain = p * h.transpose() * s_inv;
    let innovation = measurement - h * x;
    let x = x + gain * innovation;
    let i_kh = Mat9::identity() - gain * h;
    let p = i_kh * p * i_kh.transpose() + gain * r * gain.transpose();
    let p = (p + p.transpose()) * 0.5;

    Ok(MarkerEstimate {
        p_u: x.fixed_rows::<3>(0).into_owned(),
        v_u: x.fixed_rows::<3>(3).into_owned(),
        a_u: x.fixed_rows::<3>(6).into_owned(),
        covariance: p,
    })
}

/// Owns the optional estimate: the first measurement initializes it, later
/// ones run [`kf_update`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MarkerFilter {
    pub params: KfParams,
    estimate: Option<MarkerEstimate>,
}

impl MarkerFilter {
    pub fn new(params: KfParams) -> Self {
        Self { params, estimate: None }
    }

    pub fn estimate(&self) -> Option<&MarkerEstimate> {
        self.estimate.as_ref()
    }

    pub fn reset(&mut self) {
        self.estimate = None;
    }

    pub fn update(&mut self, measurement: &Vec3, dt: f64) -> Result<&MarkerEstimate> {
        let next = match &self.estimate {
            None => MarkerEstimate::initialize(measurement, &self.params)?,
            Some(est) => kf_update(est, measurement, dt, &self.params)?,
        };
        Ok(self.estimate.insert(next))
    }
}
