use serde::{Deserialize, Serialize};

use super::{AdmittanceParams, MarkerEstimate};
use crate::map::HorizonVoxel;
use crate::{Error, Result, Vec3};

/// Exponential-decay obstacle field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldParams {
    /// Force at contact (N).
    pub force_scale: f64,
    /// Decay constant (1/m).
    pub decay: f64,
    /// Radius beyond which voxels exert no force (m).
    pub horizon: f64,
}

impl Default for FieldParams {
    fn default() -> Self {
        Self { force_scale: 8.0, decay: 1.0, horizon: 1.5 }
    }
}

impl FieldParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.force_scale > 0.0 && self.decay > 0.0 && self.horizon > 0.0) {
            return Err(Error::InvalidParam("field scale, decay and horizon must be positive".into()));
        }
        Ok(())
    }
}

/// Per-voxel repulsion magnitude at distance `d`:
/// `F_s/k · e^(−λd) · (1 − e^(h−d))` with `k = 1 − e^h`.
///
/// Written with `expm1` so that both boundaries are exact: `F_s` at `d = 0`
/// and `0` at `d = h`.
pub fn repulsive_magnitude(d: f64, field: &FieldParams) -> f64 {
    let h = field.horizon;
    field.force_scale * (-field.decay * d).exp() * (h - d).exp_m1() / h.exp_m1()
}

/// Sum of per-voxel repulsions, each pointing from the voxel center toward `p`.
pub fn repulsive_force(voxels: &[HorizonVoxel], p: &Vec3, field: &FieldParams) -> Vec3 {
    let mut total = Vec3::zeros();
    for v in voxels {
        if v.distance > field.horizon {
            continue;
        }
        let away = p - v.center;
        let n = away.norm();
        if n == 0.0 {
            continue;
        }
        total += away * (repulsive_magnitude(v.distance, field) / n);
    }
    total
}

/// Spring-damper pull of the drone toward the interaction marker.
pub fn user_force(p: &Vec3, p_dot: &Vec3, est: &MarkerEstimate, params: &AdmittanceParams) -> Vec3 {
    params.k_p.component_mul(&(est.p_u - p)) + params.k_d.component_mul(&(est.v_u - p_dot))
}

pub fn compose_virtual_force(f_usr: &Vec3, f_rep: &Vec3) -> Vec3 {
    f_usr + f_rep
}

/// Angle between the virtual force and the segment direction, in `[0, π]`.
/// `None` when the force vanishes and the angle is undefined.
pub fn angle_to_segment(f_v: &Vec3, l_i: &Vec3) -> Option<f64> {
    let nf = f_v.norm();
    let nl = l_i.norm();
    if nf == 0.0 || nl == 0.0 {
        return None;
    }
    Some((l_i.dot(f_v) / (nf * nl)).clamp(-1.0, 1.0).acos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_4, PI};

    fn voxel(center: Vec3, p: &Vec3) -> HorizonVoxel {
        HorizonVoxel { center, distance: (center - p).norm() }
    }

    #[test]
    fn field_boundaries() {
        let f = FieldParams::default();
        assert_eq!(repulsive_magnitude(0.0, &f), 8.0);
        assert_eq!(repulsive_magnitude(1.5, &f), 0.0);
    }

    #[test]
    fn single_voxel_force() {
        let f = FieldParams::default();
        let p = Vec3::new(0.3, -0.2, 0.8);
        let v = voxel(p + Vec3::new(0.75, 0.0, 0.0), &p);
        let force = repulsive_force(&[v], &p, &f);
        assert!((force.norm() - 1.2122).abs() < 1e-3);
        assert!(force.y == 0.0 && force.z == 0.0 && force.x < 0.0);
        assert_eq!(repulsive_force(&[], &p, &f), Vec3::zeros());
    }

    #[test]
    fn voxel_at_horizon_exerts_nothing() {
        let f = FieldParams::default();
        let p = Vec3::zeros();
        let v = HorizonVoxel { center: Vec3::new(1.5, 0.0, 0.0), distance: 1.5 };
        assert_eq!(repulsive_force(&[v], &p, &f).norm(), 0.0);
    }

    #[test]
    fn opposite_voxels_cancel() {
        let f = FieldParams::default();
        let p = Vec3::zeros();
        let vs = [voxel(Vec3::new(0.5, 0.0, 0.0), &p), voxel(Vec3::new(-0.5, 0.0, 0.0), &p)];
        assert_eq!(repulsive_force(&vs, &p, &f), Vec3::zeros());
    }

    #[test]
    fn user_force_cases() {
        let mut params = AdmittanceParams { k_p: Vec3::repeat(1.0), k_d: Vec3::zeros(), ..AdmittanceParams::default() };
        let est = MarkerEstimate::at(Vec3::zeros());
        let f = user_force(&Vec3::new(1.0, 0.0, 0.0), &Vec3::zeros(), &est, &params);
        assert_eq!(f, Vec3::new(-1.0, 0.0, 0.0));
        params.k_p *= 2.0;
        let f2 = user_force(&Vec3::new(1.0, 0.0, 0.0), &Vec3::zeros(), &est, &params);
        assert_eq!(f2, f * 2.0);
        let at = MarkerEstimate::at(Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(user_force(&at.p_u, &at.v_u, &at, &AdmittanceParams::default()), Vec3::zeros());
    }

    #[test]
    fn angles() {
        let l = Vec3::new(1.0, 0.0, 0.0);
        assert_eq!(angle_to_segment(&Vec3::new(3.0, 0.0, 0.0), &l), Some(0.0));
        assert_eq!(angle_to_segment(&-l, &l), Some(PI));
        assert!((angle_to_segment(&Vec3::new(1.0, 1.0, 0.0), &l).unwrap() - FRAC_PI_4).abs() < 1e-12);
        assert_eq!(angle_to_segment(&Vec3::zeros(), &l), None);
    }

    #[test]
    fn composition() {
        let a = Vec3::new(1.0, 0.0, 0.0);
        let b = Vec3::new(0.0, 2.0, 0.0);
        assert_eq!(compose_virtual_force(&a, &b), Vec3::new(1.0, 2.0, 0.0));
        assert_eq!(compose_virtual_force(&a, &Vec3::zeros()), a);
        assert_eq!(compose_virtual_force(&a, &-a), Vec3::zeros());
    }
}
