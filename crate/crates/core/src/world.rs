//! Ground-truth environment, simulated depth sensing and drone tracking dynamics.

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

/// Axis-aligned box in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|k| self.min[k].is_finite() && self.max[k].is_finite() && self.min[k] <= self.max[k])
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.contains(&other.min) && self.contains(&other.max)
    }

    /// Euclidean distance from `p` to the box surface (zero inside).
    pub fn distance(&self, p: &Vec3) -> f64 {
        let mut d2 = 0.0;
        for k in 0..3 {
            let e = (self.min[k] - p[k]).max(p[k] - self.max[k]).max(0.0);
            d2 += e * e;
        }
        d2.sqrt()
    }

    /// Distance from `p` to the nearest point of the box boundary, valid inside and outside.
    pub fn surface_distance(&self, p: &Vec3) -> f64 {
        if self.contains(p) {
            (0..3)
                .map(|k| (p[k] - self.min[k]).min(self.max[k] - p[k]))
                .fold(f64::INFINITY, f64::min)
        } else {
            self.distance(p)
        }
    }

    /// Slab test. Returns the entry parameter and the axis of the entered face,
    /// or `None` when the ray misses or starts inside the box.
    fn ray_entry(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, usize)> {
        let mut t_enter = f64::NEG_INFINITY;
        let mut t_exit = f64::INFINITY;
        let mut axis = 0;
        for k in 0..3 {
            if dir[k] == 0.0 {
                if origin[k] < self.min[k] || origin[k] > self.max[k] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[k];
            let (mut t0, mut t1) = ((self.min[k] - origin[k]) * inv, (self.max[k] - origin[k]) * inv);
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            if t0 > t_enter {
                t_enter = t0;
                axis = k;
            }
            t_exit = t_exit.min(t1);
        }
        (t_enter <= t_exit && t_enter > 0.0).then_some((t_enter, axis))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub bounds: Aabb,
    #[serde(default)]
    pub obstacles: Vec<Aabb>,
    pub drone_radius: f64,
}

impl Environment {
    pub fn validate(&self) -> Result<()> {
        if !self.bounds.is_valid() {
            return Err(Error::Scenario("invalid bounds".into()));
        }
        if !(self.drone_radius > 0.0) {
            return Err(Error::Scenario("drone_radius must be positive".into()));
        }
        for (i, b) in self.obstacles.iter().enumerate() {
            if !b.is_valid() {
                return Err(Error::Scenario(format!("obstacle {i} is malformed")));
            }
            if !self.bounds.contains_box(b) {
                return Err(Error::Scenario(format!("obstacle {i} lies outside bounds")));
            }
        }
        Ok(())
    }

    pub fn is_inside_obstacle(&self, p: &Vec3) -> bool {
        self.obstacles.iter().any(|b| b.contains(p))
    }

    pub fn distance_to_surface(&self, p: &Vec3) -> f64 {
        self.obstacles
            .iter()
            .map(|b| b.surface_distance(p))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroneState {
    pub p: Vec3,
    pub v: Vec3,
    pub yaw: f64,
}

impl DroneState {
    pub fn at_rest(p: Vec3, yaw: f64) -> Self {
        Self { p, v: Vec3::zeros(), yaw }
    }
}

/// PD tracking gains and limits of the simulated autopilot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DroneParams {
    pub kp: f64,
    pub kd: f64,
    pub max_accel: f64,
    pub max_speed: f64,
}

impl Default for DroneParams {
    fn default() -> Self {
        Self { kp: 16.0, kd: 8.0, max_accel: 6.0, max_speed: 2.0 }
    }
}

impl DroneParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.kp > 0.0 && self.kd >= 0.0 && self.max_accel > 0.0 && self.max_speed > 0.0) {
            return Err(Error::InvalidParam("drone gains and limits must be positive".into()));
        }
        Ok(())
    }
}

/// Below this horizontal speed the yaw is held.
pub const YAW_HOLD_SPEED: f64 = 0.05;

/// One step of the double-integrator drone under PD tracking toward `p_c`.
pub fn step_drone(state: &DroneState, p_c: &Vec3, dt: f64, params: &DroneParams) -> Result<DroneState> {
    if !(dt > 0.0) {
        return Err(Error::NonPositiveDt(dt));
    }
    if !p_c.iter().all(|c| c.is_finite()) {
        return Err(Error::NonFinite("commanded position"));
    }
    let mut a = (p_c - state.p) * params.kp - state.v * params.kd;
    let an = a.norm();
    if an > params.max_accel {
        a *= params.max_accel / an;
    }
    let mut v = state.v + a * dt;
    let vn = v.norm();
    if vn > params.max_speed {
        v *= params.max_speed / vn;
    }
    let p = state.p + v * dt;
    let horizontal = v.x.hypot(v.y);
    let yaw = if horizontal >= YAW_HOLD_SPEED { v.y.atan2(v.x) } else { state.yaw };
    Ok(DroneState { p, v, yaw })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    pub fov_h: f64,
    pub fov_v: f64,
    pub max_range: f64,
    pub rays_h: u32,
    pub rays_v: u32,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self { fov_h: 1.6, fov_v: 1.0, max_range: 5.0, rays_h: 48, rays_v: 24 }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<()> {
        let pi = std::f64::consts::PI;
        if !(self.fov_h > 0.0 && self.fov_h <= pi && self.fov_v > 0.0 && self.fov_v <= pi) {
            return Err(Error::InvalidParam("sensor field of view must lie in (0, pi]".into()));
        }
        if !(self.max_range > 0.0) || self.rays_h == 0 || self.rays_v == 0 {
            return Err(Error::InvalidParam("sensor range and ray counts must be positive".into()));
        }
        Ok(())
    }

    fn angles(count: u32, fov: f64) -> impl Iterator<Item = f64> {
        (0..count).map(move |i| {
            if count == 1 {
                0.0
            } else {
                fov * (i as f64 / (count - 1) as f64 - 0.5)
            }
        })
    }
}

/// Casts a `rays_h × rays_v` fan from the drone position along its yaw and
/// returns the nearest obstacle hit of every ray within range.
pub fn simulate_depth_scan(env: &Environment, pose: &DroneState, cfg: &SensorConfig) -> Vec<Vec3> {
    let origin = pose.p;
    let mut cloud = Vec::new();
    for el in SensorConfig::angles(cfg.rays_v, cfg.fov_v) {
        for az in SensorConfig::angles(cfg.rays_h, cfg.fov_h) {
            let heading = pose.yaw + az;
            let dir = Vec3::new(el.cos() * heading.cos(), el.cos() * heading.sin(), el.sin());
            let mut best: Option<(f64, usize, &Aabb)> = None;
            for b in &env.obstacles {
                if let Some((t, axis)) = b.ray_entry(&origin, &dir) {
                    if t <= cfg.max_range && best.is_none_or(|(bt, _, _)| t < bt) {
                        best = Some((t, axis, b));
                    }
                }
            }
            if let Some((t, axis, b)) = best {
                let mut hit = origin + dir * t;
                // Snap onto the entered face so hits are exact surface points.
                hit[axis] = if dir[axis] > 0.0 { b.min[axis] } else { b.max[axis] };
                for k in 0..3 {
                    if k != axis {
                        hit[k] = hit[k].clamp(b.min[k], b.max[k]);
                    }
                }
                cloud.push(hit);
            }
        }
    }
    cloud
}
