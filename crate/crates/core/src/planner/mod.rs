//! Local-horizon RRT* and the reference projection on its setpoint chain.

mod rrt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

pub use rrt::{plan, plan_local};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerParams {
    /// Radius of the sampling region around the start (m).
    pub horizon: f64,
    pub step_size: f64,
    pub goal_bias: f64,
    /// Upper bound of the shrinking RRT* neighbourhood (m).
    pub rewire_radius: f64,
    pub max_iterations: u32,
    pub clearance: f64,
    pub rng_seed: u64,
    /// Sample in the horizontal plane through the start.
    pub planar: bool,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            horizon: 3.0,
            step_size: 0.3,
            goal_bias: 0.1,
            rewire_radius: 0.6,
            max_iterations: 5000,
            clearance: 0.35,
            rng_seed: 0,
            planar: true,
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.goal_bias) {
            return Err(Error::InvalidParam("goal_bias must lie in [0, 1]".into()));
        }
        if !(self.step_size > 0.0 && self.horizon > 0.0 && self.rewire_radius > 0.0 && self.clearance >= 0.0) {
            return Err(Error::InvalidParam("planner lengths must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParam("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Setpoints `P_S0..N` with their tree costs and the active segment
/// `(P_S(i−1), P_S(i))`, `i ∈ [1, N]` (0 for a single-setpoint path).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerPath {
    pub setpoints: Vec<Vec3>,
    pub costs: Vec<f64>,
    pub active_segment: usize,
}

impl PlannerPath {
    pub fn single(p: Vec3) -> Self {
        Self { setpoints: vec![p], costs: vec![0.0], active_segment: 0 }
    }

    fn from_chain(setpoints: Vec<Vec3>, costs: Vec<f64>) -> Self {
        let active_segment = usize::from(setpoints.len() > 1);
        Self { setpoints, costs, active_segment }
    }

    pub fn last_index(&self) -> usize {
        self.setpoints.len() - 1
    }

    pub fn final_setpoint(&self) -> Vec3 {
        self.setpoints[self.last_index()]
    }

    pub fn total_cost(&self) -> f64 {
        self.costs[self.last_index()]
    }

    /// Endpoints of the active segment; degenerate for a single setpoint.
    pub fn active_endpoints(&self) -> (Vec3, Vec3) {
        if self.active_segment == 0 {
            let p = self.setpoints[0];
            (p, p)
        } else {
            (self.setpoints[self.active_segment - 1], self.setpoints[self.active_segment])
        }
    }

    /// Unit direction `l_i` of the active segment.
    pub fn active_direction(&self) -> Option<Vec3> {
        let (a, b) = self.active_endpoints();
        (b - a).try_normalize(0.0)
    }
}

/// Cost of a new node linked to its parent.
pub fn node_cost(parent_cost: f64, link_cost: f64) -> f64 {
    parent_cost + link_cost
}

/// `goal` clipped to the planning sphere of radius `h_plan` around `center`.
pub fn local_goal(goal: &Vec3, center: &Vec3, h_plan: f64) -> Vec3 {
    let offset = goal - center;
    let d = offset.norm();
    if d <= h_plan {
        *goal
    } else {
        center + offset * (h_plan / d)
    }
}

/// Orthogonal projection of the marker estimate onto the active segment,
/// clamped to its endpoints.
pub fn project_reference(p_u: &Vec3, path: &PlannerPath) -> Vec3 {
    let (a, b) = path.active_endpoints();
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return a;
    }
    let t = ((p_u - a).dot(&ab) / len2).clamp(0.0, 1.0);
    a + ab * t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Advance {
    pub active_segment: usize,
    /// The final setpoint was captured but it is not the goal.
    pub replan: bool,
    pub final_reached: bool,
}

/// Captures setpoints within `eps` of `p`. The active segment only moves
/// forward; when two setpoints are within reach the higher index wins.
pub fn advance_segment(p: &Vec3, path: &mut PlannerPath, goal: &Vec3, eps: f64) -> Advance {
    let last = path.last_index();
    let from = path.active_segment.max(if last == 0 { 0 } else { 1 });
    let captured = (from..=last).rev().find(|&j| (p - path.setpoints[j]).norm() < eps);
    let mut final_reached = false;
    if let Some(j) = captured {
        path.active_segment = path.active_segment.max((j + 1).min(last));
        final_reached = j == last;
    }
    let replan = final_reached && (path.final_setpoint() - goal).norm() >= eps;
    Advance { active_segment: path.active_segment, replan, final_reached }
}
