use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

/// Root mean square of pointwise Euclidean distances.
pub fn rmse(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let sum: f64 = a.iter().zip(b).map(|(p, q)| (p - q).norm_squared()).sum();
    Ok((sum / a.len() as f64).sqrt())
}

/// Summary of a run, written by headless replays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ticks: u64,
    pub duration: f64,
    /// RMSE between reference and commanded trajectories (m).
    pub rmse: f64,
    /// Minimum distance of the commanded position to any occupied voxel
    /// center (m); `None` while the map is empty.
    pub min_clearance: Option<f64>,
    /// Time the goal was first reached (s).
    pub goal_reach_time: Option<f64>,
    pub finished: bool,
}
