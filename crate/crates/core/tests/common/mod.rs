#![allow(dead_code, clippy::needless_range_loop)]

use std::path::PathBuf;

use aerovac_core::map::{PointCloudSample, Source, VoxelMap};
use aerovac_core::scenario::Scenario;
use aerovac_core::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

pub fn scenario(name: &str) -> Scenario {
    Scenario::load(scenario_path(&format!("{name}.toml"))).expect("bundled scenario loads")
}

/// Per-voxel field magnitude, written out literally.
pub fn field_magnitude(d: f64, f_s: f64, lambda: f64, h: f64) -> f64 {
    let k = 1.0 - h.exp();
    f_s / k * (-lambda * d).exp() * (1.0 - (h - d).exp())
}

/// Response of `m·x'' + d·x' + k·x = f` from rest at the origin.
pub fn step_response(m: f64, d: f64, k: f64, f: f64, t: f64) -> f64 {
    let xs = f / k;
    let wn = (k / m).sqrt();
    let zeta = d / (2.0 * (k * m).sqrt());
    if (zeta - 1.0).abs() < 1e-12 {
        xs * (1.0 - (-wn * t).exp() * (1.0 + wn * t))
    } else if zeta < 1.0 {
        let wd = wn * (1.0 - zeta * zeta).sqrt();
        xs * (1.0 - (-zeta * wn * t).exp() * ((wd * t).cos() + zeta * wn / wd * (wd * t).sin()))
    } else {
        let root = wn * (zeta * zeta - 1.0).sqrt();
        let (r1, r2) = (-zeta * wn + root, -zeta * wn - root);
        xs * (1.0 + (r2 * (r1 * t).exp() - r1 * (r2 * t).exp()) / (r1 - r2))
    }
}

/// Scalar constant-acceleration Kalman filter on one axis, plain arrays.
#[derive(Debug, Clone)]
pub struct AxisKf {
    pub x: [f64; 3],
    pub p: [[f64; 3]; 3],
    sigma_a: f64,
    sigma_m: f64,
}

impl AxisKf {
    pub fn new(z: f64, sigma_a: f64, sigma_m: f64, vel_std: f64, acc_std: f64) -> Self {
        let mut p = [[0.0; 3]; 3];
        p[0][0] = sigma_m * sigma_m;
        p[1][1] = vel_std * vel_std;
        p[2][2] = acc_std * acc_std;
        Self { x: [z, 0.0, 0.0], p, sigma_a, sigma_m }
    }

    pub fn step(&mut self, z: f64, dt: f64) {
        let f = [[1.0, dt, 0.5 * dt * dt], [0.0, 1.0, dt], [0.0, 0.0, 1.0]];
        let g = [0.5 * dt * dt, dt, 1.0];
        let mut x = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                x[i] += f[i][j] * self.x[j];
            }
        }
        let mut fp = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    fp[i][j] += f[i][k] * self.p[k][j];
                }
            }
        }
        let mut p = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    p[i][j] += fp[i][k] * f[j][k];
                }
                p[i][j] += g[i] * g[j] * self.sigma_a * self.sigma_a;
            }
        }
        // scalar innovation: H = [1 0 0]
        let s = p[0][0] + self.sigma_m * self.sigma_m;
        let gain = [p[0][0] / s, p[1][0] / s, p[2][0] / s];
        let innov = z - x[0];
        for i in 0..3 {
            x[i] += gain[i] * innov;
        }
        let mut next = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                next[i][j] = p[i][j] - gain[i] * p[0][j];
            }
        }
        self.x = x;
        self.p = next;
    }
}

/// Solid boxes rasterized into a map at voxel resolution.
pub fn map_with_boxes(boxes: &[(Vec3, Vec3)], voxel_size: f64) -> VoxelMap {
    let mut points = Vec::new();
    for (lo, hi) in boxes {
        let mut x = lo.x;
        while x <= hi.x {
            let mut y = lo.y;
            while y <= hi.y {
                let mut z = lo.z;
                while z <= hi.z {
                    points.push(Vec3::new(x, y, z));
                    z += voxel_size * 0.5;
                }
                y += voxel_size * 0.5;
            }
            x += voxel_size * 0.5;
        }
    }
    let mut map = VoxelMap::new(voxel_size).unwrap();
    map.integrate_point_cloud(&PointCloudSample { points, source: Source::Robot, stamp: 0.0 }).unwrap();
    map
}

/// A cluttered planar world with free start and goal on the flight plane.
pub fn random_box_world(seed: u64, clearance: f64) -> (VoxelMap, Vec3, Vec3) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let boxes: Vec<(Vec3, Vec3)> = (0..6)
            .map(|_| {
                let c = Vec3::new(rng.gen_range(0.5..2.5), rng.gen_range(-1.5..1.5), 0.8);
                let half = Vec3::new(rng.gen_range(0.1..0.4), rng.gen_range(0.1..0.6), 0.4);
                (c - half, c + half)
            })
            .collect();
        let map = map_with_boxes(&boxes, 0.2);
        let start = Vec3::new(-0.2, rng.gen_range(-1.0..1.0), 0.8);
        let goal = Vec3::new(2.8, rng.gen_range(-1.0..1.0), 0.8);
        if map.is_segment_free(&start, &start, clearance) && map.is_segment_free(&goal, &goal, clearance) {
            return (map, start, goal);
        }
    }
}

/// Uniform random points inside the box `[lo, hi]`.
pub fn random_box_cloud(seed: u64, lo: Vec3, hi: Vec3) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..500)
        .map(|_| Vec3::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y), rng.gen_range(lo.z..hi.z)))
        .collect()
}
