//! Deterministic human-drone shared-control simulator.
//!
//! The crate couples four pieces into a fixed-rate loop:
//!
//! - [`world`]: ground-truth box environments, a ray-cast depth sensor and a
//!   PD-tracked double-integrator drone.
//! - [`map`]: a sparse voxel occupancy set fed by robot and device point clouds.
//! - [`dynamics`]: marker estimation, user and repulsive forces, angle-dependent
//!   damping profiles and the admittance integrator.
//! - [`planner`]: a local-horizon RRT* and the reference projection on its
//!   setpoint chain.
//!
//! [`session`] orchestrates them tick by tick, records traces and replays
//! them bit-exactly.

// `!(x > 0.0)` also rejects NaN, which is the point in every validator.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod map;
pub mod planner;
pub mod scenario;
pub mod session;
pub mod world;

mod error;

pub use error::{Error, Result};

/// 3-vectors in the world frame, metres unless stated otherwise.
pub type Vec3 = nalgebra::Vector3<f64>;
