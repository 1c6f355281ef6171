//! Virtual-physical force math: marker estimation, user and repulsive forces,
//! angle-dependent damping and the admittance integrator.

mod admittance;
mod damping;
mod forces;
mod kalman;

pub use admittance::{admittance_step, AdmittanceParams, AdmittanceState};
pub use damping::{
    variable_damping, DampingProfile, ExponentialProfile, LinearProfile, ProfileRegistry, SquaredProfile,
};
pub use forces::{
    angle_to_segment, compose_virtual_force, repulsive_force, repulsive_magnitude, user_force, FieldParams,
};
pub use kalman::{kf_update, KfParams, MarkerEstimate, MarkerFilter};
