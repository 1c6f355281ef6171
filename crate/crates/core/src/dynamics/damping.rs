//! Angle-dependent damping profiles, selectable by name at runtime.
//!
//! A profile maps the normalized angle `s = θ/π ∈ [0, 1]` to a shape value in
//! `[0, 1]` that is continuous, non-decreasing, zero at `s = 0` and one at
//! `s = 1`. The damping is then `D_min + (D_max − D_min)·shape(s)`, so every
//! registered profile hits `D_min` along the path and `D_max` against it.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Debug;
use std::sync::{Arc, OnceLock};

use super::AdmittanceParams;
use crate::{Error, Result};

pub trait DampingProfile: Debug + Send + Sync {
    fn name(&self) -> &str;

    fn shape(&self, s: f64) -> f64;

    fn damping(&self, theta: f64, d_min: f64, d_max: f64) -> f64 {
        let s = (theta / PI).clamp(0.0, 1.0);
        d_min + (d_max - d_min) * self.shape(s)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LinearProfile;

impl DampingProfile for LinearProfile {
    fn name(&self) -> &str {
        "linear"
    }

    fn shape(&self, s: f64) -> f64 {
        s
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SquaredProfile;

impl DampingProfile for SquaredProfile {
    fn name(&self) -> &str {
        "squared"
    }

    fn shape(&self, s: f64) -> f64 {
        s * s
    }
}

/// `(e^(a·s) − 1) / (e^a − 1)`; larger `sharpness` keeps damping low for longer.
#[derive(Debug, Clone, Copy)]
pub struct ExponentialProfile {
    pub sharpness: f64,
}

impl Default for ExponentialProfile {
    fn default() -> Self {
        Self { sharpness: 3.0 }
    }
}

impl DampingProfile for ExponentialProfile {
    fn name(&self) -> &str {
        "exponential"
    }

    fn shape(&self, s: f64) -> f64 {
        if s >= 1.0 {
            return 1.0;
        }
        (self.sharpness * s).exp_m1() / self.sharpness.exp_m1()
    }
}

#[derive(Debug, Clone)]
pub struct ProfileRegistry {
    profiles: BTreeMap<String, Arc<dyn DampingProfile>>,
}

impl Default for ProfileRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl ProfileRegistry {
    pub fn empty() -> Self {
        Self { profiles: BTreeMap::new() }
    }

    /// The three shipped profiles: `linear`, `squared`, `exponential`.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(LinearProfile));
        r.register(Arc::new(SquaredProfile));
        r.register(Arc::new(ExponentialProfile::default()));
        r
    }

    pub fn shared() -> &'static ProfileRegistry {
        static BUILTIN: OnceLock<ProfileRegistry> = OnceLock::new();
        BUILTIN.get_or_init(ProfileRegistry::builtin)
    }

    /// Registers a profile under its own name, replacing any previous entry.
    pub fn register(&mut self, profile: Arc<dyn DampingProfile>) {
        self.profiles.insert(profile.name().to_owned(), profile);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn DampingProfile>> {
        self.profiles.get(name).cloned().ok_or_else(|| Error::UnknownProfile(name.to_owned()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.profiles.keys().map(String::as_str)
    }
}

/// Damping for angle `θ` using the profile named in `params`.
pub fn variable_damping(theta: f64, params: &AdmittanceParams) -> Result<f64> {
    let profile = ProfileRegistry::shared().get(&params.profile)?;
    Ok(profile.damping(theta, params.d_min, params.d_max))
}
