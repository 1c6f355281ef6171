//! Fixed-rate orchestration: sensing, mapping, planning, force composition,
//! admittance and drone tracking, plus the mode machine, metrics and traces.
//!
//! Each [`Session::step`] runs, in order: queued inputs, adoption of a
//! finished plan, depth scan, map integration, marker filter update,
//! reference computation, forces, damping, admittance integration,
//! `p_c = p_r + x`, drone step, then segment bookkeeping and planner launch.
//!
//! The planner runs on a worker thread against a copy of the map, but its
//! result is adopted at a fixed tick offset, so a session is a pure function
//! of its setup and input stream.

mod config;
mod metrics;
mod trace;

use std::sync::Arc;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::SessionConfig;
pub use metrics::{rmse, MetricsReport};
pub use trace::{replay, Trace, TraceHeader, TickDigest, TimedEvent, TRACE_MAGIC, TRACE_VERSION};

use crate::dynamics::{
    admittance_step, angle_to_segment, compose_virtual_force, repulsive_force, user_force, AdmittanceState,
    DampingProfile, MarkerEstimate, MarkerFilter, ProfileRegistry,
};
use crate::map::{PointCloudSample, Source, VoxelMap, VoxelUpdate};
use crate::planner::{advance_segment, plan_local, project_reference, PlannerParams, PlannerPath};
use crate::world::{simulate_depth_scan, step_drone, DroneState, Environment, SensorConfig, YAW_HOLD_SPEED};
use crate::{Error, Result, Vec3};

/// Interaction mode. The goal exists exactly while assisted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Mode {
    /// Free interaction: planner off, the marker is the reference.
    Fpvi,
    /// Assisted interaction: RRT* path plus variable admittance.
    Apvi { goal: Vec3 },
}

impl Mode {
    pub fn goal(&self) -> Option<Vec3> {
        match self {
            Mode::Fpvi => None,
            Mode::Apvi { goal } => Some(*goal),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModeCommand {
    PlaceGoal(Vec3),
    ClearGoal,
}

/// Inputs a human (or a script) can feed into a tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InputEvent {
    /// Latest measured marker position; held until the next one or a release.
    Marker { p: Vec3 },
    MarkerRelease,
    PlaceGoal { goal: Vec3 },
    ClearGoal,
    SetProfile { name: String },
    SetParam { key: String, value: String },
    /// A point cloud captured by the operator's device.
    DeviceCloud { points: Vec<Vec3> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerStatus {
    Idle,
    Planning,
    Following,
    NoPath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    /// Index of the offending event within the tick's inputs.
    pub event: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerView {
    pub p_u: Vec3,
    pub v_u: Vec3,
    pub a_u: Vec3,
}

impl From<&MarkerEstimate> for MarkerView {
    fn from(e: &MarkerEstimate) -> Self {
        Self { p_u: e.p_u, v_u: e.v_u, a_u: e.a_u }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveMetrics {
    pub rmse: f64,
    pub min_clearance: Option<f64>,
    pub goal_reach_time: Option<f64>,
}

/// Complete world state after one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub tick: u64,
    pub time: f64,
    pub drone: DroneState,
    pub marker: Option<MarkerView>,
    pub mode: Mode,
    pub path: Option<PlannerPath>,
    pub planner: PlannerStatus,
    pub profile: String,
    pub f_usr: Vec3,
    pub f_rep: Vec3,
    pub f_v: Vec3,
    pub damping: f64,
    pub theta: Option<f64>,
    pub p_r: Vec3,
    pub p_c: Vec3,
    pub admittance: AdmittanceState,
    pub voxel_delta: Vec<VoxelUpdate>,
    pub metrics: LiveMetrics,
    pub rejected: Vec<Rejection>,
    /// SHA-256 over the session setup and every other field.
    #[serde(default)]
    pub digest: String,
}

impl Snapshot {
    /// Digest over the setup and every other field, so a session started
    /// from a different setup diverges at tick 0.
    fn seal(mut self, setup_digest: &str) -> Self {
        self.digest.clear();
        let mut h = Sha256::new();
        h.update(setup_digest.as_bytes());
        h.update(serde_json::to_vec(&self).expect("snapshot serializes"));
        self.digest = hex(&h.finalize());
        self
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything a session is a function of, besides its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSetup {
    pub name: String,
    pub config: SessionConfig,
    pub environment: Environment,
    pub start: DroneState,
    /// Poses from which the operator's device scans the room at start-up.
    #[serde(default)]
    pub device_viewpoints: Vec<DroneState>,
    #[serde(default)]
    pub device_sensor: SensorConfig,
}

impl SessionSetup {
    pub fn new(config: SessionConfig, environment: Environment, start: DroneState) -> Self {
        Self {
            name: "unnamed".into(),
            config,
            environment,
            start,
            device_viewpoints: Vec::new(),
            device_sensor: SensorConfig::default(),
        }
    }

    pub fn digest(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("setup serializes")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PlanStart {
    /// From the current reference, keeping `p_r` continuous.
    Reference,
    /// From the drone, adopting a user-imposed deviation.
    Drone,
}

struct PlanJob {
    handle: JoinHandle<Result<PlannerPath>>,
    ready_tick: u64,
    generation: u64,
}

pub struct Session {
    setup: SessionSetup,
    setup_digest: String,
    config: SessionConfig,
    registry: ProfileRegistry,
    profile: Arc<dyn DampingProfile>,
    tick: u64,
    drone: DroneState,
    map: VoxelMap,
    marker: Option<Vec3>,
    filter: MarkerFilter,
    mode: Mode,
    generation: u64,
    path: Option<PlannerPath>,
    planner_status: PlannerStatus,
    job: Option<PlanJob>,
    replan: Option<PlanStart>,
    force_launch: bool,
    last_launch: Option<u64>,
    launches: u64,
    adm: AdmittanceState,
    vac_damping: f64,
    p_r: Vec3,
    p_c: Vec3,
    settle_ticks: u64,
    /// The reference may jump this tick; fold the jump into `x`.
    rebase: bool,
    pending_delta: Vec<VoxelUpdate>,
    reference_log: Vec<Vec3>,
    commanded_log: Vec<Vec3>,
    sq_sum: f64,
    min_clearance: Option<f64>,
    goal_reach_time: Option<f64>,
    recorder: Option<Trace>,
}

impl Session {
    pub fn new(setup: SessionSetup) -> Result<Self> {
        Self::with_registry(setup, ProfileRegistry::builtin())
    }

    pub fn with_registry(setup: SessionSetup, registry: ProfileRegistry) -> Result<Self> {
        let config = setup.config.clone();
        config.validate()?;
        setup.environment.validate()?;
        if !setup.environment.bounds.contains(&setup.start.p) {
            return Err(Error::Scenario("drone start lies outside bounds".into()));
        }
        let profile = registry.get(&config.admittance.profile)?;
        let mut map = VoxelMap::new(config.voxel_size)?;
        let mut pending_delta = Vec::new();
        for vp in &setup.device_viewpoints {
            let points = simulate_depth_scan(&setup.environment, vp, &setup.device_sensor);
            pending_delta.extend(map.integrate_with_delta(&PointCloudSample { points, source: Source::Device, stamp: 0.0 })?);
        }
        let p0 = setup.start.p;
        Ok(Self {
            filter: MarkerFilter::new(config.kf),
            vac_damping: config.admittance.d_max,
            drone: setup.start,
            setup_digest: setup.digest(),
            setup,
            config,
            registry,
            profile,
            tick: 0,
            map,
            marker: None,
            mode: Mode::Fpvi,
            generation: 0,
            path: None,
            planner_status: PlannerStatus::Idle,
            job: None,
            replan: None,
            force_launch: false,
            last_launch: None,
            launches: 0,
            adm: AdmittanceState::default(),
            p_r: p0,
            p_c: p0,
            settle_ticks: 0,
            rebase: false,
            pending_delta,
            reference_log: Vec::new(),
            commanded_log: Vec::new(),
            sq_sum: 0.0,
            min_clearance: None,
            goal_reach_time: None,
            recorder: None,
        })
    }

    pub fn setup(&self) -> &SessionSetup {
        &self.setup
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.config.dt
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn drone(&self) -> &DroneState {
        &self.drone
    }

    pub fn map(&self) -> &VoxelMap {
        &self.map
    }

    pub fn path(&self) -> Option<&PlannerPath> {
        self.path.as_ref()
    }

    /// Δr, one entry per tick.
    pub fn reference_log(&self) -> &[Vec3] {
        &self.reference_log
    }

    /// Δc, one entry per tick.
    pub fn commanded_log(&self) -> &[Vec3] {
        &self.commanded_log
    }

    pub fn start_recording(&mut self) {
        self.recorder = Some(Trace::new(TraceHeader::for_setup(&self.setup)));
    }

    pub fn take_trace(&mut self) -> Option<Trace> {
        self.recorder.take()
    }

    pub fn report(&self) -> MetricsReport {
        let n = self.reference_log.len();
        let from = self.config.metrics_window.map_or(0, |w| n.saturating_sub(w));
        let rmse = rmse(&self.reference_log[from..], &self.commanded_log[from..]).unwrap_or(0.0);
        MetricsReport {
            ticks: self.tick,
            duration: self.time(),
            rmse,
            min_clearance: self.min_clearance,
            goal_reach_time: self.goal_reach_time,
            finished: self.goal_reach_time.is_some(),
        }
    }

    /// Switches modes. Placing a goal enters assisted mode and requests a plan.
    pub fn set_mode(&mut self, command: ModeCommand) -> Result<Mode> {
        match command {
            ModeCommand::PlaceGoal(goal) => {
                if !goal.iter().all(|c| c.is_finite()) {
                    return Err(Error::NonFinite("goal"));
                }
                if !self.setup.environment.bounds.contains(&goal) {
                    return Err(Error::GoalOutOfBounds);
                }
                if self.map.is_occupied(self.map.key_of(&goal)) || self.setup.environment.is_inside_obstacle(&goal) {
                    return Err(Error::GoalOccupied);
                }
                self.mode = Mode::Apvi { goal };
                self.reset_planning();
                self.replan = Some(PlanStart::Reference);
                self.force_launch = true;
                self.planner_status = PlannerStatus::Planning;
            }
            ModeCommand::ClearGoal => {
                self.mode = Mode::Fpvi;
                self.reset_planning();
            }
        }
        Ok(self.mode)
    }

    fn reset_planning(&mut self) {
        self.generation += 1;
        self.path = None;
        self.job = None;
        self.replan = None;
        self.force_launch = false;
        self.settle_ticks = 0;
        self.planner_status = PlannerStatus::Idle;
    }

    fn apply(&mut self, event: &InputEvent, delta: &mut Vec<VoxelUpdate>) -> Result<()> {
        match event {
            InputEvent::Marker { p } => {
                if !p.iter().all(|c| c.is_finite()) {
                    return Err(Error::NonFinite("marker position"));
                }
                self.rebase |= self.marker.is_none();
                self.marker = Some(*p);
            }
            InputEvent::MarkerRelease => {
                if self.marker.take().is_some() {
                    self.filter.reset();
                    if self.path.is_some() && (self.drone.p - self.p_r).norm() > self.config.rebase_distance {
                        self.replan = Some(PlanStart::Drone);
                        self.force_launch = true;
                    }
                }
            }
            InputEvent::PlaceGoal { goal } => {
                self.set_mode(ModeCommand::PlaceGoal(*goal))?;
            }
            InputEvent::ClearGoal => {
                self.set_mode(ModeCommand::ClearGoal)?;
            }
            InputEvent::SetProfile { name } => {
                self.profile = self.registry.get(name)?;
                self.config.admittance.profile = name.clone();
            }
            InputEvent::SetParam { key, value } => {
                let mut next = self.config.clone();
                next.set_live(key, value)?;
                let profile = self.registry.get(&next.admittance.profile)?;
                self.filter.params = next.kf;
                self.profile = profile;
                self.config = next;
            }
            InputEvent::DeviceCloud { points } => {
                let sample = PointCloudSample { points: points.clone(), source: Source::Device, stamp: self.time() };
                delta.extend(self.map.integrate_with_delta(&sample)?);
            }
        }
        Ok(())
    }

    /// Advances the simulation by one tick.
    pub fn step(&mut self, inputs: &[InputEvent]) -> Result<Snapshot> {
        let tick = self.tick;
        let dt = self.config.dt;
        if let Some(rec) = &mut self.recorder {
            rec.events.extend(inputs.iter().map(|e| TimedEvent { tick, event: e.clone() }));
        }

        let mut delta = std::mem::take(&mut self.pending_delta);
        let mut rejected = Vec::new();
        for (i, event) in inputs.iter().enumerate() {
            if let Err(e) = self.apply(event, &mut delta) {
                rejected.push(Rejection { event: i, reason: e.to_string() });
            }
        }
        self.collect_plan(tick);

        // sense and map
        let cloud = simulate_depth_scan(&self.setup.environment, &self.drone, &self.config.sensor);
        let sample = PointCloudSample { points: cloud, source: Source::Robot, stamp: self.time() };
        let robot_delta = self.map.integrate_with_delta(&sample)?;
        let map_changed = !robot_delta.is_empty() || !delta.is_empty();
        delta.extend(robot_delta);

        let estimate = match self.marker {
            Some(m) => Some(self.filter.update(&m, dt)?.clone()),
            None => None,
        };

        self.update_reference(estimate.as_ref());

        let voxels = self.map.voxels_within_horizon(&self.drone.p, self.config.field.horizon);
        let f_rep = repulsive_force(&voxels, &self.drone.p, &self.config.field);
        let f_usr = estimate
            .as_ref()
            .map_or_else(Vec3::zeros, |e| user_force(&self.drone.p, &self.drone.v, e, &self.config.admittance));
        let f_v = compose_virtual_force(&f_usr, &f_rep);

        let (damping, theta) = match self.mode {
            Mode::Fpvi => (self.config.fpvi_damping, None),
            Mode::Apvi { .. } => {
                let theta = self
                    .path
                    .as_ref()
                    .and_then(PlannerPath::active_direction)
                    .and_then(|l| angle_to_segment(&f_v, &l));
                if let Some(t) = theta {
                    let a = &self.config.admittance;
                    self.vac_damping = self.profile.damping(t, a.d_min, a.d_max);
                }
                (self.vac_damping, theta)
            }
        };

        let prev_x = self.adm.x;
        self.adm = admittance_step(&self.adm, &f_v, damping, &self.config.admittance, dt)?;
        // the perturbation cannot outrun the drone
        let rate = self.adm.x_dot.norm();
        let cap = self.config.drone.max_speed;
        if rate > cap {
            self.adm.x_dot *= cap / rate;
            self.adm.x = prev_x + dt * self.adm.x_dot;
        }
        self.p_c = self.p_r + self.adm.x;
        self.drone = step_drone(&self.drone, &self.p_c, dt, &self.config.drone)?;
        self.tick += 1;

        self.reference_log.push(self.p_r);
        self.commanded_log.push(self.p_c);
        self.sq_sum += (self.p_r - self.p_c).norm_squared();
        let clearance = self.map.distance_to_nearest_occupied(&self.p_c);
        if clearance.is_finite() {
            self.min_clearance = Some(self.min_clearance.map_or(clearance, |m| m.min(clearance)));
        }

        self.track_path(map_changed);
        self.maybe_launch(tick);

        let snapshot = Snapshot {
            tick,
            time: self.time(),
            drone: self.drone,
            marker: estimate.as_ref().map(MarkerView::from),
            mode: self.mode,
            path: self.path.clone(),
            planner: self.planner_status,
            profile: self.config.admittance.profile.clone(),
            f_usr,
            f_rep,
            f_v,
            damping,
            theta,
            p_r: self.p_r,
            p_c: self.p_c,
            admittance: self.adm,
            voxel_delta: delta,
            metrics: LiveMetrics {
                rmse: (self.sq_sum / self.reference_log.len() as f64).sqrt(),
                min_clearance: self.min_clearance,
                goal_reach_time: self.goal_reach_time,
            },
            rejected,
            digest: String::new(),
        }
        .seal(&self.setup_digest);
        if let Some(rec) = &mut self.recorder {
            rec.digests.push(TickDigest { tick, digest: snapshot.digest.clone() });
        }
        Ok(snapshot)
    }

    /// Moves `p_r` for this tick. Jumps caused by grabbing the marker or by
    /// switching segments are absorbed into `x`, so `p_c` stays continuous.
    fn update_reference(&mut self, estimate: Option<&MarkerEstimate>) {
        let before = self.p_r;
        self.move_reference(estimate);
        if std::mem::take(&mut self.rebase) {
            self.adm.x += before - self.p_r;
        }
    }

    fn move_reference(&mut self, estimate: Option<&MarkerEstimate>) {
        match self.mode {
            Mode::Fpvi => {
                if let Some(e) = estimate {
                    self.p_r = e.p_u;
                }
            }
            Mode::Apvi { .. } => {
                if self.job.is_some() {
                    return;
                }
                let Some(path) = &self.path else { return };
                self.p_r = match estimate {
                    Some(e) => project_reference(&e.p_u, path),
                    None => {
                        let lead = path
                            .active_direction()
                            .map_or(self.p_r, |l| self.p_r + l * (self.config.cruise_speed * self.config.dt));
                        project_reference(&lead, path)
                    }
                };
            }
        }
    }

    fn track_path(&mut self, map_changed: bool) {
        let Mode::Apvi { goal } = self.mode else { return };
        if (self.drone.p - goal).norm() < self.config.goal_tolerance {
            self.goal_reach_time.get_or_insert(self.time());
            self.mode = Mode::Fpvi;
            self.reset_planning();
            return;
        }
        let eps = self.config.capture_radius;
        let settle_limit = (1.0 / self.config.dt).round() as u64;
        let Some(path) = &mut self.path else { return };

        let before = path.active_segment;
        let mut advance = advance_segment(&self.drone.p, path, &goal, eps);
        // The field can hold the drone off a setpoint; once the reference waits
        // at the segment end and the drone has settled, count it as captured.
        let (_, end) = path.active_endpoints();
        if self.marker.is_none() && self.p_r == end && self.drone.v.norm() < YAW_HOLD_SPEED {
            self.settle_ticks += 1;
        } else {
            self.settle_ticks = 0;
        }
        if self.settle_ticks >= settle_limit {
            self.settle_ticks = 0;
            advance = advance_segment(&end, path, &goal, eps);
        }
        self.rebase |= advance.active_segment != before;

        if advance.replan {
            self.replan.get_or_insert(PlanStart::Reference);
        } else if map_changed && self.replan.is_none() {
            let (a, b) = path.active_endpoints();
            if !self.map.is_segment_free(&a, &b, self.config.planner.clearance) {
                self.replan = Some(PlanStart::Reference);
            }
        }
    }

    fn maybe_launch(&mut self, tick: u64) {
        let Mode::Apvi { goal } = self.mode else { return };
        let Some(kind) = self.replan else { return };
        if self.job.is_some() {
            return;
        }
        let due = self.last_launch.is_none_or(|t| tick - t >= self.config.replan_period_ticks());
        if !(due || self.force_launch) {
            return;
        }
        self.force_launch = false;
        self.last_launch = Some(tick);

        let clearance = self.config.planner.clearance;
        let candidates = match kind {
            PlanStart::Reference => vec![self.p_r, self.drone.p],
            // falling back to the old reference would drag the drone back
            PlanStart::Drone => vec![self.drone.p],
        };
        let Some(start) = candidates.into_iter().find(|s| self.map.is_segment_free(s, s, clearance)) else {
            if kind == PlanStart::Reference {
                self.planner_status = PlannerStatus::NoPath;
            }
            return;
        };

        let params = PlannerParams { rng_seed: plan_seed(self.config.rng_seed, self.launches), ..self.config.planner };
        self.launches += 1;
        let map = self.map.clone();
        let handle = std::thread::spawn(move || plan_local(&map, &start, &goal, &params));
        self.job = Some(PlanJob {
            handle,
            ready_tick: tick + u64::from(self.config.planner_latency_ticks.max(1)),
            generation: self.generation,
        });
        self.planner_status = PlannerStatus::Planning;
    }

    fn collect_plan(&mut self, tick: u64) {
        if !self.job.as_ref().is_some_and(|j| j.ready_tick <= tick) {
            return;
        }
        let job = self.job.take().expect("job checked above");
        let result = job.handle.join().unwrap_or(Err(Error::NoPath));
        if job.generation != self.generation {
            return;
        }
        match result {
            Ok(path) => {
                let start = path.setpoints[0];
                // keep p_c continuous across a change of reference
                self.adm.x += self.p_r - start;
                self.p_r = start;
                self.path = Some(path);
                self.replan = None;
                self.settle_ticks = 0;
                self.planner_status = PlannerStatus::Following;
            }
            Err(e) => {
                log::debug!("planning failed at tick {tick}: {e}");
                self.planner_status = PlannerStatus::NoPath;
            }
        }
    }
}

/// Distinct, reproducible seed per planner launch.
fn plan_seed(session_seed: u64, launch: u64) -> u64 {
    let mut z = session_seed ^ launch.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
