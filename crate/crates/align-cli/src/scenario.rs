//! Scenario files: one TOML document describes a trial condition — which
//! controller runs, its tuning, the plant defect profile, the geometry and
//! the seed list. Angles live in degrees at this boundary and are converted
//! to radians on load; anything omitted falls back to the library defaults.

use std::fmt;
use std::path::Path;

use align_core::{ConfigError, GeometryError, PlantConfig, Pose, V1Config, V2Config};
use nalgebra::Vector3;
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("pose: {0}")]
    Pose(#[from] GeometryError),
    #[error("invalid scenario: {0}")]
    Invalid(&'static str),
}

/// Which controller generation a scenario exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    V1,
    V2,
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ControllerKind::V1 => "v1",
            ControllerKind::V2 => "v2",
        })
    }
}

/// Scripted mid-trial target disturbance: a teleport followed by an optional
/// constant-velocity drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetEvent {
    /// Simulated time at which the target teleports, s.
    pub at_s: f64,
    /// Instantaneous target displacement, mm.
    pub offset_mm: Vector3<f64>,
    /// Target velocity after the teleport, mm/s.
    pub drift_mm_s: Vector3<f64>,
    /// How long the drift lasts, s.
    pub drift_duration_s: f64,
}

/// A fully resolved trial condition.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub controller: ControllerKind,
    pub max_sim_time_s: f64,
    pub log_rate_hz: f64,
    /// Extra clearance above the target along world +z, mm (0 = align on the
    /// target itself; positive values align on a hover point above it).
    pub approach_offset_mm: f64,
    pub seeds: Vec<u64>,
    pub initial_pose: Pose,
    pub target_pose: Pose,
    pub v1: V1Config,
    pub v2: V2Config,
    /// Continuous-controller tick rate; kept alongside `v2.tick_dt_s` so the
    /// scheduler can do exact `count/rate` arithmetic.
    pub v2_tick_rate_hz: f64,
    /// Plant profile with a placeholder seed; trials override `rng_seed`.
    pub plant: PlantConfig,
    pub target_event: Option<TargetEvent>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = toml::from_str(text)?;
        let scenario = file.resolve()?;
        scenario.validate()?;
        Ok(scenario)
    }

    // Negated comparisons so a NaN field fails validation too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.v1.validate()?;
        self.v2.validate()?;
        self.plant.validate()?;
        if !(self.max_sim_time_s > 0.0) {
            return Err(ScenarioError::Invalid("max_sim_time_s must be positive"));
        }
        if !(self.log_rate_hz > 0.0) {
            return Err(ScenarioError::Invalid("log_rate_hz must be positive"));
        }
        // Logging faster than the sensor would only duplicate measurements.
        if self.log_rate_hz > self.plant.sensor_rate_hz {
            return Err(ScenarioError::Invalid(
                "log_rate_hz must not exceed the sensor rate",
            ));
        }
        if !(self.v2_tick_rate_hz > 0.0) {
            return Err(ScenarioError::Invalid("v2 tick_rate_hz must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(ScenarioError::Invalid("seeds must not be empty"));
        }
        if !self.approach_offset_mm.is_finite() || self.approach_offset_mm < 0.0 {
            return Err(ScenarioError::Invalid(
                "approach_offset_mm must be finite and non-negative",
            ));
        }
        if let Some(ev) = &self.target_event {
            if !(ev.at_s >= 0.0 && ev.drift_duration_s >= 0.0) {
                return Err(ScenarioError::Invalid(
                    "target_event times must be non-negative",
                ));
            }
        }
        Ok(())
    }

    /// The pose the controller is asked to reach: the target, lifted by the
    /// approach offset along world +z.
    pub fn effective_target(&self) -> Pose {
        let mut target = self.target_pose;
        target.position.z += self.approach_offset_mm;
        target
    }

    /// Fingerprint of everything that must match for two conditions to be
    /// comparable head-to-head: geometry, plant profile (minus seed), offset
    /// and timing — but *not* the controller or its tuning.
    pub fn comparison_key(&self) -> String {
        let p = &self.plant;
        format!(
            "init={:?}/{:?} target={:?}/{:?} offset={} tmax={} log={} plant=[{} {} {} {} {} {} {} {} {} {}] event={:?}",
            self.initial_pose.position,
            self.initial_pose.orientation,
            self.target_pose.position,
            self.target_pose.orientation,
            self.approach_offset_mm,
            self.max_sim_time_s,
            self.log_rate_hz,
            p.lowlevel_rate_hz,
            p.sensor_rate_hz,
            p.noise_sigma_mm,
            p.noise_sigma_rad,
            p.latency_ticks,
            p.backlash_deadband_rad,
            p.flex_magnitude_mm,
            p.tracking_lag_tau_s,
            p.exec_lin_speed_mm_s,
            p.exec_rot_speed_rad_s,
            self.target_event,
        )
    }
}

// ---------------------------------------------------------------------------
// TOML shape
// ---------------------------------------------------------------------------

fn default_seeds() -> Vec<u64> {
    vec![1]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    controller: ControllerKind,
    #[serde(default = "default_max_time")]
    max_sim_time_s: f64,
    #[serde(default = "default_log_rate")]
    log_rate_hz: f64,
    #[serde(default)]
    approach_offset_mm: f64,
    #[serde(default = "default_seeds")]
    seeds: Vec<u64>,
    initial_pose: PoseSpec,
    #[serde(default = "default_target_pose")]
    target_pose: PoseSpec,
    #[serde(default)]
    v1: V1Spec,
    #[serde(default)]
    v2: V2Spec,
    #[serde(default)]
    plant: PlantSpec,
    target_event: Option<TargetEventSpec>,
}

fn default_max_time() -> f64 {
    120.0
}

fn default_log_rate() -> f64 {
    10.0
}

impl ScenarioFile {
    fn resolve(self) -> Result<Scenario, ScenarioError> {
        let (v2, v2_tick_rate_hz) = self.v2.resolve();
        Ok(Scenario {
            name: self.name,
            controller: self.controller,
            max_sim_time_s: self.max_sim_time_s,
            log_rate_hz: self.log_rate_hz,
            approach_offset_mm: self.approach_offset_mm,
            seeds: self.seeds,
            initial_pose: self.initial_pose.resolve()?,
            target_pose: self.target_pose.resolve()?,
            v1: self.v1.resolve(),
            v2,
            v2_tick_rate_hz,
            plant: self.plant.resolve(),
            target_event: self.target_event.map(TargetEventSpec::resolve),
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseSpec {
    position_mm: [f64; 3],
    #[serde(default = "identity_wxyz")]
    orientation_wxyz: [f64; 4],
}

fn identity_wxyz() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

/// Bench-rig fixture point: where the alignment target sits when a scenario
/// doesn't position it explicitly.
fn default_target_pose() -> PoseSpec {
    PoseSpec {
        position_mm: [871.0, -459.0, 221.0],
        orientation_wxyz: identity_wxyz(),
    }
}

impl PoseSpec {
    fn resolve(self) -> Result<Pose, GeometryError> {
        Pose::from_parts(Vector3::from(self.position_mm), self.orientation_wxyz)
    }
}

macro_rules! merge {
    ($cfg:expr, $spec:expr, direct: [$($field:ident),* $(,)?], deg: [$($dfield:ident => $rfield:ident),* $(,)?]) => {
        $(if let Some(v) = $spec.$field { $cfg.$field = v; })*
        $(if let Some(v) = $spec.$dfield { $cfg.$rfield = v.to_radians(); })*
    };
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct V1Spec {
    step_min_mm: Option<f64>,
    step_max_mm: Option<f64>,
    error_low_mm: Option<f64>,
    error_high_mm: Option<f64>,
    rot_step_min_deg: Option<f64>,
    rot_step_max_deg: Option<f64>,
    buffer_len: Option<usize>,
    jump_threshold_mm: Option<f64>,
    conv_pos_tol_mm: Option<f64>,
    conv_rot_tol_deg: Option<f64>,
}

impl V1Spec {
    fn resolve(self) -> V1Config {
        let mut cfg = V1Config::default();
        merge!(cfg, self,
            direct: [step_min_mm, step_max_mm, error_low_mm, error_high_mm,
                     buffer_len, jump_threshold_mm, conv_pos_tol_mm],
            deg: [rot_step_min_deg => rot_step_min_rad,
                  rot_step_max_deg => rot_step_max_rad,
                  conv_rot_tol_deg => conv_rot_tol_rad]);
        cfg
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct V2Spec {
    dist_near_mm: Option<f64>,
    dist_far_mm: Option<f64>,
    ang_near_deg: Option<f64>,
    ang_far_deg: Option<f64>,
    lin_bound_min_mm_s: Option<f64>,
    lin_bound_max_mm_s: Option<f64>,
    rot_bound_min_deg_s: Option<f64>,
    rot_bound_max_deg_s: Option<f64>,
    jitter_weight_per_mm: Option<f64>,
    error_rate_weight_per_mm: Option<f64>,
    off_axis_tol_mm: Option<f64>,
    shrink_floor: Option<f64>,
    smooth_tau_lin_s: Option<f64>,
    smooth_tau_rot_s: Option<f64>,
    tick_rate_hz: Option<f64>,
    history_len: Option<usize>,
    jump_threshold_mm: Option<f64>,
    conv_pos_tol_mm: Option<f64>,
    conv_rot_tol_deg: Option<f64>,
}

impl V2Spec {
    fn resolve(self) -> (V2Config, f64) {
        let mut cfg = V2Config::default();
        merge!(cfg, self,
            direct: [dist_near_mm, dist_far_mm, lin_bound_min_mm_s, lin_bound_max_mm_s,
                     jitter_weight_per_mm, error_rate_weight_per_mm, off_axis_tol_mm,
                     shrink_floor, smooth_tau_lin_s, smooth_tau_rot_s, history_len,
                     jump_threshold_mm, conv_pos_tol_mm],
            deg: [ang_near_deg => ang_near_rad,
                  ang_far_deg => ang_far_rad,
                  rot_bound_min_deg_s => rot_bound_min_rad_s,
                  rot_bound_max_deg_s => rot_bound_max_rad_s,
                  conv_rot_tol_deg => conv_rot_tol_rad]);
        let rate = self.tick_rate_hz.unwrap_or(1.0 / cfg.tick_dt_s);
        cfg.tick_dt_s = 1.0 / rate;
        (cfg, rate)
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PlantSpec {
    lowlevel_rate_hz: Option<f64>,
    sensor_rate_hz: Option<f64>,
    noise_sigma_mm: Option<f64>,
    noise_sigma_deg: Option<f64>,
    latency_ticks: Option<usize>,
    backlash_deadband_deg: Option<f64>,
    flex_magnitude_mm: Option<f64>,
    tracking_lag_tau_s: Option<f64>,
    exec_lin_speed_mm_s: Option<f64>,
    exec_rot_speed_deg_s: Option<f64>,
}

impl PlantSpec {
    fn resolve(self) -> PlantConfig {
        let mut cfg = PlantConfig::default();
        merge!(cfg, self,
            direct: [lowlevel_rate_hz, sensor_rate_hz, noise_sigma_mm, latency_ticks,
                     flex_magnitude_mm, tracking_lag_tau_s, exec_lin_speed_mm_s],
            deg: [noise_sigma_deg => noise_sigma_rad,
                  backlash_deadband_deg => backlash_deadband_rad,
                  exec_rot_speed_deg_s => exec_rot_speed_rad_s]);
        cfg
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetEventSpec {
    at_s: f64,
    #[serde(default)]
    offset_mm: [f64; 3],
    #[serde(default)]
    drift_mm_s: [f64; 3],
    #[serde(default)]
    drift_duration_s: f64,
}

impl TargetEventSpec {
    fn resolve(self) -> TargetEvent {
        TargetEvent {
            at_s: self.at_s,
            offset_mm: Vector3::from(self.offset_mm),
            drift_mm_s: Vector3::from(self.drift_mm_s),
            drift_duration_s: self.drift_duration_s,
        }
    }
}
