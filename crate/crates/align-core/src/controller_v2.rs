//! Second-generation alignment controller: continuous adaptive clamping.
//!
//! Every tick the controller turns the measured pose error into a raw twist
//! (full error per second), then limits it in three stages:
//!
//! 1. **Base bounds** — linear/rotational speed caps interpolated from the
//!    current error magnitudes, so speed tapers as the target gets close.
//! 2. **Adaptive shrink** — three multiplicative factors in `(0, 1]` that
//!    tighten the caps when the measurement stream looks unhealthy: `jitter`
//!    (detrended position noise), `error_rate` (tick-to-tick change of `Δd`),
//!    and `off_axis` (motion perpendicular to the approach direction, applied
//!    to the translation cap only).
//! 3. **Hypersphere clamp** — the twist is scaled (never re-aimed) so the
//!    6-D vector of bound-normalized components has norm at most one.
//!
//! A first-order low-pass filter smooths the clamped twist, and a jump in
//! `Δd` beyond a threshold zeroes the output for the affected ticks and
//! resets the filter, so target teleports produce a clean stop-and-reapproach
//! instead of a violent swing.

use alloc::vec::Vec;

use nalgebra::Vector3;

use crate::geometry::{pose_error, raw_velocity, Pose, PoseError, Stage, TwistCommand};
use crate::ConfigError;

/// Consecutive in-tolerance ticks required before convergence is reported.
pub const CONVERGENCE_DWELL_TICKS: u32 = 5;

/// Tunable parameters for the continuous controller.
#[derive(Debug, Clone, PartialEq)]
pub struct V2Config {
    /// Translation error at/below which the linear cap bottoms out, mm.
    pub dist_near_mm: f64,
    /// Translation error at/above which the linear cap tops out, mm.
    pub dist_far_mm: f64,
    /// Rotation error at/below which the rotation cap bottoms out, rad.
    pub ang_near_rad: f64,
    /// Rotation error at/above which the rotation cap tops out, rad.
    pub ang_far_rad: f64,
    /// Linear speed cap floor/ceiling, mm/s.
    pub lin_bound_min_mm_s: f64,
    pub lin_bound_max_mm_s: f64,
    /// Rotational speed cap floor/ceiling, rad/s.
    pub rot_bound_min_rad_s: f64,
    pub rot_bound_max_rad_s: f64,
    /// Jitter sensitivity, 1/mm: `jitter = 1 / (1 + weight · σ)`.
    pub jitter_weight_per_mm: f64,
    /// Error-rate sensitivity, 1/mm: `error_rate = 1 / (1 + weight · |ΔΔd|)`.
    pub error_rate_weight_per_mm: f64,
    /// Off-axis motion that drives the translation cap to its floor, mm.
    pub off_axis_tol_mm: f64,
    /// Lower bound on the off-axis factor (keeps the cap from reaching zero).
    pub shrink_floor: f64,
    /// Low-pass time constant for the linear part, s (0 disables smoothing).
    pub smooth_tau_lin_s: f64,
    /// Low-pass time constant for the angular part, s.
    pub smooth_tau_rot_s: f64,
    /// Controller tick period, s.
    pub tick_dt_s: f64,
    /// Measured-position window length for jitter/off-axis estimation.
    pub history_len: usize,
    /// Tick-to-tick change in `Δd` treated as a discontinuity, mm.
    pub jump_threshold_mm: f64,
    /// Translation tolerance for convergence, mm.
    pub conv_pos_tol_mm: f64,
    /// Rotation tolerance for convergence, rad.
    pub conv_rot_tol_rad: f64,
}

impl Default for V2Config {
    fn default() -> Self {
        Self {
            dist_near_mm: 10.0,
            dist_far_mm: 300.0,
            ang_near_rad: 2.0_f64.to_radians(),
            ang_far_rad: 30.0_f64.to_radians(),
            lin_bound_min_mm_s: 4.0,
            lin_bound_max_mm_s: 100.0,
            rot_bound_min_rad_s: 0.03,
            rot_bound_max_rad_s: 0.6,
            jitter_weight_per_mm: 0.2,
            error_rate_weight_per_mm: 0.05,
            off_axis_tol_mm: 10.0,
            shrink_floor: 0.01,
            smooth_tau_lin_s: 0.15,
            smooth_tau_rot_s: 0.15,
            tick_dt_s: 1.0 / 30.0,
            history_len: 10,
            jump_threshold_mm: 25.0,
            conv_pos_tol_mm: 5.0,
            conv_rot_tol_rad: 1.0_f64.to_radians(),
        }
    }
}

impl V2Config {
    /// Checks the cross-field invariants the controller relies on.
    // Negated comparisons so a NaN field fails validation too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.dist_near_mm >= 0.0 && self.dist_far_mm > self.dist_near_mm) {
            return Err(ConfigError::Invalid("distance knots must satisfy 0 <= near < far"));
        }
        if !(self.ang_near_rad >= 0.0 && self.ang_far_rad > self.ang_near_rad) {
            return Err(ConfigError::Invalid("angle knots must satisfy 0 <= near < far"));
        }
        if !(self.lin_bound_min_mm_s > 0.0 && self.lin_bound_max_mm_s >= self.lin_bound_min_mm_s) {
            return Err(ConfigError::Invalid("linear bounds must satisfy 0 < min <= max"));
        }
        if !(self.rot_bound_min_rad_s > 0.0 && self.rot_bound_max_rad_s >= self.rot_bound_min_rad_s)
        {
            return Err(ConfigError::Invalid("rotation bounds must satisfy 0 < min <= max"));
        }
        if !(self.jitter_weight_per_mm >= 0.0 && self.error_rate_weight_per_mm >= 0.0) {
            return Err(ConfigError::Invalid("shrink weights must be non-negative"));
        }
        if !(self.off_axis_tol_mm > 0.0) {
            return Err(ConfigError::Invalid("off_axis_tol_mm must be positive"));
        }
        if !(self.shrink_floor > 0.0 && self.shrink_floor <= 1.0) {
            return Err(ConfigError::Invalid("shrink_floor must lie in (0, 1]"));
        }
        if !(self.smooth_tau_lin_s >= 0.0 && self.smooth_tau_rot_s >= 0.0) {
            return Err(ConfigError::Invalid("smoothing time constants must be non-negative"));
        }
        if !(self.tick_dt_s > 0.0) {
            return Err(ConfigError::Invalid("tick_dt_s must be positive"));
        }
        if self.history_len < 2 {
            return Err(ConfigError::Invalid("history_len must be at least 2"));
        }
        if !(self.jump_threshold_mm > 0.0) {
            return Err(ConfigError::Invalid("jump_threshold_mm must be positive"));
        }
        if !(self.conv_pos_tol_mm > 0.0 && self.conv_rot_tol_rad > 0.0) {
            return Err(ConfigError::Invalid("convergence tolerances must be positive"));
        }
        Ok(())
    }
}

/// Multiplicative cap-shrinking factors, each in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShrinkFactors {
    /// Reacts to detrended measurement jitter.
    pub jitter: f64,
    /// Reacts to the tick-to-tick change of the translation error.
    pub error_rate: f64,
    /// Reacts to motion perpendicular to the approach direction
    /// (translation cap only), floored at the configured minimum.
    pub off_axis: f64,
}

impl ShrinkFactors {
    pub fn neutral() -> Self {
        Self { jitter: 1.0, error_rate: 1.0, off_axis: 1.0 }
    }
}

/// Speed caps for one tick, before and after adaptive shrinking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityBounds {
    /// Error-interpolated linear cap, mm/s.
    pub base_lin_mm_s: f64,
    /// Error-interpolated rotational cap, rad/s.
    pub base_rot_rad_s: f64,
    /// Linear cap after shrinking, mm/s.
    pub eff_lin_mm_s: f64,
    /// Rotational cap after shrinking, rad/s.
    pub eff_rot_rad_s: f64,
}

/// Interpolates the base speed caps from the current error magnitudes:
/// the floor value at/below the near knot, the ceiling at/above the far
/// knot, linear in between. Effective caps start equal to the base caps.
pub fn base_radii(delta_d_mm: f64, delta_theta_rad: f64, cfg: &V2Config) -> VelocityBounds {
    fn lerp(x: f64, near: f64, far: f64, lo: f64, hi: f64) -> f64 {
        if x <= near {
            lo
        } else if x >= far {
            hi
        } else {
            lo + (x - near) / (far - near) * (hi - lo)
        }
    }
    let lin = lerp(
        delta_d_mm,
        cfg.dist_near_mm,
        cfg.dist_far_mm,
        cfg.lin_bound_min_mm_s,
        cfg.lin_bound_max_mm_s,
    );
    let rot = lerp(
        delta_theta_rad,
        cfg.ang_near_rad,
        cfg.ang_far_rad,
        cfg.rot_bound_min_rad_s,
        cfg.rot_bound_max_rad_s,
    );
    VelocityBounds {
        base_lin_mm_s: lin,
        base_rot_rad_s: rot,
        eff_lin_mm_s: lin,
        eff_rot_rad_s: rot,
    }
}

/// RMS residual (mm) of the measured positions after removing a per-axis
/// linear trend over time — commanded motion fits the trend, sensor jitter
/// does not. Returns 0 for fewer than two samples.
pub fn jitter_sigma(history: &[(f64, Vector3<f64>)]) -> f64 {
    let n = history.len();
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let st: f64 = history.iter().map(|(t, _)| t).sum();
    let stt: f64 = history.iter().map(|(t, _)| t * t).sum();
    let denom = nf * stt - st * st;

    let mut sq_sum = 0.0;
    for axis in 0..3 {
        let sp: f64 = history.iter().map(|(_, p)| p[axis]).sum();
        let stp: f64 = history.iter().map(|(t, p)| t * p[axis]).sum();
        let (slope, intercept) = if denom.abs() > f64::EPSILON * nf * stt.max(1.0) {
            let slope = (nf * stp - st * sp) / denom;
            ((slope), (sp - slope * st) / nf)
        } else {
            (0.0, sp / nf)
        };
        for (t, p) in history {
            let r = p[axis] - (intercept + slope * t);
            sq_sum += r * r;
        }
    }
    libm::sqrt(sq_sum / nf)
}

/// RMS (mm) of the components of successive measured displacements that are
/// perpendicular to `error_dir`. Zero for fewer than two samples or a
/// degenerate direction.
pub fn rms_perp(history: &[(f64, Vector3<f64>)], error_dir: &Vector3<f64>) -> f64 {
    if history.len() < 2 || *error_dir == Vector3::zeros() {
        return 0.0;
    }
    let mut sq_sum = 0.0;
    let mut count = 0usize;
    for pair in history.windows(2) {
        let step = pair[1].1 - pair[0].1;
        let perp = step - error_dir * step.dot(error_dir);
        sq_sum += perp.norm_squared();
        count += 1;
    }
    libm::sqrt(sq_sum / count as f64)
}

/// Evaluates the three shrink factors from the health statistics of the
/// current tick. `prev_delta_d` is the translation error one tick ago; on
/// the first tick there is none and the error-rate factor is neutral.
pub fn shrink_factors(
    jitter_sigma_mm: f64,
    delta_d_mm: f64,
    prev_delta_d_mm: Option<f64>,
    rms_perp_mm: f64,
    cfg: &V2Config,
) -> ShrinkFactors {
    let jitter = 1.0 / (1.0 + cfg.jitter_weight_per_mm * jitter_sigma_mm);
    let error_rate = match prev_delta_d_mm {
        Some(prev) => 1.0 / (1.0 + cfg.error_rate_weight_per_mm * (delta_d_mm - prev).abs()),
        None => 1.0,
    };
    let off_axis = (1.0 - rms_perp_mm / cfg.off_axis_tol_mm).max(cfg.shrink_floor);
    ShrinkFactors { jitter, error_rate, off_axis }
}

/// Applies the shrink factors to the base caps. The off-axis factor only
/// tightens the translation cap: sideways wobble says nothing about how fast
/// it is safe to rotate.
pub fn effective_radii(base: &VelocityBounds, factors: &ShrinkFactors) -> VelocityBounds {
    VelocityBounds {
        eff_lin_mm_s: base.base_lin_mm_s * factors.jitter * factors.error_rate * factors.off_axis,
        eff_rot_rad_s: base.base_rot_rad_s * factors.jitter * factors.error_rate,
        ..*base
    }
}

/// Scales the raw twist so that, with each part normalized by its effective
/// cap, the combined 6-D vector has norm at most one. Twists already inside
/// the ball pass through untouched; outside, both parts are scaled by the
/// same factor, preserving the direction and the linear/angular ratio.
pub fn hypersphere_clamp(raw: &TwistCommand, bounds: &VelocityBounds) -> TwistCommand {
    debug_assert!(bounds.eff_lin_mm_s > 0.0 && bounds.eff_rot_rad_s > 0.0);
    let u_lin = raw.linear / bounds.eff_lin_mm_s;
    let u_rot = raw.angular / bounds.eff_rot_rad_s;
    let norm = libm::sqrt(u_lin.norm_squared() + u_rot.norm_squared());
    if norm <= 1.0 {
        return TwistCommand { linear: raw.linear, angular: raw.angular, stage: Stage::Clamped };
    }
    TwistCommand {
        linear: raw.linear / norm,
        angular: raw.angular / norm,
        stage: Stage::Clamped,
    }
}

/// One step of the first-order low-pass filter
/// `next = prev + dt/(τ + dt) · (clamped − prev)` applied per part. A zero
/// time constant short-circuits to the clamped input so that case is exact.
pub fn smooth(
    prev_lin: &Vector3<f64>,
    prev_ang: &Vector3<f64>,
    clamped: &TwistCommand,
    cfg: &V2Config,
) -> TwistCommand {
    let blend = |prev: &Vector3<f64>, next: &Vector3<f64>, tau: f64| -> Vector3<f64> {
        if tau == 0.0 {
            *next
        } else {
            let w = cfg.tick_dt_s / (tau + cfg.tick_dt_s);
            prev + (next - prev) * w
        }
    };
    TwistCommand {
        linear: blend(prev_lin, &clamped.linear, cfg.smooth_tau_lin_s),
        angular: blend(prev_ang, &clamped.angular, cfg.smooth_tau_rot_s),
        stage: Stage::Smoothed,
    }
}

/// Everything one controller tick produced, kept for logging and tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct V2TickOutput {
    /// Error-proportional twist before any limiting.
    pub raw: TwistCommand,
    /// After the hypersphere clamp (zero during holds).
    pub clamped: TwistCommand,
    /// After low-pass smoothing — the command actually sent to the arm.
    pub smoothed: TwistCommand,
    /// Speed caps used this tick.
    pub bounds: VelocityBounds,
    /// Shrink factors used this tick.
    pub factors: ShrinkFactors,
    /// Decomposed pose error this tick.
    pub error: PoseError,
    /// True when a `Δd` discontinuity zeroed the output this tick.
    pub hold: bool,
    /// True once the error has stayed inside tolerance for the dwell period.
    pub converged: bool,
    /// True when a measurement was non-finite and the tick emitted zero.
    pub sensor_fault: bool,
}

/// Mutable state of the continuous controller.
#[derive(Debug, Clone)]
pub struct V2State {
    smoothed_lin: Vector3<f64>,
    smoothed_ang: Vector3<f64>,
    prev_delta_d: Option<f64>,
    history: Vec<(f64, Vector3<f64>)>,
    history_cap: usize,
    tick_count: u64,
    dwell: u32,
    holding: bool,
}

impl V2State {
    pub fn new(cfg: &V2Config) -> Self {
        Self {
            smoothed_lin: Vector3::zeros(),
            smoothed_ang: Vector3::zeros(),
            prev_delta_d: None,
            history: Vec::with_capacity(cfg.history_len),
            history_cap: cfg.history_len.max(2),
            tick_count: 0,
            dwell: 0,
            holding: false,
        }
    }

    /// True when the previous tick zeroed its output because of a `Δd` jump.
    pub fn is_holding(&self) -> bool {
        self.holding
    }

    fn push_history(&mut self, t: f64, position: Vector3<f64>) {
        if self.history.len() == self.history_cap {
            self.history.remove(0);
        }
        self.history.push((t, position));
    }

    #[allow(clippy::too_many_arguments)] // mirrors the output fields one-to-one
    fn zero_output(
        &mut self,
        raw: TwistCommand,
        bounds: VelocityBounds,
        factors: ShrinkFactors,
        error: PoseError,
        hold: bool,
        converged: bool,
        sensor_fault: bool,
    ) -> V2TickOutput {
        self.smoothed_lin = Vector3::zeros();
        self.smoothed_ang = Vector3::zeros();
        V2TickOutput {
            raw,
            clamped: TwistCommand::zero(Stage::Clamped),
            smoothed: TwistCommand::zero(Stage::Smoothed),
            bounds,
            factors,
            error,
            hold,
            converged,
            sensor_fault,
        }
    }

    /// Runs one controller tick against the latest measured poses.
    ///
    /// The measurement window used for the jitter and off-axis statistics
    /// includes this tick's position. A non-finite measurement produces a
    /// zero command with `sensor_fault` set (caps reported at their floors)
    /// and leaves the measurement window untouched.
    pub fn tick(&mut self, ee_meas: &Pose, target_meas: &Pose, cfg: &V2Config) -> V2TickOutput {
        let t_now = self.tick_count as f64 * cfg.tick_dt_s;
        self.tick_count += 1;

        if !ee_meas.is_finite() || !target_meas.is_finite() {
            let floor = VelocityBounds {
                base_lin_mm_s: cfg.lin_bound_min_mm_s,
                base_rot_rad_s: cfg.rot_bound_min_rad_s,
                eff_lin_mm_s: cfg.lin_bound_min_mm_s,
                eff_rot_rad_s: cfg.rot_bound_min_rad_s,
            };
            self.dwell = 0;
            return self.zero_output(
                TwistCommand::zero(Stage::Raw),
                floor,
                ShrinkFactors::neutral(),
                PoseError::zero(),
                false,
                false,
                true,
            );
        }

        let err = pose_error(ee_meas, target_meas)
            .expect("finite unit-quaternion poses cannot fail");

        self.push_history(t_now, ee_meas.position);
        let sigma = jitter_sigma(&self.history);
        let rms = rms_perp(&self.history, &err.translation_dir);
        let factors = shrink_factors(sigma, err.delta_d, self.prev_delta_d, rms, cfg);
        let bounds = effective_radii(&base_radii(err.delta_d, err.delta_theta, cfg), &factors);
        let raw = raw_velocity(ee_meas, target_meas);

        let jump = self
            .prev_delta_d
            .is_some_and(|prev| (err.delta_d - prev).abs() > cfg.jump_threshold_mm);
        self.prev_delta_d = Some(err.delta_d);
        self.holding = jump;

        if jump {
            self.dwell = 0;
            return self.zero_output(raw, bounds, factors, err, true, false, false);
        }

        if err.delta_d <= cfg.conv_pos_tol_mm && err.delta_theta <= cfg.conv_rot_tol_rad {
            self.dwell += 1;
            let converged = self.dwell >= CONVERGENCE_DWELL_TICKS;
            return self.zero_output(raw, bounds, factors, err, false, converged, false);
        }
        self.dwell = 0;

        let clamped = hypersphere_clamp(&raw, &bounds);
        let smoothed = smooth(&self.smoothed_lin, &self.smoothed_ang, &clamped, cfg);
        self.smoothed_lin = smoothed.linear;
        self.smoothed_ang = smoothed.angular;

        V2TickOutput {
            raw,
            clamped,
            smoothed,
            bounds,
            factors,
            error: err,
            hold: false,
            converged: false,
            sensor_fault: false,
        }
    }
}
