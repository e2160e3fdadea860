//! First-generation alignment controller: discrete step-and-settle.
//!
//! Each cycle the controller averages the measured translation error over a
//! short buffer, and only once the arm has finished the previous step *and*
//! the error is not jumping around does it emit the next bounded pose
//! increment. The increment length follows a piecewise-linear schedule of the
//! averaged error magnitude, so steps are long far out and short near the
//! target; the rotation increment is clamped per tick the same way. The
//! buffer is cleared after every completed step, so each new command is based
//! purely on fresh measurements taken while the arm was at rest.

use alloc::collections::VecDeque;

use nalgebra::{UnitQuaternion, Vector3};

use crate::geometry::{
    pose_error, quat_from_axis_angle, GeometryError, Pose, PoseError, TRANSLATION_DIR_TOL_MM,
};
use crate::ConfigError;

/// Tunable parameters for the step-and-settle controller.
#[derive(Debug, Clone, PartialEq)]
pub struct V1Config {
    /// Shortest translation step, mm (used below `error_low_mm`).
    pub step_min_mm: f64,
    /// Longest translation step, mm (used above `error_high_mm`).
    pub step_max_mm: f64,
    /// Averaged-error magnitude at which steps bottom out, mm.
    pub error_low_mm: f64,
    /// Averaged-error magnitude at which steps top out, mm.
    pub error_high_mm: f64,
    /// Smallest commanded rotation per step, rad (never overshoots the error).
    pub rot_step_min_rad: f64,
    /// Largest commanded rotation per step, rad.
    pub rot_step_max_rad: f64,
    /// Number of error samples averaged before a step may be issued.
    pub buffer_len: usize,
    /// Tick-to-tick change in `Δd` above which the controller holds, mm.
    pub jump_threshold_mm: f64,
    /// Translation tolerance for convergence, mm.
    pub conv_pos_tol_mm: f64,
    /// Rotation tolerance for convergence, rad.
    pub conv_rot_tol_rad: f64,
}

impl Default for V1Config {
    fn default() -> Self {
        Self {
            step_min_mm: 5.0,
            step_max_mm: 50.0,
            error_low_mm: 30.0,
            error_high_mm: 300.0,
            rot_step_min_rad: 0.5_f64.to_radians(),
            rot_step_max_rad: 10.0_f64.to_radians(),
            buffer_len: 6,
            jump_threshold_mm: 25.0,
            conv_pos_tol_mm: 5.0,
            conv_rot_tol_rad: 1.0_f64.to_radians(),
        }
    }
}

impl V1Config {
    /// Checks the cross-field invariants the controller relies on.
    // Negated comparisons so a NaN field fails validation too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.step_min_mm > 0.0 && self.step_max_mm >= self.step_min_mm) {
            return Err(ConfigError::Invalid("step bounds must satisfy 0 < min <= max"));
        }
        if !(self.error_low_mm > 0.0 && self.error_high_mm > self.error_low_mm) {
            return Err(ConfigError::Invalid(
                "error window must satisfy 0 < low < high",
            ));
        }
        if !(self.rot_step_min_rad > 0.0 && self.rot_step_max_rad >= self.rot_step_min_rad) {
            return Err(ConfigError::Invalid(
                "rotation step bounds must satisfy 0 < min <= max",
            ));
        }
        if self.buffer_len == 0 {
            return Err(ConfigError::Invalid("buffer_len must be at least 1"));
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

/// What the controller wants the arm to do this tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PoseStepCommand {
    /// Execute a bounded pose increment: translate by `delta_p` (world frame,
    /// mm) and rotate by `delta_q` (body frame).
    Step {
        delta_p: Vector3<f64>,
        delta_q: UnitQuaternion<f64>,
    },
    /// Do nothing this tick (step in flight, buffer warming, or error jump).
    Hold,
    /// Both errors are inside tolerance; stay put.
    Converged,
}

/// Translation step length for an averaged error magnitude: `step_min` below
/// the window, `step_max` above it, linear in between.
pub fn step_size(delta_d_mm: f64, cfg: &V1Config) -> f64 {
    if delta_d_mm >= cfg.error_high_mm {
        cfg.step_max_mm
    } else if delta_d_mm <= cfg.error_low_mm {
        cfg.step_min_mm
    } else {
        let frac = (delta_d_mm - cfg.error_low_mm) / (cfg.error_high_mm - cfg.error_low_mm);
        cfg.step_min_mm + frac * (cfg.step_max_mm - cfg.step_min_mm)
    }
}

/// Mutable state of the step-and-settle controller.
#[derive(Debug, Clone)]
pub struct V1State {
    buffer: VecDeque<Vector3<f64>>,
    buffer_cap: usize,
    last_delta_d: Option<f64>,
    step_in_flight: bool,
    holding: bool,
}

impl V1State {
    pub fn new(cfg: &V1Config) -> Self {
        Self {
            buffer: VecDeque::with_capacity(cfg.buffer_len),
            buffer_cap: cfg.buffer_len.max(1),
            last_delta_d: None,
            step_in_flight: false,
            holding: false,
        }
    }

    /// Number of error samples currently buffered.
    pub fn buffered_samples(&self) -> usize {
        self.buffer.len()
    }

    /// True while a commanded step has not been reported complete.
    pub fn step_in_flight(&self) -> bool {
        self.step_in_flight
    }

    /// True while the controller is waiting out an error jump.
    pub fn is_holding(&self) -> bool {
        self.holding
    }

    /// Appends a raw translation-error vector (mm) to the averaging buffer
    /// (FIFO, oldest dropped once at capacity) and returns the running mean
    /// over whatever the buffer currently holds. Steps are only ever built
    /// from a full buffer — the gate enforces that — but the running mean is
    /// observable earlier.
    pub fn push_and_average(&mut self, raw_error_mm: Vector3<f64>) -> Vector3<f64> {
        if self.buffer.len() == self.buffer_cap {
            self.buffer.pop_front();
        }
        self.buffer.push_back(raw_error_mm);
        let sum: Vector3<f64> = self.buffer.iter().sum();
        sum / self.buffer.len() as f64
    }

    /// Decides whether a new step may be issued this tick.
    ///
    /// Passes only when no step is in flight, the averaging buffer is full,
    /// and `Δd` moved by at most the jump threshold since the previous tick
    /// (the first tick has nothing to compare against and counts as stable).
    /// A jump clears the buffer and latches a hold that releases only once
    /// the error is stable again *and* the buffer has refilled.
    pub fn stability_gate(&mut self, current: &PoseError, cfg: &V1Config) -> bool {
        let stable = self
            .last_delta_d
            .is_none_or(|prev| (current.delta_d - prev).abs() <= cfg.jump_threshold_mm);
        self.last_delta_d = Some(current.delta_d);

        if !stable {
            self.holding = true;
            self.buffer.clear();
            return false;
        }
        if self.step_in_flight {
            return false;
        }
        let warm = self.buffer.len() >= self.buffer_cap;
        if self.holding {
            if warm {
                self.holding = false;
            } else {
                return false;
            }
        }
        warm
    }

    /// Tells the controller the arm finished (and settled after) the last
    /// step. Clears the averaging buffer so the next step is computed from
    /// measurements taken entirely at rest. No-op when no step is in flight.
    pub fn notify_step_complete(&mut self) {
        if self.step_in_flight {
            self.step_in_flight = false;
            self.buffer.clear();
        }
    }

    /// Runs one controller cycle against the latest measured poses.
    ///
    /// Returns [`PoseStepCommand::Converged`] once both errors are inside
    /// tolerance, [`PoseStepCommand::Hold`] while the gate is closed, and a
    /// bounded [`PoseStepCommand::Step`] otherwise. The translation step
    /// never exceeds the averaged error magnitude and the rotation step never
    /// exceeds the current error angle, so neither axis can overshoot.
    pub fn tick(
        &mut self,
        ee_meas: &Pose,
        target_meas: &Pose,
        cfg: &V1Config,
    ) -> Result<PoseStepCommand, GeometryError> {
        if !ee_meas.is_finite() || !target_meas.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        let err = pose_error(ee_meas, target_meas)?;

        if err.delta_d <= cfg.conv_pos_tol_mm && err.delta_theta <= cfg.conv_rot_tol_rad {
            // Keep jump bookkeeping fresh so a later disturbance is compared
            // against the error seen now, not the one before convergence.
            let _ = self.stability_gate(&err, cfg);
            return Ok(PoseStepCommand::Converged);
        }

        // Sample before gating so a hold releases on the same tick the
        // buffer refills. In-flight ticks measure a moving arm; skip those.
        let mean = if self.step_in_flight {
            None
        } else {
            Some(self.push_and_average(err.translation_dir * err.delta_d))
        };

        if !self.stability_gate(&err, cfg) {
            return Ok(PoseStepCommand::Hold);
        }

        let mean = mean.expect("gate never passes while a step is in flight");
        let mean_norm = mean.norm();
        let delta_p = if mean_norm > TRANSLATION_DIR_TOL_MM {
            let step = step_size(mean_norm, cfg).min(mean_norm);
            mean * (step / mean_norm)
        } else {
            Vector3::zeros()
        };

        let angle = err
            .delta_theta
            .min(err.delta_theta.clamp(cfg.rot_step_min_rad, cfg.rot_step_max_rad));
        let delta_q = quat_from_axis_angle(err.rotation_axis, angle);

        self.step_in_flight = true;
        Ok(PoseStepCommand::Step { delta_p, delta_q })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::apply_twist;
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;

    fn cfg() -> V1Config {
        V1Config::default()
    }

    fn pose(x: f64, y: f64, z: f64) -> Pose {
        Pose::new(Vector3::new(x, y, z), UnitQuaternion::identity())
    }

    #[test]
    fn default_config_is_valid() {
        cfg().validate().unwrap();
    }

    #[test]
    fn step_size_saturates_and_interpolates() {
        let c = cfg();
        assert_eq!(step_size(c.error_high_mm + 1.0, &c), c.step_max_mm);
        assert_eq!(step_size(c.error_high_mm, &c), c.step_max_mm);
        assert_eq!(step_size(c.error_low_mm, &c), c.step_min_mm);
        assert_eq!(step_size(0.0, &c), c.step_min_mm);
        let mid = 0.5 * (c.error_low_mm + c.error_high_mm);
        assert_relative_eq!(
            step_size(mid, &c),
            0.5 * (c.step_min_mm + c.step_max_mm),
            max_relative = 1e-15
        );
    }

    #[test]
    fn converged_immediately_when_on_target() {
        let mut s = V1State::new(&cfg());
        let p = pose(1.0, 2.0, 3.0);
        assert_eq!(s.tick(&p, &p, &cfg()).unwrap(), PoseStepCommand::Converged);
    }

    #[test]
    fn holds_until_buffer_is_warm_then_steps() {
        let c = cfg();
        let mut s = V1State::new(&c);
        let ee = pose(0.0, 0.0, 0.0);
        let target = pose(400.0, 0.0, 0.0);
        for k in 0..c.buffer_len - 1 {
            assert_eq!(s.tick(&ee, &target, &c).unwrap(), PoseStepCommand::Hold, "tick {k}");
        }
        match s.tick(&ee, &target, &c).unwrap() {
            PoseStepCommand::Step { delta_p, delta_q } => {
                // Averaged error is exactly (400, 0, 0), inside the linear zone.
                let expected = step_size(400.0, &c);
                assert_relative_eq!(delta_p.norm(), expected, max_relative = 1e-12);
                assert_relative_eq!(delta_p.x, expected, max_relative = 1e-12);
                assert_eq!(delta_q, UnitQuaternion::identity());
            }
            other => panic!("expected a step, got {other:?}"),
        }
        assert!(s.step_in_flight());
    }

    #[test]
    fn in_flight_ticks_hold_and_do_not_sample() {
        let c = cfg();
        let mut s = V1State::new(&c);
        let target = pose(400.0, 0.0, 0.0);
        for _ in 0..c.buffer_len {
            let _ = s.tick(&pose(0.0, 0.0, 0.0), &target, &c).unwrap();
        }
        assert!(s.step_in_flight());
        assert_eq!(
            s.tick(&pose(20.0, 0.0, 0.0), &target, &c).unwrap(),
            PoseStepCommand::Hold
        );
        assert_eq!(s.buffered_samples(), c.buffer_len, "moving-arm samples must be dropped");
        s.notify_step_complete();
        assert!(!s.step_in_flight());
        assert_eq!(s.buffered_samples(), 0, "buffer restarts after each step");
    }

    #[test]
    fn notify_without_step_is_a_no_op() {
        let c = cfg();
        let mut s = V1State::new(&c);
        s.push_and_average(Vector3::new(1.0, 0.0, 0.0));
        s.notify_step_complete();
        assert_eq!(s.buffered_samples(), 1);
    }

    #[test]
    fn running_mean_tracks_the_retained_window() {
        let mut c = cfg();
        c.buffer_len = 4;
        let mut s = V1State::new(&c);
        // A lone sample is its own mean.
        let v = Vector3::new(2.0, -1.0, 0.5);
        assert_eq!(s.push_and_average(v), v);
        // Further pushes against a brute-force recompute of the window.
        let mut history = vec![v];
        for k in 1..10 {
            let x = Vector3::new(k as f64, (k * k) as f64, -0.5 * k as f64);
            history.push(x);
            let got = s.push_and_average(x);
            let tail = &history[history.len().saturating_sub(c.buffer_len)..];
            let want = tail.iter().sum::<Vector3<f64>>() / tail.len() as f64;
            assert_relative_eq!(got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn mean_of_one_push_per_axis_is_uniform() {
        let mut c = cfg();
        c.buffer_len = 3;
        let mut s = V1State::new(&c);
        s.push_and_average(Vector3::new(3.0, 0.0, 0.0));
        s.push_and_average(Vector3::new(0.0, 3.0, 0.0));
        assert_eq!(
            s.push_and_average(Vector3::new(0.0, 0.0, 3.0)),
            Vector3::new(1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn error_jump_clears_buffer_and_latches_hold() {
        let c = cfg();
        let mut s = V1State::new(&c);
        let target = pose(400.0, 0.0, 0.0);
        for _ in 0..c.buffer_len - 1 {
            let _ = s.tick(&pose(0.0, 0.0, 0.0), &target, &c).unwrap();
        }
        // Δd drops from 400 to 300: larger than the jump threshold.
        assert_eq!(
            s.tick(&pose(100.0, 0.0, 0.0), &target, &c).unwrap(),
            PoseStepCommand::Hold
        );
        assert!(s.is_holding());
        assert_eq!(s.buffered_samples(), 0);
        // Stable again: hold persists until the buffer refills, then releases.
        for k in 0..c.buffer_len - 1 {
            assert_eq!(
                s.tick(&pose(100.0, 0.0, 0.0), &target, &c).unwrap(),
                PoseStepCommand::Hold,
                "refill tick {k}"
            );
            assert!(s.is_holding());
        }
        match s.tick(&pose(100.0, 0.0, 0.0), &target, &c).unwrap() {
            PoseStepCommand::Step { .. } => {}
            other => panic!("hold should release once refilled, got {other:?}"),
        }
        assert!(!s.is_holding());
    }

    #[test]
    fn translation_step_never_overshoots_small_errors() {
        let c = cfg();
        let mut s = V1State::new(&c);
        // Averaged error of 3 mm is below step_min (5 mm): step the full error.
        let ee = pose(0.0, 0.0, 0.0);
        let target = Pose::new(
            Vector3::new(3.0, 0.0, 0.0),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.1),
        );
        let mut last = PoseStepCommand::Hold;
        for _ in 0..c.buffer_len {
            last = s.tick(&ee, &target, &c).unwrap();
        }
        match last {
            PoseStepCommand::Step { delta_p, .. } => {
                assert_relative_eq!(delta_p, Vector3::new(3.0, 0.0, 0.0), epsilon = 1e-12);
            }
            other => panic!("expected a step, got {other:?}"),
        }
    }

    #[test]
    fn rotation_step_is_clamped_but_never_overshoots() {
        let c = cfg();
        let big = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 50.0_f64.to_radians());
        let small = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 0.2_f64.to_radians());
        let ee = pose(0.0, 0.0, 0.0);

        let mut s = V1State::new(&c);
        let mut last = PoseStepCommand::Hold;
        let far_target = Pose::new(Vector3::new(100.0, 0.0, 0.0), big);
        for _ in 0..c.buffer_len {
            last = s.tick(&ee, &far_target, &c).unwrap();
        }
        match last {
            PoseStepCommand::Step { delta_q, .. } => {
                assert_relative_eq!(delta_q.angle(), c.rot_step_max_rad, max_relative = 1e-12);
            }
            other => panic!("expected a step, got {other:?}"),
        }

        // A 0.2 deg error is below rot_step_min; the command must not exceed it.
        let mut s = V1State::new(&c);
        let near_target = Pose::new(Vector3::new(100.0, 0.0, 0.0), small);
        for _ in 0..c.buffer_len {
            last = s.tick(&ee, &near_target, &c).unwrap();
        }
        match last {
            PoseStepCommand::Step { delta_q, .. } => {
                assert_relative_eq!(delta_q.angle(), 0.2_f64.to_radians(), max_relative = 1e-9);
            }
            other => panic!("expected a step, got {other:?}"),
        }
    }

    #[test]
    fn noiseless_loop_converges_monotonically() {
        let c = cfg();
        let mut s = V1State::new(&c);
        let target = Pose::new(
            Vector3::new(871.0, -459.0, 221.0),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), core::f64::consts::FRAC_PI_2),
        );
        let mut ee = Pose::new(target.position + Vector3::new(-300.0, 400.0, 0.0), UnitQuaternion::identity());
        let mut last_dd = f64::INFINITY;
        let mut last_dth = f64::INFINITY;
        let mut steps = 0;
        for _ in 0..10_000 {
            match s.tick(&ee, &target, &c).unwrap() {
                PoseStepCommand::Step { delta_p, delta_q } => {
                    ee.position += delta_p;
                    ee.orientation = crate::geometry::quat_compose(&ee.orientation, &delta_q);
                    s.notify_step_complete();
                    let err = pose_error(&ee, &target).unwrap();
                    assert!(err.delta_d <= last_dd + 1e-9, "Δd must not grow");
                    assert!(err.delta_theta <= last_dth + 1e-9, "Δθ must not grow");
                    last_dd = err.delta_d;
                    last_dth = err.delta_theta;
                    steps += 1;
                }
                PoseStepCommand::Hold => {}
                PoseStepCommand::Converged => {
                    let err = pose_error(&ee, &target).unwrap();
                    assert!(err.delta_d <= c.conv_pos_tol_mm);
                    assert!(err.delta_theta <= c.conv_rot_tol_rad);
                    assert!(steps > 3, "should take several bounded steps");
                    return;
                }
            }
        }
        panic!("controller failed to converge");
    }

    #[test]
    fn non_finite_measurement_is_rejected() {
        let c = cfg();
        let mut s = V1State::new(&c);
        let bad = Pose::new(Vector3::new(f64::NAN, 0.0, 0.0), UnitQuaternion::identity());
        assert_eq!(
            s.tick(&bad, &pose(1.0, 0.0, 0.0), &c).unwrap_err(),
            GeometryError::NonFinite
        );
    }

    #[test]
    fn step_applied_as_twist_matches_direct_application() {
        // A pose step (Δp, Δq) equals integrating the matching twist for 1 s.
        let c = cfg();
        let mut s = V1State::new(&c);
        let ee = pose(0.0, 0.0, 0.0);
        let target = Pose::new(
            Vector3::new(200.0, -100.0, 50.0),
            UnitQuaternion::from_euler_angles(0.2, -0.1, 0.4),
        );
        let mut last = PoseStepCommand::Hold;
        for _ in 0..c.buffer_len {
            last = s.tick(&ee, &target, &c).unwrap();
        }
        if let PoseStepCommand::Step { delta_p, delta_q } = last {
            let twist = crate::geometry::TwistCommand {
                linear: delta_p,
                angular: delta_q.scaled_axis(),
                stage: crate::geometry::Stage::Raw,
            };
            let via_twist = apply_twist(&ee, &twist, 1.0);
            assert_relative_eq!(via_twist.position, ee.position + delta_p, epsilon = 1e-12);
        } else {
            panic!("expected a step");
        }
    }
}
