//! Pose-level plant simulator.
//!
//! Stands in for the arm, its low-level controller, and the pose sensor so
//! the alignment controllers can be exercised against realistic defects:
//!
//! * **Execution** — pose steps are followed by straight-line interpolation
//!   at fixed linear/rotational speeds; twist commands are tracked through a
//!   first-order lag.
//! * **Backlash** — each body rotation axis carries a play automaton: a gap
//!   of configurable width that must be traversed before a direction reversal
//!   produces motion.
//! * **Mount flex** — a slowly wandering position bias, bounded in norm,
//!   added to measurements only (the arm really is where it thinks it is;
//!   the *sensor* disagrees).
//! * **Sensing** — measurements are delayed by a configurable number of
//!   sensor ticks and perturbed by Gaussian noise.
//!
//! All randomness comes from a `ChaCha8Rng` seeded in the configuration, so
//! a trial re-run with the same seed reproduces every measurement bit for
//! bit.

use alloc::collections::VecDeque;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::controller_v1::PoseStepCommand;
use crate::geometry::{quat_compose, Pose};
use crate::ConfigError;

/// Consecutive quiet low-level ticks required after a step before the plant
/// reports completion.
pub const SETTLE_WINDOW_TICKS: usize = 3;
/// Per-tick true-pose translation below which the arm counts as quiet, mm.
pub const SETTLE_POS_TOL_MM: f64 = 0.5;
/// Per-tick true-pose rotation below which the arm counts as quiet, rad.
pub const SETTLE_ROT_TOL_RAD: f64 = 0.2 * core::f64::consts::PI / 180.0;

/// The wandering flex bias takes steps of `flex_magnitude / this` per tick,
/// so it drifts noticeably over a trial but never jumps within a tick.
const FLEX_WALK_DIVISOR: f64 = 200.0;

/// Simulator parameters. The default is a disturbance-free plant; use
/// [`PlantConfig::moderate`] / [`PlantConfig::harsh`] for the stock defect
/// profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantConfig {
    /// Motion integration rate, Hz.
    pub lowlevel_rate_hz: f64,
    /// Measurement rate, Hz (latency is counted in these ticks).
    pub sensor_rate_hz: f64,
    /// Per-axis Gaussian position noise on measurements, mm.
    pub noise_sigma_mm: f64,
    /// Per-axis Gaussian orientation noise on measurements, rad.
    pub noise_sigma_rad: f64,
    /// Measurement delay in sensor ticks.
    pub latency_ticks: usize,
    /// Rotational play per body axis, rad (total gap width).
    pub backlash_deadband_rad: f64,
    /// Norm bound on the wandering measurement bias, mm.
    pub flex_magnitude_mm: f64,
    /// First-order tracking lag for twist commands, s (0 = perfect tracking).
    pub tracking_lag_tau_s: f64,
    /// Straight-line execution speed for pose steps, mm/s.
    pub exec_lin_speed_mm_s: f64,
    /// Rotation execution speed for pose steps, rad/s.
    pub exec_rot_speed_rad_s: f64,
    /// Seed for the per-trial random stream.
    pub rng_seed: u64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            lowlevel_rate_hz: 30.0,
            sensor_rate_hz: 180.0,
            noise_sigma_mm: 0.0,
            noise_sigma_rad: 0.0,
            latency_ticks: 0,
            backlash_deadband_rad: 0.0,
            flex_magnitude_mm: 0.0,
            tracking_lag_tau_s: 0.0,
            exec_lin_speed_mm_s: 25.0,
            exec_rot_speed_rad_s: 10.0_f64.to_radians(),
            rng_seed: 0,
        }
    }
}

impl PlantConfig {
    /// Typical well-behaved rig: sub-mm noise, slight delay, a degree of
    /// gear play and a little mount flex.
    pub fn moderate(seed: u64) -> Self {
        Self {
            noise_sigma_mm: 0.5,
            noise_sigma_rad: 0.1_f64.to_radians(),
            latency_ticks: 2,
            backlash_deadband_rad: 1.0_f64.to_radians(),
            flex_magnitude_mm: 10.0,
            tracking_lag_tau_s: 0.05,
            rng_seed: seed,
            ..Self::default()
        }
    }

    /// Heavily degraded rig: worn gearboxes and a compliant mount.
    pub fn harsh(seed: u64) -> Self {
        Self {
            noise_sigma_mm: 1.0,
            noise_sigma_rad: 0.2_f64.to_radians(),
            latency_ticks: 3,
            backlash_deadband_rad: 10.0_f64.to_radians(),
            flex_magnitude_mm: 100.0,
            tracking_lag_tau_s: 0.1,
            rng_seed: seed,
            ..Self::default()
        }
    }

    // Negated comparisons so a NaN field fails validation too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.lowlevel_rate_hz > 0.0 && self.sensor_rate_hz > 0.0) {
            return Err(ConfigError::Invalid("rates must be positive"));
        }
        if !(self.noise_sigma_mm >= 0.0 && self.noise_sigma_rad >= 0.0) {
            return Err(ConfigError::Invalid("noise sigmas must be non-negative"));
        }
        if !(self.backlash_deadband_rad >= 0.0 && self.backlash_deadband_rad <= core::f64::consts::PI)
        {
            return Err(ConfigError::Invalid("backlash deadband must lie in [0, pi]"));
        }
        if !(self.flex_magnitude_mm >= 0.0) {
            return Err(ConfigError::Invalid("flex magnitude must be non-negative"));
        }
        if !(self.tracking_lag_tau_s >= 0.0) {
            return Err(ConfigError::Invalid("tracking lag must be non-negative"));
        }
        if !(self.exec_lin_speed_mm_s > 0.0 && self.exec_rot_speed_rad_s > 0.0) {
            return Err(ConfigError::Invalid("execution speeds must be positive"));
        }
        Ok(())
    }
}

/// Errors from driving the plant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum PlantError {
    /// A pose step was commanded while the previous one was still executing
    /// or settling.
    #[error("a pose step is already executing")]
    Busy,
}

/// In-flight straight-line pose step. Progress is tracked in whole low-level
/// ticks so the final tick lands on the goal exactly.
#[derive(Debug, Clone)]
struct LerpPlan {
    start: Pose,
    goal: Pose,
    ticks_total: u32,
    ticks_done: u32,
    prev_desired: UnitQuaternion<f64>,
}

/// Rotational play on one body axis: `gap` is how far into the deadband the
/// drive currently sits, in `[0, deadband]`.
#[derive(Debug, Clone, Copy)]
struct BacklashAxis {
    gap: f64,
}

/// The simulated arm + sensor. See the module docs for the defect model.
#[derive(Debug, Clone)]
pub struct Plant {
    cfg: PlantConfig,
    true_pose: Pose,
    target: Pose,
    plan: Option<LerpPlan>,
    awaiting_settle: bool,
    completion_pending: bool,
    twist_lin_setpoint: Vector3<f64>,
    twist_ang_setpoint: Vector3<f64>,
    lagged_lin: Vector3<f64>,
    lagged_ang: Vector3<f64>,
    backlash: [BacklashAxis; 3],
    flex_bias: Vector3<f64>,
    meas_queue: VecDeque<Pose>,
    recent_true: VecDeque<Pose>,
    rng: ChaCha8Rng,
}

impl Plant {
    /// Builds a plant at `initial_pose` chasing `target`. The measurement
    /// delay line is pre-filled so the first measurement is available
    /// immediately, and the backlash gaps start centred in their deadbands.
    pub fn new(cfg: PlantConfig, initial_pose: Pose, target: Pose) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);

        let flex_bias = if cfg.flex_magnitude_mm > 0.0 {
            // Start somewhere random inside half the bound rather than at
            // zero, so the first measurements already carry a bias.
            let dir = Vector3::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            );
            let norm = dir.norm();
            if norm > 0.0 {
                dir / norm * (rng.random::<f64>() * 0.5 * cfg.flex_magnitude_mm)
            } else {
                Vector3::zeros()
            }
        } else {
            Vector3::zeros()
        };

        let gap = 0.5 * cfg.backlash_deadband_rad;
        let mut plant = Self {
            true_pose: initial_pose,
            target,
            plan: None,
            awaiting_settle: false,
            completion_pending: false,
            twist_lin_setpoint: Vector3::zeros(),
            twist_ang_setpoint: Vector3::zeros(),
            lagged_lin: Vector3::zeros(),
            lagged_ang: Vector3::zeros(),
            backlash: [BacklashAxis { gap }; 3],
            flex_bias,
            meas_queue: VecDeque::with_capacity(cfg.latency_ticks + 1),
            recent_true: VecDeque::with_capacity(SETTLE_WINDOW_TICKS + 1),
            rng,
            cfg,
        };
        for _ in 0..plant.cfg.latency_ticks + 1 {
            let snapshot = plant.noisy_ee_snapshot();
            plant.meas_queue.push_back(snapshot);
        }
        Ok(plant)
    }

    pub fn config(&self) -> &PlantConfig {
        &self.cfg
    }

    /// Where the arm actually is (the controllers never see this).
    pub fn true_pose(&self) -> &Pose {
        &self.true_pose
    }

    pub fn target(&self) -> &Pose {
        &self.target
    }

    /// Moves the true target, e.g. to script a disturbance mid-trial.
    pub fn set_target(&mut self, target: Pose) {
        self.target = target;
    }

    /// Current measurement bias from simulated mount flex, mm.
    pub fn flex_bias(&self) -> &Vector3<f64> {
        &self.flex_bias
    }

    /// True from the moment a pose step is accepted until it has been
    /// reported complete through [`Plant::poll_step_complete`].
    pub fn is_busy(&self) -> bool {
        self.plan.is_some() || self.awaiting_settle || self.completion_pending
    }

    /// Accepts a pose step for execution. `Hold`/`Converged` are no-ops.
    /// A step of zero length and zero rotation completes immediately.
    pub fn execute_pose_step(&mut self, cmd: &PoseStepCommand) -> Result<(), PlantError> {
        let (delta_p, delta_q) = match cmd {
            PoseStepCommand::Step { delta_p, delta_q } => (*delta_p, *delta_q),
            PoseStepCommand::Hold | PoseStepCommand::Converged => return Ok(()),
        };
        if self.is_busy() {
            return Err(PlantError::Busy);
        }
        let goal = Pose {
            position: self.true_pose.position + delta_p,
            orientation: quat_compose(&self.true_pose.orientation, &delta_q),
        };
        let duration = (delta_p.norm() / self.cfg.exec_lin_speed_mm_s)
            .max(delta_q.angle() / self.cfg.exec_rot_speed_rad_s);
        if duration == 0.0 {
            self.completion_pending = true;
            return Ok(());
        }
        let ticks_total = libm::ceil(duration * self.cfg.lowlevel_rate_hz).max(1.0) as u32;
        self.plan = Some(LerpPlan {
            start: self.true_pose,
            goal,
            ticks_total,
            ticks_done: 0,
            prev_desired: self.true_pose.orientation,
        });
        Ok(())
    }

    /// Sets the twist the low-level loop should track (world-frame linear,
    /// body-frame angular). An in-flight pose step takes priority.
    pub fn set_twist(&mut self, linear: Vector3<f64>, angular: Vector3<f64>) {
        self.twist_lin_setpoint = linear;
        self.twist_ang_setpoint = angular;
    }

    /// One-shot: true exactly once per completed-and-settled pose step.
    pub fn poll_step_complete(&mut self) -> bool {
        core::mem::take(&mut self.completion_pending)
    }

    /// Advances the arm by one low-level tick.
    pub fn step_lowlevel(&mut self) {
        let dt = 1.0 / self.cfg.lowlevel_rate_hz;
        self.update_flex();

        if let Some(mut plan) = self.plan.take() {
            plan.ticks_done += 1;
            let done = plan.ticks_done >= plan.ticks_total;
            let (desired_pos, desired_rot) = if done {
                (plan.goal.position, plan.goal.orientation)
            } else {
                let tau = f64::from(plan.ticks_done) / f64::from(plan.ticks_total);
                (
                    plan.start.position + (plan.goal.position - plan.start.position) * tau,
                    plan.start.orientation.slerp(&plan.goal.orientation, tau),
                )
            };
            // Translation tracks the plan exactly; rotation feeds through the
            // gear-play automaton one increment at a time.
            self.true_pose.position = desired_pos;
            let inc = (plan.prev_desired.inverse() * desired_rot).scaled_axis();
            let inc = self.backlash_filter(inc);
            self.true_pose.orientation = quat_compose(
                &self.true_pose.orientation,
                &UnitQuaternion::from_scaled_axis(inc),
            );
            plan.prev_desired = desired_rot;
            if done {
                self.awaiting_settle = true;
            } else {
                self.plan = Some(plan);
            }
        } else {
            let a = if self.cfg.tracking_lag_tau_s == 0.0 {
                1.0
            } else {
                dt / (self.cfg.tracking_lag_tau_s + dt)
            };
            if a == 1.0 {
                self.lagged_lin = self.twist_lin_setpoint;
                self.lagged_ang = self.twist_ang_setpoint;
            } else {
                self.lagged_lin += (self.twist_lin_setpoint - self.lagged_lin) * a;
                self.lagged_ang += (self.twist_ang_setpoint - self.lagged_ang) * a;
            }
            self.true_pose.position += self.lagged_lin * dt;
            let inc = self.backlash_filter(self.lagged_ang * dt);
            self.true_pose.orientation = quat_compose(
                &self.true_pose.orientation,
                &UnitQuaternion::from_scaled_axis(inc),
            );
        }

        if self.recent_true.len() > SETTLE_WINDOW_TICKS {
            self.recent_true.pop_front();
        }
        self.recent_true.push_back(self.true_pose);
        if self.awaiting_settle && self.window_is_quiet() {
            self.awaiting_settle = false;
            self.completion_pending = true;
        }
    }

    /// Takes one sensor reading: the (delayed, flex-biased, noisy)
    /// end-effector pose and the (noisy) target pose.
    pub fn measure(&mut self) -> (Pose, Pose) {
        let snapshot = self.noisy_ee_snapshot();
        self.meas_queue.push_back(snapshot);
        if self.meas_queue.len() > self.cfg.latency_ticks + 1 {
            self.meas_queue.pop_front();
        }
        let ee = *self.meas_queue.front().expect("queue pre-filled at construction");

        let target_pos = self.target.position + self.noise_vec(self.cfg.noise_sigma_mm);
        let target_rot = self.noisy_rotation(self.target.orientation);
        (ee, Pose::new(target_pos, target_rot))
    }

    fn noisy_ee_snapshot(&mut self) -> Pose {
        let position =
            self.true_pose.position + self.flex_bias + self.noise_vec(self.cfg.noise_sigma_mm);
        let orientation = self.noisy_rotation(self.true_pose.orientation);
        Pose::new(position, orientation)
    }

    fn noise_vec(&mut self, sigma: f64) -> Vector3<f64> {
        if sigma == 0.0 {
            return Vector3::zeros();
        }
        Vector3::new(
            self.rng.sample::<f64, _>(StandardNormal),
            self.rng.sample::<f64, _>(StandardNormal),
            self.rng.sample::<f64, _>(StandardNormal),
        ) * sigma
    }

    fn noisy_rotation(&mut self, q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
        let noise = self.noise_vec(self.cfg.noise_sigma_rad);
        if noise == Vector3::zeros() {
            return q;
        }
        quat_compose(&q, &UnitQuaternion::from_scaled_axis(noise))
    }

    fn update_flex(&mut self) {
        if self.cfg.flex_magnitude_mm == 0.0 {
            return;
        }
        let step = self.noise_vec(self.cfg.flex_magnitude_mm / FLEX_WALK_DIVISOR);
        self.flex_bias += step;
        let norm = self.flex_bias.norm();
        if norm > self.cfg.flex_magnitude_mm {
            self.flex_bias *= self.cfg.flex_magnitude_mm / norm;
        }
    }

    /// Feeds a body-frame rotation increment (rad, per axis) through the
    /// play automaton. Motion into the free part of the gap is absorbed;
    /// only what pushes past the gap edge reaches the output.
    fn backlash_filter(&mut self, inc: Vector3<f64>) -> Vector3<f64> {
        let b = self.cfg.backlash_deadband_rad;
        if b == 0.0 {
            return inc;
        }
        let mut out = Vector3::zeros();
        for axis in 0..3 {
            let gap = &mut self.backlash[axis].gap;
            let x = inc[axis];
            if x > 0.0 {
                let absorbed = x.min(b - *gap);
                *gap += absorbed;
                out[axis] = x - absorbed;
            } else if x < 0.0 {
                let absorbed = (-x).min(*gap);
                *gap -= absorbed;
                out[axis] = x + absorbed;
            }
        }
        out
    }

    fn window_is_quiet(&self) -> bool {
        if self.recent_true.len() < SETTLE_WINDOW_TICKS + 1 {
            return false;
        }
        let mut prev: Option<&Pose> = None;
        for pose in &self.recent_true {
            if let Some(p) = prev {
                let moved = (pose.position - p.position).norm();
                let turned = p.orientation.angle_to(&pose.orientation);
                if moved >= SETTLE_POS_TOL_MM || turned >= SETTLE_ROT_TOL_RAD {
                    return false;
                }
            }
            prev = Some(pose);
        }
        true
    }
}
