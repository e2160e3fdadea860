//! Runs one trial: a controller against the simulated plant under a
//! deterministic event scheduler.
//!
//! All event times are computed as `count / rate` (never accumulated), so
//! clocks with commensurate rates coincide exactly and a re-run with the
//! same seed replays the identical event sequence. Events sharing a
//! timestamp are processed in a fixed order: sensor → controller → plant →
//! log.

use align_core::{
    pose_error, GeometryError, Plant, PlantError, Pose, PoseStepCommand, V1State, V2State,
    V2TickOutput, CONVERGENCE_DWELL_TICKS,
};
use nalgebra::Vector3;

use crate::metrics;
use crate::scenario::{ControllerKind, Scenario};

#[derive(Debug, thiserror::Error)]
pub enum TrialError {
    #[error(transparent)]
    Config(#[from] align_core::ConfigError),
    #[error("measurement geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("plant rejected a command: {0}")]
    Plant(#[from] PlantError),
}

/// One logged sample. The full controller pipeline state is captured so a
/// CSV row alone can explain why the commanded twist looked the way it did.
/// Rows from the step-and-settle controller leave the twist pipeline fields
/// zeroed (caps zero, factors neutral).
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    /// Simulated time, s.
    pub t: f64,
    /// Measured end-effector pose (what the controller saw).
    pub ee_pose: Pose,
    /// True end-effector position (what the plant knows), mm.
    pub true_pos: Vector3<f64>,
    /// Measured translation error, mm.
    pub dd_mm: f64,
    /// Measured rotation error, rad.
    pub dtheta_rad: f64,
    /// Base and effective speed caps (v2 only).
    pub base_t: f64,
    pub base_r: f64,
    pub eff_t: f64,
    pub eff_r: f64,
    /// Shrink factors (v2 only; neutral 1.0 otherwise).
    pub f_j: f64,
    pub f_k: f64,
    pub f_s: f64,
    /// Twist pipeline stages (v2 only): raw, clamped, smoothed.
    pub vraw: Vector3<f64>,
    pub wraw: Vector3<f64>,
    pub vc: Vector3<f64>,
    pub wc: Vector3<f64>,
    pub vs: Vector3<f64>,
    pub ws: Vector3<f64>,
    /// True when the controller was in a disturbance hold at this sample.
    pub hold: bool,
}

impl LogRow {
    pub fn is_finite(&self) -> bool {
        let vecs = [
            self.true_pos, self.vraw, self.wraw, self.vc, self.wc, self.vs, self.ws,
        ];
        self.t.is_finite()
            && self.ee_pose.is_finite()
            && vecs.iter().all(|v| v.iter().all(|c| c.is_finite()))
            && [
                self.dd_mm, self.dtheta_rad, self.base_t, self.base_r, self.eff_t, self.eff_r,
                self.f_j, self.f_k, self.f_s,
            ]
            .iter()
            .all(|c| c.is_finite())
    }
}

/// Derived per-trial metrics; always recomputable from the rows via
/// [`metrics::compute_metrics`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSummary {
    /// True when the trial ended inside tolerance.
    pub converged: bool,
    /// Entry time of the final in-tolerance stretch, s (None if never).
    pub duration_s: Option<f64>,
    /// Errors at the last logged sample.
    pub final_dd_mm: f64,
    pub final_dtheta_deg: f64,
    /// Total true-position path length, mm.
    pub path_length_mm: f64,
    /// Worst lateral (off net-direction) RMS over a sliding 10-row window, mm.
    pub max_lateral_rms_mm: f64,
    /// Simulated time covered by the log, s.
    pub sim_time_s: f64,
    pub rows: usize,
}

/// Everything one trial produced.
#[derive(Debug, Clone)]
pub struct TrialRecord {
    /// Scenario name (the condition label).
    pub condition: String,
    pub controller: ControllerKind,
    /// Head-to-head comparability fingerprint from the scenario.
    pub scenario_key: String,
    pub seed: u64,
    pub rows: Vec<LogRow>,
    pub summary: TrialSummary,
}

/// Fixed-rate clock; `next()` is always an exact `count / rate` quotient.
struct Clock {
    count: u64,
    rate: f64,
}

impl Clock {
    fn new(rate: f64) -> Self {
        Self { count: 0, rate }
    }

    fn next(&self) -> f64 {
        self.count as f64 / self.rate
    }

    /// True when this clock fires at `t`; advances it if so.
    fn fire(&mut self, t: f64) -> bool {
        if self.next() == t {
            self.count += 1;
            true
        } else {
            false
        }
    }
}

enum Controller {
    V1(V1State),
    V2(V2State),
}

/// Runs a full trial of `scenario` with the plant seeded by `seed`.
pub fn run_trial(scenario: &Scenario, seed: u64) -> Result<TrialRecord, TrialError> {
    let mut plant_cfg = scenario.plant.clone();
    plant_cfg.rng_seed = seed;
    let target = scenario.effective_target();
    let mut plant = Plant::new(plant_cfg, scenario.initial_pose, target)?;

    let ctrl_rate = match scenario.controller {
        ControllerKind::V1 => scenario.plant.lowlevel_rate_hz,
        ControllerKind::V2 => scenario.v2_tick_rate_hz,
    };
    let mut controller = match scenario.controller {
        ControllerKind::V1 => Controller::V1(V1State::new(&scenario.v1)),
        ControllerKind::V2 => Controller::V2(V2State::new(&scenario.v2)),
    };

    let mut sensor = Clock::new(scenario.plant.sensor_rate_hz);
    let mut ctrl = Clock::new(ctrl_rate);
    let mut lowlevel = Clock::new(scenario.plant.lowlevel_rate_hz);
    let mut log = Clock::new(scenario.log_rate_hz);
    let lowlevel_dt = 1.0 / scenario.plant.lowlevel_rate_hz;

    let pos_tol = conv_pos_tol(scenario);
    let rot_tol = conv_rot_tol(scenario);

    let mut latest_meas: Option<(Pose, Pose)> = None;
    let mut last_v2: Option<V2TickOutput> = None;
    let mut v1_hold = false;
    let mut v1_converged_ticks: u32 = 0;
    let mut converged_at: Option<f64> = None;
    let mut teleported = false;

    let mut rows: Vec<LogRow> = Vec::new();

    loop {
        let t = sensor
            .next()
            .min(ctrl.next())
            .min(lowlevel.next())
            .min(log.next());
        if t > scenario.max_sim_time_s {
            break;
        }

        // Scripted target teleport fires at the first processed instant at or
        // after its trigger time, before anything measures.
        if let Some(ev) = &scenario.target_event {
            if !teleported && t >= ev.at_s {
                let mut tgt = *plant.target();
                tgt.position += ev.offset_mm;
                plant.set_target(tgt);
                teleported = true;
            }
        }

        if sensor.fire(t) {
            latest_meas = Some(plant.measure());
        }

        if ctrl.fire(t) {
            let (ee, tgt) = latest_meas.expect("sensor clock fires first at t = 0");
            match &mut controller {
                Controller::V1(state) => {
                    if plant.poll_step_complete() {
                        state.notify_step_complete();
                    }
                    let cmd = state.tick(&ee, &tgt, &scenario.v1)?;
                    match cmd {
                        PoseStepCommand::Step { .. } => {
                            plant.execute_pose_step(&cmd)?;
                            v1_converged_ticks = 0;
                        }
                        PoseStepCommand::Hold => v1_converged_ticks = 0,
                        PoseStepCommand::Converged => v1_converged_ticks += 1,
                    }
                    v1_hold = state.is_holding();
                    if v1_converged_ticks >= CONVERGENCE_DWELL_TICKS && converged_at.is_none() {
                        converged_at = Some(t);
                    }
                }
                Controller::V2(state) => {
                    let out = state.tick(&ee, &tgt, &scenario.v2);
                    plant.set_twist(out.smoothed.linear, out.smoothed.angular);
                    if out.converged && converged_at.is_none() {
                        converged_at = Some(t);
                    }
                    last_v2 = Some(out);
                }
            }
        }

        if lowlevel.fire(t) {
            if let Some(ev) = &scenario.target_event {
                if teleported && t < ev.at_s + ev.drift_duration_s {
                    let mut tgt = *plant.target();
                    tgt.position += ev.drift_mm_s * lowlevel_dt;
                    plant.set_target(tgt);
                }
            }
            plant.step_lowlevel();
        }

        if log.fire(t) {
            let (ee, tgt) = latest_meas.expect("sensor clock fires first at t = 0");
            let err = pose_error(&ee, &tgt)?;
            let row = match (&controller, &last_v2) {
                (Controller::V1(_), _) => LogRow {
                    t,
                    ee_pose: ee,
                    true_pos: plant.true_pose().position,
                    dd_mm: err.delta_d,
                    dtheta_rad: err.delta_theta,
                    base_t: 0.0,
                    base_r: 0.0,
                    eff_t: 0.0,
                    eff_r: 0.0,
                    f_j: 1.0,
                    f_k: 1.0,
                    f_s: 1.0,
                    vraw: Vector3::zeros(),
                    wraw: Vector3::zeros(),
                    vc: Vector3::zeros(),
                    wc: Vector3::zeros(),
                    vs: Vector3::zeros(),
                    ws: Vector3::zeros(),
                    hold: v1_hold,
                },
                (Controller::V2(_), Some(out)) => LogRow {
                    t,
                    ee_pose: ee,
                    true_pos: plant.true_pose().position,
                    dd_mm: err.delta_d,
                    dtheta_rad: err.delta_theta,
                    base_t: out.bounds.base_lin_mm_s,
                    base_r: out.bounds.base_rot_rad_s,
                    eff_t: out.bounds.eff_lin_mm_s,
                    eff_r: out.bounds.eff_rot_rad_s,
                    f_j: out.factors.jitter,
                    f_k: out.factors.error_rate,
                    f_s: out.factors.off_axis,
                    vraw: out.raw.linear,
                    wraw: out.raw.angular,
                    vc: out.clamped.linear,
                    wc: out.clamped.angular,
                    vs: out.smoothed.linear,
                    ws: out.smoothed.angular,
                    hold: out.hold || out.sensor_fault,
                },
                (Controller::V2(_), None) => unreachable!("controller ticks before the log"),
            };
            // Stop once the controller has declared convergence AND the log
            // itself shows an in-tolerance sample — a fresh measurement can
            // sit just outside the band the controller dwelled in, so the
            // flag alone is not enough for the record to end converged.
            let in_tol = row.dd_mm <= pos_tol && row.dtheta_rad <= rot_tol;
            rows.push(row);
            if converged_at.is_some() && in_tol {
                break;
            }
        }
    }

    let summary = metrics::compute_metrics(&rows, pos_tol, rot_tol);
    Ok(TrialRecord {
        condition: scenario.name.clone(),
        controller: scenario.controller,
        scenario_key: scenario.comparison_key(),
        seed,
        rows,
        summary,
    })
}

/// Rebuilds a record from previously logged rows (e.g. a CSV read back for
/// plotting). The summary is recomputed under the default 5 mm / 1°
/// tolerances; the controller kind is inferred from whether the twist
/// pipeline columns were ever populated.
pub fn record_from_rows(condition: &str, seed: u64, rows: Vec<LogRow>) -> TrialRecord {
    let controller = if rows.iter().any(|r| r.eff_t > 0.0) {
        ControllerKind::V2
    } else {
        ControllerKind::V1
    };
    let summary = metrics::compute_metrics(&rows, 5.0, 1.0_f64.to_radians());
    TrialRecord {
        condition: condition.to_string(),
        controller,
        scenario_key: String::new(),
        seed,
        rows,
        summary,
    }
}

fn conv_pos_tol(scenario: &Scenario) -> f64 {
    match scenario.controller {
        ControllerKind::V1 => scenario.v1.conv_pos_tol_mm,
        ControllerKind::V2 => scenario.v2.conv_pos_tol_mm,
    }
}

fn conv_rot_tol(scenario: &Scenario) -> f64 {
    match scenario.controller {
        ControllerKind::V1 => scenario.v1.conv_rot_tol_rad,
        ControllerKind::V2 => scenario.v2.conv_rot_tol_rad,
    }
}
