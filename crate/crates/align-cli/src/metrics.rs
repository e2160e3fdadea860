//! Per-trial metrics and cross-condition aggregation.

use std::collections::BTreeMap;
use std::fmt;

use crate::scenario::ControllerKind;
use crate::trial::{LogRow, TrialRecord, TrialSummary};

/// Window length (rows) for the sliding lateral-RMS statistic.
const LATERAL_WINDOW: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("need at least two conditions to compare, got {0}")]
    TooFewConditions(usize),
    #[error("conditions are not comparable: {0} and {1} differ in geometry, plant, or timing")]
    MismatchedConditions(String, String),
}

/// Derives the trial summary from its log rows.
///
/// * `converged`: the last row is inside both tolerances.
/// * `duration_s`: entry time of the trailing in-tolerance stretch — the
///   first row after which the error never leaves tolerance again.
/// * `path_length_mm`: polyline length of the true position trace.
/// * `max_lateral_rms_mm`: worst over all sliding windows of the RMS
///   distance from the window's own net-displacement line; measures
///   sideways wander without penalising straight-line progress.
pub fn compute_metrics(rows: &[LogRow], pos_tol_mm: f64, rot_tol_rad: f64) -> TrialSummary {
    assert!(!rows.is_empty(), "cannot summarise an empty log");
    let in_tol =
        |r: &LogRow| r.dd_mm <= pos_tol_mm && r.dtheta_rad <= rot_tol_rad;

    let converged = rows.last().map(in_tol).unwrap_or(false);
    let duration_s = if converged {
        let first_bad_from_end = rows.iter().rposition(|r| !in_tol(r));
        let entry = match first_bad_from_end {
            Some(i) => i + 1,
            None => 0,
        };
        Some(rows[entry].t)
    } else {
        None
    };

    let path_length_mm = rows
        .windows(2)
        .map(|p| (p[1].true_pos - p[0].true_pos).norm())
        .sum();

    let max_lateral_rms_mm = rows
        .windows(LATERAL_WINDOW)
        .map(lateral_rms)
        .fold(0.0, f64::max);

    let last = rows.last();
    TrialSummary {
        converged,
        duration_s,
        final_dd_mm: last.map(|r| r.dd_mm).unwrap_or(f64::NAN),
        final_dtheta_deg: last.map(|r| r.dtheta_rad.to_degrees()).unwrap_or(f64::NAN),
        path_length_mm,
        max_lateral_rms_mm,
        sim_time_s: last.map(|r| r.t).unwrap_or(0.0),
        rows: rows.len(),
    }
}

/// RMS perpendicular distance of a window's true positions from the line
/// through its endpoints. A stationary window (no net motion) scores the
/// RMS spread around the first point instead.
fn lateral_rms(window: &[LogRow]) -> f64 {
    let first = window.first().unwrap().true_pos;
    let last = window.last().unwrap().true_pos;
    let net = last - first;
    let dir = if net.norm() > 1e-9 {
        Some(net / net.norm())
    } else {
        None
    };
    let mut sum_sq = 0.0;
    for row in window {
        let rel = row.true_pos - first;
        let perp_sq = match dir {
            Some(d) => {
                let along = rel.dot(&d);
                (rel - d * along).norm_squared()
            }
            None => rel.norm_squared(),
        };
        sum_sq += perp_sq;
    }
    (sum_sq / window.len() as f64).sqrt()
}

/// Mean and sample standard deviation (n − 1 denominator; 0 when n < 2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: 0.0, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        };
        Self { mean, std, n }
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.n == 0 {
            write!(f, "—")
        } else {
            write!(f, "{:.2} ± {:.2}", self.mean, self.std)
        }
    }
}

/// Aggregate statistics for every trial run under one condition label.
#[derive(Debug, Clone)]
pub struct GroupStats {
    pub label: String,
    pub controller: ControllerKind,
    pub scenario_key: String,
    pub trials: usize,
    pub converged: usize,
    /// Time to converge, over converged trials only.
    pub duration_s: MeanStd,
    pub median_duration_s: Option<f64>,
    pub final_dd_mm: MeanStd,
    pub final_dtheta_deg: MeanStd,
    pub path_length_mm: MeanStd,
    pub max_lateral_rms_mm: MeanStd,
}

impl GroupStats {
    /// Stats for a lone condition, labelled after its records.
    pub fn solo(records: &[&TrialRecord]) -> Self {
        let label = records[0].condition.clone();
        Self::of(&label, records)
    }

    fn of(label: &str, records: &[&TrialRecord]) -> Self {
        let durations: Vec<f64> = records
            .iter()
            .filter_map(|r| r.summary.duration_s)
            .collect();
        Self {
            label: label.to_string(),
            controller: records[0].controller,
            scenario_key: records[0].scenario_key.clone(),
            trials: records.len(),
            converged: records.iter().filter(|r| r.summary.converged).count(),
            duration_s: MeanStd::of(&durations),
            median_duration_s: median(&durations),
            final_dd_mm: MeanStd::of(
                &records.iter().map(|r| r.summary.final_dd_mm).collect::<Vec<_>>(),
            ),
            final_dtheta_deg: MeanStd::of(
                &records.iter().map(|r| r.summary.final_dtheta_deg).collect::<Vec<_>>(),
            ),
            path_length_mm: MeanStd::of(
                &records.iter().map(|r| r.summary.path_length_mm).collect::<Vec<_>>(),
            ),
            max_lateral_rms_mm: MeanStd::of(
                &records.iter().map(|r| r.summary.max_lateral_rms_mm).collect::<Vec<_>>(),
            ),
        }
    }
}

fn median(sorted_input: &[f64]) -> Option<f64> {
    if sorted_input.is_empty() {
        return None;
    }
    let mut v = sorted_input.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}

/// A side-by-side report over conditions that share the same scenario
/// fingerprint (identical geometry, plant, and timing — only the controller
/// and its tuning differ).
#[derive(Debug, Clone)]
pub struct Comparison {
    pub groups: Vec<GroupStats>,
    /// Mean converged duration of each group relative to the first group.
    pub duration_vs_first: Vec<f64>,
}

/// Groups records by condition label and builds the comparison table.
///
/// Labels are ordered alphabetically, so name conditions so the baseline
/// sorts first if the ratio direction matters.
pub fn compare_conditions(records: &[TrialRecord]) -> Result<Comparison, MetricsError> {
    let mut by_label: BTreeMap<&str, Vec<&TrialRecord>> = BTreeMap::new();
    for rec in records {
        by_label.entry(&rec.condition).or_default().push(rec);
    }
    if by_label.len() < 2 {
        return Err(MetricsError::TooFewConditions(by_label.len()));
    }
    let groups: Vec<GroupStats> = by_label
        .iter()
        .map(|(label, recs)| GroupStats::of(label, recs))
        .collect();
    for pair in groups.windows(2) {
        if pair[0].scenario_key != pair[1].scenario_key {
            return Err(MetricsError::MismatchedConditions(
                pair[0].label.clone(),
                pair[1].label.clone(),
            ));
        }
    }
    let base = groups[0].duration_s.mean;
    let duration_vs_first = groups
        .iter()
        .map(|g| g.duration_s.mean / base)
        .collect();
    Ok(Comparison { groups, duration_vs_first })
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<24} {:>4} {:>6}  {:>16}  {:>14}  {:>14}  {:>16}",
            "condition", "n", "conv", "duration s", "final Δd mm", "final Δθ °", "path mm"
        )?;
        for g in &self.groups {
            writeln!(
                f,
                "{:<24} {:>4} {:>6}  {:>16}  {:>14}  {:>14}  {:>16}",
                g.label,
                g.trials,
                format!("{}/{}", g.converged, g.trials),
                g.duration_s.to_string(),
                g.final_dd_mm.to_string(),
                g.final_dtheta_deg.to_string(),
                g.path_length_mm.to_string(),
            )?;
        }
        for (g, ratio) in self.groups.iter().zip(&self.duration_vs_first).skip(1) {
            writeln!(
                f,
                "{} mean duration is {:.2}× {}",
                g.label, ratio, self.groups[0].label
            )?;
        }
        Ok(())
    }
}
