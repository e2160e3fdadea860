//! SVG plots summarising trial records: trajectory, error decay, and the
//! twist pipeline stages.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::trial::TrialRecord;

const SIZE: (u32, u32) = (900, 600);

#[derive(Debug, thiserror::Error)]
pub enum PlotError {
    #[error("no records to plot")]
    Empty,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("drawing failed: {0}")]
    Draw(String),
}

fn draw_err<E: std::error::Error>(e: E) -> PlotError {
    PlotError::Draw(e.to_string())
}

/// Inclusive data range padded by 5% so strokes never sit on the frame.
fn padded(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    let span = (hi - lo).max(1e-9);
    (lo - 0.05 * span, hi + 0.05 * span)
}

fn color(i: usize) -> RGBColor {
    const WHEEL: [RGBColor; 6] = [
        RGBColor(0x1f, 0x77, 0xb4),
        RGBColor(0xd6, 0x27, 0x28),
        RGBColor(0x2c, 0xa0, 0x2c),
        RGBColor(0x94, 0x67, 0xbd),
        RGBColor(0xff, 0x7f, 0x0e),
        RGBColor(0x8c, 0x56, 0x4b),
    ];
    WHEEL[i % WHEEL.len()]
}

fn safe_name(condition: &str) -> String {
    condition
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Renders three SVGs per condition into `out_dir` and returns the paths:
/// `<condition>_trajectory.svg`, `<condition>_errors.svg`, and
/// `<condition>_velocity.svg`.
pub fn emit_plots(records: &[TrialRecord], out_dir: &Path) -> Result<Vec<PathBuf>, PlotError> {
    if records.is_empty() {
        return Err(PlotError::Empty);
    }
    std::fs::create_dir_all(out_dir)?;

    let mut by_condition: BTreeMap<&str, Vec<&TrialRecord>> = BTreeMap::new();
    for rec in records {
        by_condition.entry(&rec.condition).or_default().push(rec);
    }

    let mut written = Vec::new();
    for (condition, recs) in &by_condition {
        let stem = safe_name(condition);
        let path = out_dir.join(format!("{stem}_trajectory.svg"));
        trajectory_plot(condition, recs, &path)?;
        written.push(path);

        let path = out_dir.join(format!("{stem}_errors.svg"));
        errors_plot(condition, recs, &path)?;
        written.push(path);

        let path = out_dir.join(format!("{stem}_velocity.svg"));
        velocity_plot(condition, recs[0], &path)?;
        written.push(path);
    }
    Ok(written)
}

/// Top-down (x, y) view of every trial's true tool path.
fn trajectory_plot(
    condition: &str,
    recs: &[&TrialRecord],
    path: &Path,
) -> Result<(), PlotError> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;

    let xs = recs.iter().flat_map(|r| r.rows.iter().map(|w| w.true_pos.x));
    let ys = recs.iter().flat_map(|r| r.rows.iter().map(|w| w.true_pos.y));
    let (x_lo, x_hi) = padded(xs);
    let (y_lo, y_hi) = padded(ys);

    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{condition}: tool path (top view)"), ("sans-serif", 24))
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x_lo..x_hi, y_lo..y_hi)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc("x, mm")
        .y_desc("y, mm")
        .draw()
        .map_err(draw_err)?;

    for (i, rec) in recs.iter().enumerate() {
        let series = rec.rows.iter().map(|w| (w.true_pos.x, w.true_pos.y));
        chart
            .draw_series(LineSeries::new(series, color(i).stroke_width(2)))
            .map_err(draw_err)?
            .label(format!("seed {}", rec.seed))
            .legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 16, y)], color(i).stroke_width(2))
            });
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.85))
        .draw()
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(())
}

/// Translation and rotation error versus time, stacked.
fn errors_plot(condition: &str, recs: &[&TrialRecord], path: &Path) -> Result<(), PlotError> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let (top, bottom) = root.split_vertically(SIZE.1 / 2);

    let t_range = padded(recs.iter().flat_map(|r| r.rows.iter().map(|w| w.t)));

    let (dd_lo, dd_hi) = padded(recs.iter().flat_map(|r| r.rows.iter().map(|w| w.dd_mm)));
    let mut chart = ChartBuilder::on(&top)
        .caption(format!("{condition}: alignment error"), ("sans-serif", 24))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(60)
        .build_cartesian_2d(t_range.0..t_range.1, dd_lo.min(0.0)..dd_hi)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc("t, s")
        .y_desc("Δd, mm")
        .draw()
        .map_err(draw_err)?;
    for (i, rec) in recs.iter().enumerate() {
        chart
            .draw_series(LineSeries::new(
                rec.rows.iter().map(|w| (w.t, w.dd_mm)),
                color(i).stroke_width(2),
            ))
            .map_err(draw_err)?;
    }

    let (th_lo, th_hi) = padded(
        recs.iter()
            .flat_map(|r| r.rows.iter().map(|w| w.dtheta_rad.to_degrees())),
    );
    let mut chart = ChartBuilder::on(&bottom)
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(t_range.0..t_range.1, th_lo.min(0.0)..th_hi)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc("t, s")
        .y_desc("Δθ, deg")
        .draw()
        .map_err(draw_err)?;
    for (i, rec) in recs.iter().enumerate() {
        chart
            .draw_series(LineSeries::new(
                rec.rows.iter().map(|w| (w.t, w.dtheta_rad.to_degrees())),
                color(i).stroke_width(2),
            ))
            .map_err(draw_err)?;
    }
    root.present().map_err(draw_err)?;
    Ok(())
}

/// Twist pipeline magnitudes for one trial: raw error velocity, after the
/// adaptive clamp, and after smoothing.
fn velocity_plot(condition: &str, rec: &TrialRecord, path: &Path) -> Result<(), PlotError> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;

    type Magnitude = fn(&crate::trial::LogRow) -> f64;
    let t_range = padded(rec.rows.iter().map(|w| w.t));
    let stages: [(&str, Magnitude); 3] = [
        ("raw", |w| w.vraw.norm()),
        ("clamped", |w| w.vc.norm()),
        ("smoothed", |w| w.vs.norm()),
    ];
    let (_, v_hi) = padded(
        rec.rows
            .iter()
            .flat_map(|w| [w.vraw.norm(), w.vc.norm(), w.vs.norm()]),
    );

    let mut chart = ChartBuilder::on(&root)
        .caption(
            format!("{condition}: linear speed through the pipeline (seed {})", rec.seed),
            ("sans-serif", 24),
        )
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(t_range.0..t_range.1, 0.0..v_hi)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc("t, s")
        .y_desc("‖v‖, mm/s")
        .draw()
        .map_err(draw_err)?;

    for (i, (label, f)) in stages.iter().enumerate() {
        chart
            .draw_series(LineSeries::new(
                rec.rows.iter().map(|w| (w.t, f(w))),
                color(i).stroke_width(2),
            ))
            .map_err(draw_err)?
            .label(*label)
            .legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 16, y)], color(i).stroke_width(2))
            });
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.85))
        .draw()
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Scenario;
    use crate::trial::run_trial;

    fn quick_record(name: &str, seed: u64) -> TrialRecord {
        let text = format!(
            r#"
            name = "{name}"
            controller = "v2"
            max_sim_time_s = 5.0
            [initial_pose]
            position_mm = [571.0, -59.0, 221.0]
            [target_pose]
            position_mm = [871.0, -459.0, 221.0]
            "#
        );
        let scenario = Scenario::from_toml_str(&text).unwrap();
        run_trial(&scenario, seed).unwrap()
    }

    #[test]
    fn emits_three_svgs_per_condition() {
        let records = vec![
            quick_record("cond_a", 1),
            quick_record("cond_a", 2),
            quick_record("cond_b", 1),
        ];
        let dir = tempfile::tempdir().unwrap();
        let written = emit_plots(&records, dir.path()).unwrap();
        assert_eq!(written.len(), 6);
        for path in &written {
            let text = std::fs::read_to_string(path).unwrap();
            assert!(text.starts_with("<svg") || text.starts_with("<?xml"), "{path:?}");
            assert!(text.contains("<polyline"), "no line series in {path:?}");
        }
        let names: Vec<String> = written
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert!(names.contains(&"cond_a_trajectory.svg".to_string()));
        assert!(names.contains(&"cond_b_errors.svg".to_string()));
        assert!(names.contains(&"cond_b_velocity.svg".to_string()));
    }

    #[test]
    fn empty_input_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(emit_plots(&[], dir.path()), Err(PlotError::Empty)));
    }

    #[test]
    fn hostile_condition_names_stay_inside_the_output_dir() {
        let mut rec = quick_record("x", 1);
        rec.condition = "../escape me".to_string();
        let dir = tempfile::tempdir().unwrap();
        let written = emit_plots(&[rec], dir.path()).unwrap();
        for path in &written {
            assert!(path.starts_with(dir.path()));
            assert_eq!(path.parent().unwrap(), dir.path());
        }
    }
}
