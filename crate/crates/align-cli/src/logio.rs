//! CSV serialization for trial logs.
//!
//! Numbers are written with Rust's shortest-round-trip float formatting, so
//! a written file parses back to bit-identical values and re-running the
//! same seed yields a byte-identical file.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use align_core::Pose;
use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::trial::LogRow;

/// Column order of the log schema. One row per log tick.
pub const CSV_COLUMNS: [&str; 39] = [
    "t", "ee_x", "ee_y", "ee_z", "ee_qw", "ee_qx", "ee_qy", "ee_qz", "true_x", "true_y",
    "true_z", "dd_mm", "dtheta_rad", "base_t", "base_r", "eff_t", "eff_r", "f_j", "f_k", "f_s",
    "vraw_x", "vraw_y", "vraw_z", "wraw_x", "wraw_y", "wraw_z", "vc_x", "vc_y", "vc_z", "wc_x",
    "wc_y", "wc_z", "vs_x", "vs_y", "vs_z", "ws_x", "ws_y", "ws_z", "hold",
];

#[derive(Debug, thiserror::Error)]
pub enum LogIoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("unexpected header: expected the {expected}-column log schema, got {got} columns")]
    HeaderShape { expected: usize, got: usize },
    #[error("unexpected column {index}: expected {expected:?}, got {got:?}")]
    HeaderName {
        index: usize,
        expected: &'static str,
        got: String,
    },
    #[error("row {row}, column {column:?}: {message}")]
    BadField {
        row: usize,
        column: &'static str,
        message: String,
    },
}

fn fields(row: &LogRow) -> [String; CSV_COLUMNS.len()] {
    let f = |v: f64| v.to_string();
    let q = row.ee_pose.orientation.quaternion();
    [
        f(row.t),
        f(row.ee_pose.position.x),
        f(row.ee_pose.position.y),
        f(row.ee_pose.position.z),
        f(q.w),
        f(q.i),
        f(q.j),
        f(q.k),
        f(row.true_pos.x),
        f(row.true_pos.y),
        f(row.true_pos.z),
        f(row.dd_mm),
        f(row.dtheta_rad),
        f(row.base_t),
        f(row.base_r),
        f(row.eff_t),
        f(row.eff_r),
        f(row.f_j),
        f(row.f_k),
        f(row.f_s),
        f(row.vraw.x),
        f(row.vraw.y),
        f(row.vraw.z),
        f(row.wraw.x),
        f(row.wraw.y),
        f(row.wraw.z),
        f(row.vc.x),
        f(row.vc.y),
        f(row.vc.z),
        f(row.wc.x),
        f(row.wc.y),
        f(row.wc.z),
        f(row.vs.x),
        f(row.vs.y),
        f(row.vs.z),
        f(row.ws.x),
        f(row.ws.y),
        f(row.ws.z),
        if row.hold { "1".into() } else { "0".into() },
    ]
}

/// Writes `rows` to `path` as CSV with the schema header.
pub fn write_csv(path: &Path, rows: &[LogRow]) -> Result<(), LogIoError> {
    let file = BufWriter::new(File::create(path)?);
    let mut wtr = csv::Writer::from_writer(file);
    wtr.write_record(CSV_COLUMNS)?;
    for row in rows {
        wtr.write_record(fields(row))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a log CSV back, validating the header column-by-column.
pub fn read_csv(path: &Path) -> Result<Vec<LogRow>, LogIoError> {
    let file = BufReader::new(File::open(path)?);
    let mut rdr = csv::Reader::from_reader(file);

    let header = rdr.headers()?.clone();
    if header.len() != CSV_COLUMNS.len() {
        return Err(LogIoError::HeaderShape {
            expected: CSV_COLUMNS.len(),
            got: header.len(),
        });
    }
    for (index, (got, expected)) in header.iter().zip(CSV_COLUMNS).enumerate() {
        if got != expected {
            return Err(LogIoError::HeaderName {
                index,
                expected,
                got: got.to_string(),
            });
        }
    }

    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let field = |column: &'static str| -> &str {
            let idx = CSV_COLUMNS.iter().position(|c| *c == column).unwrap();
            record.get(idx).unwrap_or("")
        };
        let num = |column: &'static str| -> Result<f64, LogIoError> {
            field(column).parse().map_err(|e| LogIoError::BadField {
                row: i + 2, // 1-based, counting the header line
                column,
                message: format!("{e}"),
            })
        };
        let vec3 = |x: &'static str, y: &'static str, z: &'static str| -> Result<Vector3<f64>, LogIoError> {
            Ok(Vector3::new(num(x)?, num(y)?, num(z)?))
        };
        // Wrapped unchecked: renormalizing would perturb bits that round-trip
        // exactly through the shortest-float text form. The norm check still
        // rejects hand-edited garbage.
        let raw_q = Quaternion::new(num("ee_qw")?, num("ee_qx")?, num("ee_qy")?, num("ee_qz")?);
        if (raw_q.norm() - 1.0).abs() > 1e-6 {
            return Err(LogIoError::BadField {
                row: i + 2,
                column: "ee_qw",
                message: format!("orientation is not a unit quaternion (norm {})", raw_q.norm()),
            });
        }
        let quat = UnitQuaternion::new_unchecked(raw_q);
        let hold = match field("hold") {
            "1" => true,
            "0" => false,
            other => {
                return Err(LogIoError::BadField {
                    row: i + 2,
                    column: "hold",
                    message: format!("expected 0 or 1, got {other:?}"),
                })
            }
        };
        rows.push(LogRow {
            t: num("t")?,
            ee_pose: Pose::new(vec3("ee_x", "ee_y", "ee_z")?, quat),
            true_pos: vec3("true_x", "true_y", "true_z")?,
            dd_mm: num("dd_mm")?,
            dtheta_rad: num("dtheta_rad")?,
            base_t: num("base_t")?,
            base_r: num("base_r")?,
            eff_t: num("eff_t")?,
            eff_r: num("eff_r")?,
            f_j: num("f_j")?,
            f_k: num("f_k")?,
            f_s: num("f_s")?,
            vraw: vec3("vraw_x", "vraw_y", "vraw_z")?,
            wraw: vec3("wraw_x", "wraw_y", "wraw_z")?,
            vc: vec3("vc_x", "vc_y", "vc_z")?,
            wc: vec3("wc_x", "wc_y", "wc_z")?,
            vs: vec3("vs_x", "vs_y", "vs_z")?,
            ws: vec3("ws_x", "ws_y", "ws_z")?,
            hold,
        });
    }
    Ok(rows)
}
