//! `align` — run and benchmark the alignment controllers against the
//! simulated plant.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use align_cli::logio;
use align_cli::metrics::{self, GroupStats};
use align_cli::plots;
use align_cli::scenario::Scenario;
use align_cli::trial::{self, TrialRecord};

#[derive(Parser)]
#[command(name = "align", version, about = "end-effector alignment trials on a simulated arm")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one trial of a scenario and write its CSV log.
    Run {
        /// Scenario TOML file.
        scenario: PathBuf,
        /// Override the scenario's seed list with a single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for CSV logs.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Exit nonzero if the trial does not converge.
        #[arg(long)]
        strict: bool,
    },
    /// Run every scenario in a directory over its seed list and print a
    /// mean ± s.d. comparison report.
    Bench {
        /// Directory containing scenario TOML files.
        dir: PathBuf,
        /// Override every scenario's seed list with seeds 1..=K.
        #[arg(long, value_name = "K")]
        seeds: Option<u64>,
        /// Output directory for CSV logs and the report.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Render SVG plots from previously written CSV logs.
    Plot {
        /// CSV log files (named like `<condition>_seed<N>.csv`).
        #[arg(required = true)]
        records: Vec<PathBuf>,
        /// Output directory for SVG files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and validate a scenario file, printing what it resolves to.
    Validate {
        /// Scenario TOML file.
        scenario: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Run { scenario, seed, out, strict } => run(&scenario, seed, &out, strict),
        Cmd::Bench { dir, seeds, out } => bench(&dir, seeds, &out),
        Cmd::Plot { records, out } => plot(&records, &out),
        Cmd::Validate { scenario } => validate(&scenario),
    }
}

fn csv_path(out: &Path, condition: &str, seed: u64) -> PathBuf {
    out.join(format!("{condition}_seed{seed}.csv"))
}

fn run(path: &Path, seed: Option<u64>, out: &Path, strict: bool) -> Result<()> {
    let scenario = Scenario::load(path)?;
    let seed = seed.unwrap_or(scenario.seeds[0]);
    let rec = trial::run_trial(&scenario, seed)?;

    std::fs::create_dir_all(out)
        .with_context(|| format!("creating output directory {}", out.display()))?;
    let csv = csv_path(out, &rec.condition, seed);
    logio::write_csv(&csv, &rec.rows)?;

    let s = &rec.summary;
    println!(
        "{} seed {}: {} in {} (final Δd {:.2} mm, Δθ {:.3}°, path {:.0} mm, {} rows) → {}",
        rec.condition,
        seed,
        if s.converged { "converged" } else { "did NOT converge" },
        s.duration_s.map_or("—".into(), |d| format!("{d:.2} s")),
        s.final_dd_mm,
        s.final_dtheta_deg,
        s.path_length_mm,
        s.rows,
        csv.display(),
    );
    if strict && !s.converged {
        bail!("strict mode: {} seed {} did not converge", rec.condition, seed);
    }
    Ok(())
}

fn bench(dir: &Path, seeds: Option<u64>, out: &Path) -> Result<()> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading scenario directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no scenario files (*.toml) in {}", dir.display());
    }

    std::fs::create_dir_all(out)?;
    let mut records: Vec<TrialRecord> = Vec::new();
    for path in &paths {
        let scenario = Scenario::load(path)?;
        let seed_list: Vec<u64> = match seeds {
            Some(k) => (1..=k).collect(),
            None => scenario.seeds.clone(),
        };
        for seed in seed_list {
            let rec = trial::run_trial(&scenario, seed)?;
            logio::write_csv(&csv_path(out, &rec.condition, seed), &rec.rows)?;
            records.push(rec);
        }
    }

    let report = bench_report(&records)?;
    print!("{report}");
    std::fs::write(out.join("report.txt"), &report)?;
    println!("report written to {}", out.join("report.txt").display());
    Ok(())
}

/// Builds the report: conditions sharing a scenario fingerprint are compared
/// head-to-head; lone conditions get their stats without ratios.
fn bench_report(records: &[TrialRecord]) -> Result<String> {
    let mut by_key: BTreeMap<&str, Vec<TrialRecord>> = BTreeMap::new();
    for rec in records {
        by_key.entry(&rec.scenario_key).or_default().push(rec.clone());
    }

    let mut report = String::new();
    for group in by_key.values() {
        let labels: std::collections::BTreeSet<&str> =
            group.iter().map(|r| r.condition.as_str()).collect();
        if labels.len() >= 2 {
            write!(report, "{}", metrics::compare_conditions(group)?)?;
        } else {
            let refs: Vec<&TrialRecord> = group.iter().collect();
            let g = GroupStats::solo(&refs);
            writeln!(
                report,
                "{}: {}/{} converged, duration {} s, final Δd {} mm",
                g.label, g.converged, g.trials, g.duration_s, g.final_dd_mm
            )?;
        }
        writeln!(report)?;
    }
    Ok(report)
}

fn plot(csvs: &[PathBuf], out: &Path) -> Result<()> {
    let mut records = Vec::new();
    for path in csvs {
        let rows = logio::read_csv(path)
            .with_context(|| format!("reading {}", path.display()))?;
        if rows.is_empty() {
            bail!("{} contains no rows", path.display());
        }
        records.push(trial::record_from_rows(
            &condition_from_stem(path),
            seed_from_stem(path),
            rows,
        ));
    }
    let written = plots::emit_plots(&records, out)?;
    for path in &written {
        println!("{}", path.display());
    }
    Ok(())
}

/// `v2_moderate_seed7.csv` → condition `v2_moderate`.
fn condition_from_stem(path: &Path) -> String {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    match stem.rfind("_seed") {
        Some(i) if stem[i + 5..].chars().all(|c| c.is_ascii_digit()) && i + 5 < stem.len() => {
            stem[..i].to_string()
        }
        _ => stem.into_owned(),
    }
}

/// `v2_moderate_seed7.csv` → 7 (0 when the stem has no seed suffix).
fn seed_from_stem(path: &Path) -> u64 {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    stem.rfind("_seed")
        .and_then(|i| stem[i + 5..].parse().ok())
        .unwrap_or(0)
}

fn validate(path: &Path) -> Result<()> {
    let scenario = Scenario::load(path)?;
    println!(
        "{}: ok ({} controller, {} seed{}, target offset {:.0} mm, max {:.0} s, log {:.0} Hz)",
        scenario.name,
        scenario.controller,
        scenario.seeds.len(),
        if scenario.seeds.len() == 1 { "" } else { "s" },
        (scenario.effective_target().position - scenario.initial_pose.position).norm(),
        scenario.max_sim_time_s,
        scenario.log_rate_hz,
    );
    Ok(())
}
