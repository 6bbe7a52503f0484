//! Subcommand bodies. Runs execute in parallel; outputs are assembled in
//! memory and written by one thread, together with the manifest.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use reflect_core::capacity::sandwich_report;
use reflect_core::diagnostics::sweep_report;
use reflect_core::ensemble::{monte_carlo, EnsembleSummary};
use reflect_core::export::{write_ledger_csv, write_norms_csv, write_trajectory_csv};
use reflect_core::noise::NoisePath;
use reflect_core::solver::{solve_trajectory, SolverConfig, TrajectoryRecord};

use crate::config::ExperimentConfig;
use crate::manifest::RunManifest;
use crate::validate::validate;
use crate::{LabError, EXIT_OK, EXIT_VALIDATION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Subcommand {
    Single,
    Sweep,
    Ensemble,
    Capacity,
    Validate,
}

impl Subcommand {
    pub fn name(&self) -> &'static str {
        match self {
            Subcommand::Single => "single",
            Subcommand::Sweep => "sweep",
            Subcommand::Ensemble => "ensemble",
            Subcommand::Capacity => "capacity",
            Subcommand::Validate => "validate",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub manifest: RunManifest,
    pub exit_code: i32,
}

pub const ENSEMBLE_COLUMNS: [&str; 14] = [
    "n",
    "paths",
    "failures",
    "k1_mean",
    "k1_se",
    "k2_mean",
    "k2_se",
    "k3_mean",
    "k3_se",
    "k4_mean",
    "k4_se",
    "neg_l2_mean",
    "neg_l2_se",
    "base_seed",
];

type Files = Vec<(&'static str, Vec<u8>)>;

fn core(context: &str) -> impl Fn(reflect_core::Error) -> LabError + '_ {
    move |e| LabError::runtime(context, e)
}

fn csv_bytes(
    write: impl FnOnce(&mut Vec<u8>) -> reflect_core::Result<()>,
    what: &str,
) -> Result<Vec<u8>, LabError> {
    let mut buf = Vec::new();
    write(&mut buf).map_err(core(what))?;
    Ok(buf)
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Vec<u8> {
    w.into_inner().expect("in-memory flush")
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn sweep_strengths(cfg: &ExperimentConfig) -> Vec<f64> {
    let mut n = cfg.sweep.n.clone();
    n.sort_by(f64::total_cmp);
    n.dedup();
    n
}

fn solve(cfg: &SolverConfig, seed: u64) -> reflect_core::Result<TrajectoryRecord> {
    solve_trajectory(cfg, &NoisePath::new(seed, cfg.grid.nt(), cfg.noise.modes()))
}

fn single(cfg: &ExperimentConfig, m: &mut RunManifest) -> Result<Files, LabError> {
    let solver = cfg
        .solver_config(cfg.model.strength)
        .map_err(core("solver configuration"))?;
    let rec = solve(&solver, cfg.noise.seed).map_err(core("trajectory"))?;
    m.record_run(
        format!("n={}", cfg.model.strength),
        rec.seed,
        rec.wall_time_secs,
    );
    Ok(vec![
        (
            "trajectory.csv",
            csv_bytes(|b| write_trajectory_csv(&rec, b), "trajectory.csv")?,
        ),
        (
            "ledger.csv",
            csv_bytes(|b| write_ledger_csv(&rec, b), "ledger.csv")?,
        ),
        (
            "norms.csv",
            csv_bytes(|b| write_norms_csv(&rec, b), "norms.csv")?,
        ),
    ])
}

fn sweep(cfg: &ExperimentConfig, m: &mut RunManifest) -> Result<Files, LabError> {
    let base = cfg
        .solver_config(cfg.model.strength)
        .map_err(core("solver configuration"))?;
    let ns = sweep_strengths(cfg);
    let records = ns
        .par_iter()
        .map(|&n| {
            solve(&base.with_strength(n), cfg.noise.seed).map_err(core(&format!("sweep run n={n}")))
        })
        .collect::<Result<Vec<_>, LabError>>()?;
    for r in &records {
        m.record_run(format!("n={}", r.strength), r.seed, r.wall_time_secs);
    }
    let report = sweep_report(&records, cfg.sweep.truncation).map_err(core("sweep report"))?;
    let table = csv_bytes(|b| report.write_csv(b), "sweep_report.csv")?;

    // Plot data: ‖u_n-(t)‖ per level, one column per n.
    let mut w = csv_writer();
    let mut header = vec!["level".to_string(), "t".to_string()];
    header.extend(ns.iter().map(|n| format!("neg_l2_n={n}")));
    w.write_record(&header).expect("in-memory write");
    let grid = *records[0].grid();
    for j in 0..records[0].norms.len() {
        let mut row = vec![j.to_string(), num(grid.time(j))];
        row.extend(records.iter().map(|r| num(r.norms[j].neg_l2)));
        w.write_record(&row).expect("in-memory write");
    }
    Ok(vec![
        ("sweep_report.csv", table),
        ("negativity_by_level.csv", finish_csv(w)),
    ])
}

fn ensemble(cfg: &ExperimentConfig, m: &mut RunManifest) -> Result<Files, LabError> {
    let base = cfg
        .solver_config(cfg.model.strength)
        .map_err(core("solver configuration"))?;
    let seed = cfg.ensemble.base_seed;
    let ns = sweep_strengths(cfg);
    let summaries = ns
        .par_iter()
        .map(|&n| {
            let start = Instant::now();
            let s = monte_carlo(&base.with_strength(n), cfg.ensemble.num_paths, seed)
                .map_err(core(&format!("ensemble n={n}")))?;
            Ok((s, start.elapsed().as_secs_f64()))
        })
        .collect::<Result<Vec<(EnsembleSummary, f64)>, LabError>>()?;

    let mut w = csv_writer();
    w.write_record(ENSEMBLE_COLUMNS).expect("in-memory write");
    for (n, (s, secs)) in ns.iter().zip(&summaries) {
        m.record_run(format!("ensemble n={n}"), seed, *secs);
        let mut row = vec![
            num(*n),
            s.healthy_paths().to_string(),
            s.failures.len().to_string(),
        ];
        for stat in [&s.k1, &s.k2, &s.k3, &s.k4, &s.neg_l2] {
            row.push(num(stat.mean));
            row.push(num(stat.std_error()));
        }
        row.push(seed.to_string());
        w.write_record(&row).expect("in-memory write");
    }
    let failures: Vec<_> = summaries
        .iter()
        .flat_map(|(s, _)| s.failures.iter())
        .collect();
    let mut files = vec![("ensemble_summary.csv", finish_csv(w))];
    if !failures.is_empty() {
        files.push((
            "ensemble_failures.json",
            serde_json::to_vec_pretty(&failures).expect("failures serialize"),
        ));
    }
    Ok(files)
}

fn capacity(cfg: &ExperimentConfig, m: &mut RunManifest) -> Result<Files, LabError> {
    let prob = cfg.capacity_problem().map_err(core("capacity problem"))?;
    let start = Instant::now();
    let report = sandwich_report(&prob).map_err(core("capacity estimate"))?;
    m.record_run("capacity sandwich", 0, start.elapsed().as_secs_f64());
    Ok(vec![(
        "capacity.json",
        serde_json::to_vec_pretty(&report).expect("report serializes"),
    )])
}

/// Runs `cmd` and writes its outputs and manifest under `out`. The manifest is
/// written even when the run fails, marked incomplete.
pub fn execute(cmd: Subcommand, cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, LabError> {
    std::fs::create_dir_all(out).map_err(|e| LabError::io(out, e))?;
    let mut manifest = RunManifest::start(cfg, cmd.name());
    let mut exit_code = EXIT_OK;
    let body = match cmd {
        Subcommand::Single => single(cfg, &mut manifest),
        Subcommand::Sweep => sweep(cfg, &mut manifest),
        Subcommand::Ensemble => ensemble(cfg, &mut manifest),
        Subcommand::Capacity => capacity(cfg, &mut manifest),
        Subcommand::Validate => {
            let start = Instant::now();
            let report = validate(cfg);
            manifest.record_run("validate", cfg.noise.seed, start.elapsed().as_secs_f64());
            if !report.passed() {
                exit_code = EXIT_VALIDATION;
            }
            Ok(vec![("validate_report.csv", report.to_csv())])
        }
    };
    let written = body.and_then(|files| {
        for (name, bytes) in files {
            manifest.write_output(out, name, &bytes)?;
        }
        Ok(())
    });
    match written {
        Ok(()) => {
            manifest.finish(None);
            manifest.save(out)?;
            Ok(Outcome {
                manifest,
                exit_code,
            })
        }
        Err(e) => {
            manifest.finish(Some(e.to_string()));
            manifest.save(out)?;
            Err(e)
        }
    }
}
