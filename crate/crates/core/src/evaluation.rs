//! End-to-end experiment harness and report emission.
//!
//! One repetition = generate datasets for a seed, train, infer the
//! topography, evaluate the held-out test error with the inferred H, and
//! compute reconstruction errors. Reports aggregate mean and population
//! standard deviation over repetitions.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;

use crate::finn::FinnParams;
use crate::format::{self, FormatError};
use crate::grid::SimConfig;
use crate::inversion::{self, InverseConfig, InverseError, RecMode};
use crate::scenario::{self, ScenarioError, Role};
use crate::topography::ArctanParams;
use crate::training::{self, HSource, TrainConfig, TrainError};

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub label: String,
    pub train_count: usize,
    pub infer_count: usize,
    pub test_count: usize,
    pub sim: SimConfig,
    pub sigma_m: f64,
    pub arctan: ArctanParams,
    pub train: TrainConfig,
    pub inverse: InverseConfig,
    pub eval_batch: usize,
    /// Run repetitions concurrently instead of sequentially.
    pub concurrent_seeds: bool,
}

impl ExperimentConfig {
    /// Full-scale defaults: 32x32 grid, 512 train / 256 infer sequences.
    pub fn full_scale() -> Self {
        ExperimentConfig {
            label: "FINN".into(),
            train_count: scenario::DEFAULT_TRAIN_COUNT,
            infer_count: scenario::DEFAULT_INFER_COUNT,
            test_count: scenario::DEFAULT_INFER_COUNT,
            sim: SimConfig::default_32(),
            sigma_m: scenario::DEFAULT_SIGMA_M,
            arctan: ArctanParams::default(),
            train: TrainConfig::default(),
            inverse: InverseConfig::default(),
            eval_batch: 8,
            concurrent_seeds: false,
        }
    }
}

#[derive(Debug)]
pub enum EvalError {
    Scenario(ScenarioError),
    Train(TrainError),
    Inverse(InverseError),
    Format(FormatError),
    Io(std::io::Error),
    NoRepetitions,
    Csv { line: usize, detail: String },
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::Scenario(e) => write!(f, "{e}"),
            EvalError::Train(e) => write!(f, "{e}"),
            EvalError::Inverse(e) => write!(f, "{e}"),
            EvalError::Format(e) => write!(f, "{e}"),
            EvalError::Io(e) => write!(f, "io error: {e}"),
            EvalError::NoRepetitions => {
                write!(f, "report has zero completed repetitions; nothing to emit")
            }
            EvalError::Csv { line, detail } => write!(f, "csv line {line}: {detail}"),
        }
    }
}

impl std::error::Error for EvalError {}

impl From<ScenarioError> for EvalError {
    fn from(e: ScenarioError) -> Self {
        EvalError::Scenario(e)
    }
}

impl From<TrainError> for EvalError {
    fn from(e: TrainError) -> Self {
        EvalError::Train(e)
    }
}

impl From<InverseError> for EvalError {
    fn from(e: InverseError) -> Self {
        EvalError::Inverse(e)
    }
}

impl From<FormatError> for EvalError {
    fn from(e: FormatError) -> Self {
        EvalError::Format(e)
    }
}

impl From<std::io::Error> for EvalError {
    fn from(e: std::io::Error) -> Self {
        EvalError::Io(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedMetrics {
    pub seed: u64,
    pub params_count: usize,
    pub train_error: f64,
    pub infer_error: f64,
    pub test_error: f64,
    pub full_rmse_m: f64,
    pub inner_rmse_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    /// Population standard deviation (0 and flagged for one repetition).
    pub std: f64,
}

fn summarize(values: &[f64]) -> MetricSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MetricSummary {
        mean,
        std: var.sqrt(),
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub label: String,
    pub repetitions: usize,
    pub seeds: Vec<u64>,
    pub params_count: MetricSummary,
    pub train_error: MetricSummary,
    pub infer_error: MetricSummary,
    pub test_error: MetricSummary,
    pub full_rmse_m: MetricSummary,
    pub inner_rmse_m: MetricSummary,
    /// Per-seed failures; the report covers the seeds that completed.
    pub failures: Vec<(u64, String)>,
    pub per_seed: Vec<SeedMetrics>,
}

impl RunReport {
    /// True when the standard deviations are meaningless (one repetition).
    pub fn single_repetition(&self) -> bool {
        self.repetitions == 1
    }
}

/// One full train-infer-evaluate repetition under `workdir`.
pub fn run_seed(
    seed: u64,
    cfg: &ExperimentConfig,
    workdir: &Path,
) -> Result<SeedMetrics, EvalError> {
    let train_dir = workdir.join("train");
    let infer_dir = workdir.join("infer");
    let test_dir = workdir.join("test");

    let train_manifest = scenario::generate_dataset(
        Role::Train,
        cfg.train_count,
        seed,
        &cfg.sim,
        cfg.sigma_m,
        &cfg.arctan,
        &train_dir,
    )?;
    let infer_manifest = scenario::generate_dataset(
        Role::Infer,
        cfg.infer_count,
        seed,
        &cfg.sim,
        cfg.sigma_m,
        &cfg.arctan,
        &infer_dir,
    )?;
    let test_manifest = scenario::generate_dataset(
        Role::Test,
        cfg.test_count,
        seed,
        &cfg.sim,
        cfg.sigma_m,
        &cfg.arctan,
        &test_dir,
    )?;

    let mut tc = cfg.train;
    tc.seed = seed;
    let ckpt = workdir.join("best.fnn");
    let outcome = training::train(&train_manifest, &tc, None, Some(&ckpt))?;
    let params: FinnParams = outcome.best_params;

    let mut icfg = cfg.inverse.clone();
    icfg.seed = seed;
    let inv = inversion::infer_topography(&infer_manifest, &params, &icfg)?;
    format::write_checkpoint(&workdir.join("inferred.fnn"), &params, Some(&inv.h_best))?;

    let test_error = training::evaluate(
        &test_manifest,
        &params,
        HSource::Provided(&inv.h_best),
        cfg.eval_batch,
        None,
    )?;

    let h_true = format::read_sequence(&infer_manifest.sequence_path(0))?.h;
    let full_rmse_m = inversion::reconstruction_error(&inv.h_best, &h_true, RecMode::Full)?;
    let inner_rmse_m = inversion::reconstruction_error(&inv.h_best, &h_true, RecMode::Inner)?;

    Ok(SeedMetrics {
        seed,
        params_count: params.param_count(),
        train_error: outcome.best_loss,
        infer_error: inv.best_data_term,
        test_error,
        full_rmse_m,
        inner_rmse_m,
    })
}

/// Runs every seed (one repetition each) and aggregates the survivors.
pub fn run_experiment(
    seeds: &[u64],
    cfg: &ExperimentConfig,
    workdir: &Path,
) -> Result<RunReport, EvalError> {
    std::fs::create_dir_all(workdir)?;
    let run_one = |(rep, seed): (usize, u64)| -> (u64, Result<SeedMetrics, EvalError>) {
        let dir = workdir.join(format!("rep{rep:02}_seed{seed}"));
        (seed, run_seed(seed, cfg, &dir))
    };
    let indexed: Vec<(usize, u64)> = seeds.iter().copied().enumerate().collect();
    let results: Vec<(u64, Result<SeedMetrics, EvalError>)> = if cfg.concurrent_seeds {
        indexed.into_par_iter().map(run_one).collect()
    } else {
        indexed.into_iter().map(run_one).collect()
    };

    let mut per_seed = Vec::new();
    let mut failures = Vec::new();
    for (seed, result) in results {
        match result {
            Ok(m) => per_seed.push(m),
            Err(e) => failures.push((seed, e.to_string())),
        }
    }

    let collect = |f: fn(&SeedMetrics) -> f64| -> Vec<f64> { per_seed.iter().map(f).collect() };
    Ok(RunReport {
        label: cfg.label.clone(),
        repetitions: per_seed.len(),
        seeds: per_seed.iter().map(|m| m.seed).collect(),
        params_count: summarize(&collect(|m| m.params_count as f64)),
        train_error: summarize(&collect(|m| m.train_error)),
        infer_error: summarize(&collect(|m| m.infer_error)),
        test_error: summarize(&collect(|m| m.test_error)),
        full_rmse_m: summarize(&collect(|m| m.full_rmse_m)),
        inner_rmse_m: summarize(&collect(|m| m.inner_rmse_m)),
        failures,
        per_seed,
    })
}

fn rows(report: &RunReport) -> [(&'static str, MetricSummary, &'static str); 6] {
    [
        ("params", report.params_count, "count"),
        ("train_error", report.train_error, "mse"),
        ("infer_error", report.infer_error, "mse"),
        ("test_error", report.test_error, "mse"),
        ("full_rec_error", report.full_rmse_m, "m"),
        ("inner_rec_error", report.inner_rmse_m, "m"),
    ]
}

/// Fixed-width table, one metric per row in the published comparison order.
pub fn emit_text(report: &RunReport) -> Result<String, EvalError> {
    if report.repetitions == 0 {
        return Err(EvalError::NoRepetitions);
    }
    let mut out = String::new();
    out.push_str(&format!(
        "model = {}  repetitions = {}  seeds = {:?}\n",
        report.label, report.repetitions, report.seeds
    ));
    if report.single_repetition() {
        out.push_str("note: single repetition, standard deviations are not meaningful\n");
    }
    for (seed, error) in &report.failures {
        out.push_str(&format!("failed seed {seed}: {error}\n"));
    }
    out.push_str(&format!(
        "{:<18} {:>14} {:>14} {:>8}\n",
        "metric", "mean", "std", "unit"
    ));
    for (name, summary, unit) in rows(report) {
        out.push_str(&format!(
            "{:<18} {:>14.6e} {:>14.6e} {:>8}\n",
            name, summary.mean, summary.std, unit
        ));
    }
    Ok(out)
}

/// CSV with columns metric, mean, std, unit; floats as shortest round-trip
/// decimals.
pub fn emit_csv(report: &RunReport) -> Result<String, EvalError> {
    if report.repetitions == 0 {
        return Err(EvalError::NoRepetitions);
    }
    let mut out = String::from("metric,mean,std,unit\n");
    for (name, summary, unit) in rows(report) {
        out.push_str(&format!("{},{},{},{}\n", name, summary.mean, summary.std, unit));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub unit: String,
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>, EvalError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "metric,mean,std,unit")) => {}
        other => {
            return Err(EvalError::Csv {
                line: 1,
                detail: format!("bad header: {:?}", other.map(|(_, l)| l)),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(EvalError::Csv {
                line: i + 1,
                detail: format!("expected 4 fields, got {}", parts.len()),
            });
        }
        let parse = |s: &str| -> Result<f64, EvalError> {
            s.parse().map_err(|_| EvalError::Csv {
                line: i + 1,
                detail: format!("bad float {s:?}"),
            })
        };
        out.push(CsvRow {
            metric: parts[0].to_string(),
            mean: parse(parts[1])?,
            std: parse(parts[2])?,
            unit: parts[3].to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake_report(reps: usize) -> RunReport {
        let per_seed: Vec<SeedMetrics> = (0..reps)
            .map(|i| SeedMetrics {
                seed: i as u64,
                params_count: 212,
                train_error: 1.0e-5 + i as f64 * 1.0e-6,
                infer_error: 2.2e-6,
                test_error: 2.7e-6,
                full_rmse_m: 0.262,
                inner_rmse_m: 0.237,
            })
            .collect();
        let collect = |f: fn(&SeedMetrics) -> f64| -> Vec<f64> {
            per_seed.iter().map(f).collect()
        };
        RunReport {
            label: "FINN".into(),
            repetitions: reps,
            seeds: per_seed.iter().map(|m| m.seed).collect(),
            params_count: summarize(&collect(|m| m.params_count as f64)),
            train_error: summarize(&collect(|m| m.train_error)),
            infer_error: summarize(&collect(|m| m.infer_error)),
            test_error: summarize(&collect(|m| m.test_error)),
            full_rmse_m: summarize(&collect(|m| m.full_rmse_m)),
            inner_rmse_m: summarize(&collect(|m| m.inner_rmse_m)),
            failures: vec![],
            per_seed,
        }
    }

    #[test]
    fn summary_matches_two_pass_reference() {
        let xs = [1.5, 2.25, -0.5, 4.0, 0.125];
        let s = summarize(&xs);
        // Independent two-pass computation with explicit loops.
        let mut mean = 0.0;
        for x in xs {
            mean += x;
        }
        mean /= xs.len() as f64;
        let mut var = 0.0;
        for x in xs {
            var += (x - mean) * (x - mean);
        }
        var /= xs.len() as f64;
        assert!((s.mean - mean).abs() <= 1e-12 * mean.abs());
        assert!((s.std - var.sqrt()).abs() <= 1e-12 * var.sqrt());
    }

    #[test]
    fn identical_repetitions_have_zero_std() {
        let mut report = fake_report(2);
        report.per_seed[1] = report.per_seed[0];
        let values: Vec<f64> = report.per_seed.iter().map(|m| m.train_error).collect();
        let s = summarize(&values);
        assert_eq!(s.std, 0.0);
    }

    #[test]
    fn empty_report_is_refused() {
        let report = fake_report(0);
        assert!(matches!(emit_text(&report), Err(EvalError::NoRepetitions)));
        assert!(matches!(emit_csv(&report), Err(EvalError::NoRepetitions)));
    }

    #[test]
    fn single_repetition_is_flagged() {
        let report = fake_report(1);
        assert!(report.single_repetition());
        let text = emit_text(&report).unwrap();
        assert!(text.contains("single repetition"));
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let report = fake_report(3);
        let csv = emit_csv(&report).unwrap();
        let rows_back = parse_csv(&csv).unwrap();
        let original = rows(&report);
        assert_eq!(rows_back.len(), original.len());
        for (row, (name, summary, unit)) in rows_back.iter().zip(original) {
            assert_eq!(row.metric, name);
            assert_eq!(row.unit, unit);
            assert_eq!(row.mean.to_bits(), summary.mean.to_bits());
            assert_eq!(row.std.to_bits(), summary.std.to_bits());
        }
    }

    #[test]
    fn text_table_rows_follow_published_order() {
        let report = fake_report(2);
        let text = emit_text(&report).unwrap();
        let order = [
            "params",
            "train_error",
            "infer_error",
            "test_error",
            "full_rec_error",
            "inner_rec_error",
        ];
        let mut last = 0;
        for name in order {
            let pos = text.find(name).unwrap_or_else(|| panic!("{name} missing"));
            assert!(pos > last, "{name} out of order");
            last = pos;
        }
    }

    #[test]
    fn csv_rejects_malformed_input() {
        assert!(parse_csv("nope\n").is_err());
        assert!(parse_csv("metric,mean,std,unit\nx,1.0,2.0\n").is_err());
        assert!(parse_csv("metric,mean,std,unit\nx,abc,2.0,m\n").is_err());
    }
}
