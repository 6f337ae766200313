//! Multi-seed runs, method comparisons, and the files they leave behind.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::config::RunConfig;
use super::metrics::{compute_acc, compute_bwt, format_real, mean_std, AccuracyMatrix};
use super::train::{train_sequence, TaskDiagnostics};
use super::Method;
use crate::error::{Error, Result};
use crate::tasks::generate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricStat {
    pub mean: f64,
    pub std: f64,
}

impl MetricStat {
    fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        Self { mean, std }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub acc: f64,
    /// Unset for single-task suites.
    pub bwt: Option<f64>,
    /// Mean of `A[i][i]`.
    pub diagonal_mean: f64,
    #[serde(skip)]
    pub accuracy: AccuracyMatrix,
    pub tasks: Vec<TaskDiagnostics>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
    pub exit_code: i32,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub method: Method,
    pub label: String,
    pub config: RunConfig,
    pub acc: MetricStat,
    pub bwt: Option<MetricStat>,
    pub diagonal_mean: MetricStat,
    /// Every finished NESS task passed every stability check.
    pub stability_all_pass: bool,
    pub seeds: Vec<SeedOutcome>,
    pub failures: Vec<SeedFailure>,
    pub wall_clock_seconds: f64,
}

/// Parallelism for seed execution: `NESS_THREADS` if set, else every core.
pub fn thread_count() -> Result<usize> {
    match std::env::var("NESS_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!(
                "NESS_THREADS must be a positive integer, got '{v}'"
            ))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// One full training run of `cfg` with `seed` (suite and model both seeded).
pub fn run_seed(cfg: &RunConfig, seed: u64) -> Result<SeedOutcome> {
    let tasks = generate(&cfg.suite.clone().with_seed(seed))?;
    let first = tasks.first().ok_or(Error::Format {
        line: 1,
        message: "suite has no tasks".into(),
    })?;
    let classes = tasks.iter().map(|t| t.n_classes).max().unwrap_or(1);
    let spec = cfg.net.to_spec(first.dim(), classes)?;
    let outcome = train_sequence(&spec, &tasks, &cfg.settings(), seed)?;
    let a = outcome.accuracy;
    let bwt = if a.tasks() >= 2 { Some(compute_bwt(&a)?) } else { None };
    let diagonal_mean = (0..a.tasks()).filter_map(|i| a.get(i, i)).sum::<f64>() / a.tasks() as f64;
    Ok(SeedOutcome {
        seed,
        acc: compute_acc(&a)?,
        bwt,
        diagonal_mean,
        accuracy: a,
        tasks: outcome.diagnostics,
    })
}

fn check_unique_seeds(seeds: &[u64]) -> Result<()> {
    let unique: BTreeSet<u64> = seeds.iter().copied().collect();
    if unique.len() != seeds.len() {
        return Err(Error::Config("seeds must be distinct".into()));
    }
    Ok(())
}

/// Runs every seed (in parallel, up to [`thread_count`]) and aggregates.
/// Failed seeds are listed in the report; if every seed fails, the first
/// failure is returned instead.
pub fn run_suite(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    check_unique_seeds(&cfg.seeds)?;
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count()?)
        .build()
        .map_err(|e| Error::State(format!("thread pool: {e}")))?;
    let results: Vec<(u64, Result<SeedOutcome>)> =
        pool.install(|| cfg.seeds.par_iter().map(|&s| (s, run_seed(cfg, s))).collect());

    let mut seeds = Vec::new();
    let mut failures = Vec::new();
    let mut first_error = None;
    for (seed, r) in results {
        match r {
            Ok(o) => seeds.push(o),
            Err(e) => {
                failures.push(SeedFailure {
                    seed,
                    error: e.to_string(),
                    exit_code: e.exit_code(),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    if seeds.is_empty() {
        return Err(first_error.expect("at least one seed ran"));
    }
    let accs: Vec<f64> = seeds.iter().map(|s| s.acc).collect();
    let bwts: Vec<f64> = seeds.iter().filter_map(|s| s.bwt).collect();
    let diags: Vec<f64> = seeds.iter().map(|s| s.diagonal_mean).collect();
    let stability_all_pass = seeds.iter().flat_map(|s| &s.tasks).all(|t| t.stability_all_pass);
    Ok(RunReport {
        method: cfg.method,
        label: cfg.label(),
        config: cfg.clone(),
        acc: MetricStat::of(&accs),
        bwt: (bwts.len() == seeds.len()).then(|| MetricStat::of(&bwts)),
        diagonal_mean: MetricStat::of(&diags),
        stability_all_pass,
        seeds,
        failures,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `accmatrix_seed<k>.csv`, `heatmap_seed<k>.csv` per seed and
/// `summary.json`; returns the paths written.
pub fn emit_reports(report: &RunReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for s in &report.seeds {
        let path = out_dir.join(format!("accmatrix_seed{}.csv", s.seed));
        write_file(&path, &s.accuracy.to_csv())?;
        written.push(path);
        let path = out_dir.join(format!("heatmap_seed{}.csv", s.seed));
        write_file(&path, &s.accuracy.heatmap_csv())?;
        written.push(path);
    }
    let path = out_dir.join("summary.json");
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::State(e.to_string()))?;
    write_file(&path, &(json + "\n"))?;
    written.push(path);
    Ok(written)
}

/// Runs several configs on the same suite and seeds.
pub fn compare(configs: &[RunConfig]) -> Result<Vec<RunReport>> {
    let first = configs
        .first()
        .ok_or_else(|| Error::Config("compare needs at least one config".into()))?;
    let mut labels = BTreeSet::new();
    for c in configs {
        if c.suite != first.suite || c.seeds != first.seeds {
            return Err(Error::Config(format!(
                "config '{}' uses a different suite or seed list than '{}'",
                c.label(),
                first.label()
            )));
        }
        if !labels.insert(c.label()) {
            return Err(Error::Config(format!(
                "two configs are labelled '{}'; set distinct `label` keys",
                c.label()
            )));
        }
    }
    configs.iter().map(run_suite).collect()
}

/// `method,acc_mean,acc_std,bwt_mean,bwt_std`, one row per report.
pub fn comparison_csv(reports: &[RunReport]) -> String {
    let mut out = String::from("method,acc_mean,acc_std,bwt_mean,bwt_std\n");
    for r in reports {
        let (bm, bs) = r.bwt.map_or((String::new(), String::new()), |b| {
            (format_real(b.mean), format_real(b.std))
        });
        writeln!(
            out,
            "{},{},{},{},{}",
            r.label,
            format_real(r.acc.mean),
            format_real(r.acc.std),
            bm,
            bs
        )
        .unwrap();
    }
    out
}

/// `comparison.csv` in `out_dir`, plus each run's reports in a subdirectory
/// named after its label.
pub fn emit_comparison(reports: &[RunReport], out_dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for r in reports {
        emit_reports(r, &out_dir.join(&r.label))?;
    }
    let path = out_dir.join("comparison.csv");
    write_file(&path, &comparison_csv(reports))?;
    Ok(path)
}

/// Metrics recomputed from the accuracy matrices in a report directory.
#[derive(Debug, Clone)]
pub struct StoredReport {
    pub seeds: Vec<(u64, AccuracyMatrix)>,
    pub acc: MetricStat,
    pub bwt: Option<MetricStat>,
}

impl StoredReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,acc,bwt\n");
        for (seed, a) in &self.seeds {
            let acc = compute_acc(a).map(format_real).unwrap_or_default();
            let bwt = compute_bwt(a).map(format_real).unwrap_or_default();
            writeln!(out, "{seed},{acc},{bwt}").unwrap();
        }
        let bwt_field = |f: fn(&MetricStat) -> f64| self.bwt.as_ref().map(|b| format_real(f(b))).unwrap_or_default();
        writeln!(out, "mean,{},{}", format_real(self.acc.mean), bwt_field(|b| b.mean)).unwrap();
        writeln!(out, "std,{},{}", format_real(self.acc.std), bwt_field(|b| b.std)).unwrap();
        out
    }
}

/// Reads every `accmatrix_seed<k>.csv` in `dir` (ordered by `k`).
pub fn read_report_dir(dir: &Path) -> Result<StoredReport> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let seed = name
            .strip_prefix("accmatrix_seed")
            .and_then(|s| s.strip_suffix(".csv"))
            .and_then(|s| s.parse::<u64>().ok());
        if let Some(seed) = seed {
            found.push((seed, entry.path()));
        }
    }
    if found.is_empty() {
        return Err(Error::MissingFile(dir.join("accmatrix_seed<k>.csv")));
    }
    found.sort();
    let mut seeds = Vec::with_capacity(found.len());
    for (seed, path) in found {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let a = AccuracyMatrix::parse_csv(&text).map_err(|e| match e {
            Error::Format { line, message } => Error::Format {
                line,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })?;
        seeds.push((seed, a));
    }
    let accs = seeds.iter().map(|(_, a)| compute_acc(a)).collect::<Result<Vec<_>>>()?;
    let multi = seeds.iter().all(|(_, a)| a.tasks() >= 2);
    let bwt = if multi {
        let b = seeds.iter().map(|(_, a)| compute_bwt(a)).collect::<Result<Vec<_>>>()?;
        Some(MetricStat::of(&b))
    } else {
        None
    };
    Ok(StoredReport {
        acc: MetricStat::of(&accs),
        bwt,
        seeds,
    })
}
