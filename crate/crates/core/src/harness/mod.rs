//! Run orchestration: training settings, the sequential training loop,
//! metrics, run configs, multi-seed execution and report files.

mod config;
mod metrics;
mod report;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::OptimConfig;
use crate::spectral;

pub use config::{NetConfig, RunConfig, DEFAULT_SEEDS};
pub use metrics::{compute_acc, compute_bwt, format_real, mean_std, AccuracyMatrix};
pub use report::{
    compare, comparison_csv, emit_comparison, emit_reports, read_report_dir, run_seed, run_suite, thread_count,
    MetricStat, RunReport, SeedFailure, SeedOutcome, StoredReport,
};
pub use train::{init_head, init_network, train_sequence, Learner, TaskDiagnostics, TrainingOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ness,
    Naive,
    Gpm,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ness => "ness",
            Method::Naive => "naive",
            Method::Gpm => "gpm",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ness" => Ok(Method::Ness),
            "naive" => Ok(Method::Naive),
            "gpm" => Ok(Method::Gpm),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

pub const DEFAULT_EPS1: f64 = 1e-3;
pub const DEFAULT_EPOCHS: usize = 30;
pub const DEFAULT_BATCH_SIZE: usize = 64;
/// Previous-input rows kept per layer and task for stability checks.
pub const DEFAULT_STABILITY_ROWS: usize = 4096;

/// Everything the training loop needs besides the network shape and data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub method: Method,
    pub eps1: Option<f64>,
    pub energy_threshold: Option<f64>,
    pub optim: OptimConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Clip every `V` to the spectral-norm cap after each epoch.
    pub strict_bound: bool,
    /// Allowed squared output change `ε` on previous inputs.
    pub output_budget: Option<f64>,
    pub stability_checks: bool,
    pub stability_rows: usize,
    /// Only the first `k` training rows feed the input memory.
    pub collect_limit: Option<usize>,
}

impl TrainSettings {
    fn base(method: Method, optim: OptimConfig) -> Self {
        Self {
            method,
            eps1: None,
            energy_threshold: None,
            optim,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            strict_bound: false,
            output_budget: None,
            stability_checks: true,
            stability_rows: DEFAULT_STABILITY_ROWS,
            collect_limit: None,
        }
    }

    pub fn ness(eps1: f64, optim: OptimConfig) -> Self {
        Self {
            eps1: Some(eps1),
            ..Self::base(Method::Ness, optim)
        }
    }

    pub fn naive(optim: OptimConfig) -> Self {
        Self::base(Method::Naive, optim)
    }

    pub fn gpm(energy_threshold: f64, optim: OptimConfig) -> Self {
        Self {
            energy_threshold: Some(energy_threshold),
            ..Self::base(Method::Gpm, optim)
        }
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.optim.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        match self.method {
            Method::Ness => match self.eps1 {
                Some(e) => spectral::validate_eps1(e)?,
                None => return Err(Error::Config("method 'ness' requires eps1".into())),
            },
            Method::Gpm => match self.energy_threshold {
                Some(e) if (0.0..=1.0).contains(&e) => {}
                Some(e) => {
                    return Err(Error::Config(format!("energy_threshold must lie in [0, 1], got {e}")));
                }
                None => return Err(Error::Config("method 'gpm' requires energy_threshold".into())),
            },
            Method::Naive => {}
        }
        if self.strict_bound && self.output_budget.is_none() {
            return Err(Error::Config("strict_bound needs output_budget".into()));
        }
        if let Some(e) = self.output_budget {
            if !(e > 0.0) || !e.is_finite() {
                return Err(Error::Config(format!("output_budget must be positive, got {e}")));
            }
        }
        if self.collect_limit == Some(0) {
            return Err(Error::Config("collect_limit must be at least 1".into()));
        }
        Ok(())
    }
}
