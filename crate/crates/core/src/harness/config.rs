//! TOML run configuration.
//!
//! ```toml
//! method = "ness"
//! eps1 = 0.001
//! epochs = 30
//! seeds = [1, 2, 3, 4, 37]
//!
//! [suite]
//! kind = "rotated-gaussians"
//!
//! [net]
//! hidden = [16, 16]
//!
//! [optim]
//! kind = "sgdm"
//! lr = 0.05
//! weight_decay = 0.0001
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Method, TrainSettings, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_EPS1, DEFAULT_STABILITY_ROWS};
use crate::error::{Error, Result};
use crate::network::{LayerSpec, NetworkSpec};
use crate::optim::OptimConfig;
use crate::tasks::{SuiteKind, SuiteSpec};

pub const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 37];

fn default_epochs() -> usize {
    DEFAULT_EPOCHS
}
fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}
fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}
fn default_true() -> bool {
    true
}
fn default_stability_rows() -> usize {
    DEFAULT_STABILITY_ROWS
}

/// Body layout. `hidden` builds a dense stack from the suite's input width;
/// `layers` spells out every layer (and must start at that width).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hidden: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<LayerSpec>>,
    #[serde(default = "default_true")]
    pub bias: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden: vec![16, 16],
            layers: None,
            bias: true,
        }
    }
}

impl NetConfig {
    pub fn to_spec(&self, input_len: usize, head_dim: usize) -> Result<NetworkSpec> {
        let spec = match (&self.layers, self.hidden.is_empty()) {
            (Some(_), false) => return Err(Error::Config("net: give either hidden or layers, not both".into())),
            (None, true) => return Err(Error::Config("net: hidden or layers is required".into())),
            (Some(layers), true) => NetworkSpec {
                layers: layers.clone(),
                head_dim,
                bias: self.bias,
            },
            (None, false) => NetworkSpec {
                bias: self.bias,
                ..NetworkSpec::mlp(input_len, &self.hidden, head_dim)
            },
        };
        spec.validate()?;
        if spec.input_len() != input_len {
            return Err(Error::Config(format!(
                "first layer takes {} inputs but the suite has {} features",
                spec.input_len(),
                input_len
            )));
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    /// Row name in comparison tables; defaults to the method.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub suite: SuiteSpec,
    #[serde(default)]
    pub net: NetConfig,
    pub optim: OptimConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_threshold: Option<f64>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub strict_bound: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_budget: Option<f64>,
    #[serde(default = "default_true")]
    pub stability_checks: bool,
    #[serde(default = "default_stability_rows")]
    pub stability_rows: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collect_limit: Option<usize>,
}

impl RunConfig {
    /// Desk-scale defaults on the rotated-gaussians preset: two hidden layers
    /// of 16, SGD with momentum, 30 epochs, seeds 1, 2, 3, 4, 37.
    pub fn desk(method: Method) -> Self {
        Self {
            method,
            label: None,
            suite: SuiteSpec::preset(SuiteKind::RotatedGaussians, 0),
            net: NetConfig::default(),
            optim: OptimConfig::sgdm(0.05, 0.9).with_weight_decay(1e-4),
            eps1: (method == Method::Ness).then_some(DEFAULT_EPS1),
            energy_threshold: (method == Method::Gpm).then_some(0.97),
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            seeds: default_seeds(),
            strict_bound: false,
            output_budget: None,
            stability_checks: true,
            stability_rows: DEFAULT_STABILITY_ROWS,
            collect_limit: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.method.to_string())
    }

    pub fn settings(&self) -> TrainSettings {
        TrainSettings {
            method: self.method,
            eps1: self.eps1,
            energy_threshold: self.energy_threshold,
            optim: self.optim.clone(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            strict_bound: self.strict_bound,
            output_budget: self.output_budget,
            stability_checks: self.stability_checks,
            stability_rows: self.stability_rows,
            collect_limit: self.collect_limit,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.settings().validate()?;
        self.suite.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        if self.method != Method::Ness && self.eps1.is_some() {
            return Err(Error::Config(format!(
                "eps1 is only used by 'ness', not '{}'",
                self.method
            )));
        }
        if self.method != Method::Gpm && self.energy_threshold.is_some() {
            return Err(Error::Config(format!(
                "energy_threshold is only used by 'gpm', not '{}'",
                self.method
            )));
        }
        if self.stability_rows == 0 {
            return Err(Error::Config("stability_rows must be at least 1".into()));
        }
        if self.suite.kind != SuiteKind::File {
            self.net.to_spec(self.suite.dim, self.suite.classes)?;
        }
        Ok(())
    }
}
