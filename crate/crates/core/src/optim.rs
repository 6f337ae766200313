//! Update rules for the trained tensors: SGD, SGD with momentum, and
//! sharpness-aware minimization on top of the momentum rule, plus a
//! reduce-on-plateau learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Sgdm,
    Sam,
}

fn default_momentum() -> f64 {
    0.9
}
fn default_rho() -> f64 {
    0.05
}
fn default_decay_factor() -> f64 {
    0.5
}
fn default_patience() -> usize {
    6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Ignored by plain SGD.
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    /// SAM neighbourhood radius.
    #[serde(default = "default_rho")]
    pub sam_rho: f64,
    #[serde(default = "default_decay_factor")]
    pub lr_decay_factor: f64,
    #[serde(default = "default_patience")]
    pub patience: usize,
    /// Subtract `lr·λ·p` directly instead of adding `λ·p` to the gradient.
    #[serde(default)]
    pub decoupled_decay: bool,
    /// Also decay the task heads (adapter factors are always decayed).
    #[serde(default)]
    pub decay_heads: bool,
}

impl OptimConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            momentum: 0.0,
            weight_decay: 0.0,
            sam_rho: default_rho(),
            lr_decay_factor: default_decay_factor(),
            patience: default_patience(),
            decoupled_decay: false,
            decay_heads: false,
        }
    }

    pub fn sgdm(lr: f64, momentum: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgdm,
            momentum,
            ..Self::sgd(lr)
        }
    }

    pub fn sam(lr: f64, momentum: f64, rho: f64) -> Self {
        Self {
            kind: OptimizerKind::Sam,
            momentum,
            sam_rho: rho,
            ..Self::sgd(lr)
        }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return fail(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(self.sam_rho >= 0.0) || !self.sam_rho.is_finite() {
            return fail(format!("sam_rho must be non-negative, got {}", self.sam_rho));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return fail(format!(
                "lr_decay_factor must lie in (0, 1), got {}",
                self.lr_decay_factor
            ));
        }
        if self.patience == 0 {
            return fail("patience must be at least 1".into());
        }
        Ok(())
    }

    fn effective_momentum(&self) -> f64 {
        match self.kind {
            OptimizerKind::Sgd => 0.0,
            OptimizerKind::Sgdm | OptimizerKind::Sam => self.momentum,
        }
    }
}

/// Velocity buffers and schedule state for one set of trained tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    velocity: Vec<Matrix>,
    decay_mask: Vec<bool>,
    lr: f64,
    best_metric: f64,
    epochs_since_improvement: usize,
}

impl OptimState {
    /// `shapes[i]` is the shape of the i-th trained tensor; `decay_mask[i]`
    /// says whether weight decay applies to it.
    pub fn new(shapes: &[(usize, usize)], decay_mask: Vec<bool>, cfg: &OptimConfig) -> Result<Self> {
        cfg.validate()?;
        if decay_mask.len() != shapes.len() {
            return Err(Error::Shape(format!(
                "{} decay flags for {} tensors",
                decay_mask.len(),
                shapes.len()
            )));
        }
        Ok(Self {
            velocity: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            decay_mask,
            lr: cfg.lr,
            best_metric: f64::NEG_INFINITY,
            epochs_since_improvement: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn velocity(&self) -> &[Matrix] {
        &self.velocity
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.epochs_since_improvement
    }

    /// Sets the reference value later epochs must beat (e.g. the metric
    /// before any training on the task).
    pub fn set_baseline(&mut self, metric: f64) {
        self.best_metric = metric;
        self.epochs_since_improvement = 0;
    }

    /// Reduce-on-plateau for a metric where larger is better: any strict
    /// improvement resets the counter; after `patience` epochs without one
    /// the rate is multiplied by `lr_decay_factor` and the counter restarts.
    pub fn lr_schedule(&mut self, metric: f64, cfg: &OptimConfig) -> f64 {
        if metric > self.best_metric {
            self.best_metric = metric;
            self.epochs_since_improvement = 0;
        } else {
            self.epochs_since_improvement += 1;
            if self.epochs_since_improvement >= cfg.patience {
                self.lr *= cfg.lr_decay_factor;
                self.epochs_since_improvement = 0;
            }
        }
        self.lr
    }

    fn check(&self, params: &[&mut Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != self.velocity.len() || grads.len() != self.velocity.len() {
            return Err(Error::Shape(format!(
                "{} params and {} grads for {} optimizer slots",
                params.len(),
                grads.len(),
                self.velocity.len()
            )));
        }
        for (i, ((p, g), v)) in params.iter().zip(grads).zip(&self.velocity).enumerate() {
            if p.shape() != v.shape() || g.shape() != v.shape() {
                return Err(Error::Shape(format!(
                    "slot {i}: param {:?}, grad {:?}, buffer {:?}",
                    p.shape(),
                    g.shape(),
                    v.shape()
                )));
            }
        }
        Ok(())
    }
}

/// `v ← m·v + g + λ·p; p ← p − lr·v` (decay folded into the gradient), or
/// with decoupled decay `v ← m·v + g; p ← p − lr·λ·p − lr·v`.
pub fn step_sgdm(
    state: &mut OptimState,
    params: &mut [&mut Matrix],
    grads: &[Matrix],
    cfg: &OptimConfig,
) -> Result<()> {
    state.check(params, grads)?;
    let m = cfg.effective_momentum();
    let lr = state.lr;
    let wd = cfg.weight_decay;
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let decay = if state.decay_mask[i] { wd } else { 0.0 };
        let v = &mut state.velocity[i];
        let ps = p.as_mut_slice();
        for ((pv, &gv), vv) in ps.iter_mut().zip(g.as_slice()).zip(v.as_mut_slice()) {
            if cfg.decoupled_decay {
                *vv = m * *vv + gv;
                *pv = *pv - lr * decay * *pv - lr * *vv;
            } else {
                *vv = m * *vv + gv + decay * *pv;
                *pv -= lr * *vv;
            }
        }
    }
    Ok(())
}

/// A loss that can be differentiated at the current parameter values, any
/// number of times on the same batch.
pub trait Objective {
    fn params_mut(&mut self) -> Vec<&mut Matrix>;
    fn gradients(&mut self) -> Result<Vec<Matrix>>;
}

/// Sharpness-aware step: move to `p + ρ·g/‖g‖`, take the gradient there,
/// come back to `p`, and apply the momentum rule with that gradient. A zero
/// gradient (or `ρ = 0`) skips the ascent.
pub fn step_sam<O: Objective + ?Sized>(state: &mut OptimState, objective: &mut O, cfg: &OptimConfig) -> Result<()> {
    let first = objective.gradients()?;
    let norm = first.iter().map(Matrix::frobenius_sq).sum::<f64>().sqrt();
    let grads = if norm == 0.0 || cfg.sam_rho == 0.0 {
        first
    } else {
        let scale = cfg.sam_rho / norm;
        let saved: Vec<Matrix> = objective.params_mut().iter().map(|p| (**p).clone()).collect();
        for (p, g) in objective.params_mut().into_iter().zip(&first) {
            p.axpy(scale, g);
        }
        let second = objective.gradients();
        for (p, orig) in objective.params_mut().into_iter().zip(saved) {
            *p = orig;
        }
        second?
    };
    let mut params = objective.params_mut();
    step_sgdm(state, &mut params, &grads, cfg)
}
