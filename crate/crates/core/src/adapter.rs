//! Null-space adapters: a layer update `ΔW = U·V` where `U` is a frozen
//! orthonormal basis of the small-singular-value directions of previous
//! inputs and `V` is the only trainable factor.
//!
//! For any previously seen input `x`, `‖xᵀ·U‖₂` is at most the largest
//! retained singular value, which selection caps at `ε₁·‖X‖_F`. Hence
//! `‖xᵀ·U·V‖₂ ≤ ε₁·‖X‖_F·‖V‖₂` whatever `V` becomes, and keeping
//! `‖V‖₂ ≤ √ε / (ε₁·‖X‖_F)` keeps the squared output change below `ε`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::spectral::{self, CovarianceAccumulator, NullBasis};

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterPair {
    basis: NullBasis,
    v: Matrix,
    layer_index: usize,
}

impl AdapterPair {
    /// A zero-initialized adapter on `basis` for a layer with `d_out` outputs.
    pub fn new(basis: NullBasis, d_out: usize, layer_index: usize) -> Self {
        let r = basis.rank();
        Self {
            basis,
            v: Matrix::zeros(r, d_out),
            layer_index,
        }
    }

    pub fn at_layer(mut self, layer_index: usize) -> Self {
        self.layer_index = layer_index;
        self
    }

    pub fn layer_index(&self) -> usize {
        self.layer_index
    }

    pub fn null_basis(&self) -> &NullBasis {
        &self.basis
    }

    /// Frozen `d × r` factor.
    pub fn basis(&self) -> &Matrix {
        self.basis.basis()
    }

    pub fn rank(&self) -> usize {
        self.basis.rank()
    }

    /// Trainable `r × d_out` factor.
    pub fn v(&self) -> &Matrix {
        &self.v
    }

    pub fn v_mut(&mut self) -> &mut Matrix {
        &mut self.v
    }

    pub fn set_v(&mut self, v: Matrix) -> Result<()> {
        if v.shape() != self.v.shape() {
            return Err(Error::Shape(format!(
                "V must be {:?}, got {:?}",
                self.v.shape(),
                v.shape()
            )));
        }
        self.v = v;
        Ok(())
    }

    /// Number of trainable entries (`r · d_out`).
    pub fn trainable_parameters(&self) -> usize {
        self.v.rows() * self.v.cols()
    }

    /// Dense `U·V`.
    pub fn delta(&self) -> Matrix {
        self.basis().matmul(&self.v).expect("U and V compose")
    }

    fn is_inert(&self) -> bool {
        self.rank() == 0 || self.v.as_slice().iter().all(|&x| x == 0.0)
    }
}

/// Builds a zero-initialized adapter from the inputs accumulated so far.
pub fn get_uv(acc: &CovarianceAccumulator, eps1: f64, d_out: usize) -> Result<AdapterPair> {
    if acc.is_empty() {
        return Err(Error::State("cannot build a basis from an empty accumulator".into()));
    }
    if d_out == 0 {
        return Err(Error::InvalidDimension(
            "adapter output dimension must be positive".into(),
        ));
    }
    spectral::validate_eps1(eps1)?;
    let dec = spectral::eigh(acc.covariance())?;
    let basis = spectral::select_null_basis(&dec, eps1, spectral::frobenius_from_accumulator(acc))?;
    Ok(AdapterPair::new(basis, d_out, 0))
}

fn check_compose(w: &Matrix, pair: &AdapterPair) -> Result<()> {
    if pair.basis().rows() != w.rows() || pair.v.cols() != w.cols() {
        return Err(Error::Shape(format!(
            "adapter {}x{}·{}x{} does not match weight {}x{}",
            pair.basis().rows(),
            pair.rank(),
            pair.v.rows(),
            pair.v.cols(),
            w.rows(),
            w.cols()
        )));
    }
    Ok(())
}

/// `x·(W + U·V)`, evaluated as `x·W + (x·U)·V`.
pub fn adapted_forward(w: &Matrix, pair: &AdapterPair, x: &Matrix) -> Result<Matrix> {
    check_compose(w, pair)?;
    let mut out = x.matmul(w)?;
    if pair.is_inert() {
        return Ok(out);
    }
    let projected = x.matmul(pair.basis())?;
    out.axpy(1.0, &projected.matmul(&pair.v)?);
    Ok(out)
}

/// `∂L/∂V = (x·U)ᵀ·upstream` for the layer output gradient `upstream`.
pub fn grad_v(pair: &AdapterPair, x: &Matrix, upstream: &Matrix) -> Result<Matrix> {
    if x.cols() != pair.basis().rows() || upstream.rows() != x.rows() || upstream.cols() != pair.v.cols() {
        return Err(Error::Shape(format!(
            "grad_v: input {:?}, upstream {:?}, adapter {}x{}→{}",
            x.shape(),
            upstream.shape(),
            pair.basis().rows(),
            pair.rank(),
            pair.v.cols()
        )));
    }
    x.matmul(pair.basis())?.t_matmul(upstream)
}

/// `W + U·V`.
pub fn merge(w: &Matrix, pair: &AdapterPair) -> Result<Matrix> {
    check_compose(w, pair)?;
    if pair.is_inert() {
        return Ok(w.clone());
    }
    w.add(&pair.delta())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityBudget {
    /// Allowed squared output change on previous inputs, when one is set.
    pub eps: Option<f64>,
    pub eps1: f64,
    /// `‖X‖_F` of the inputs the basis was built on.
    pub frob: f64,
}

impl StabilityBudget {
    pub fn new(eps: Option<f64>, eps1: f64, frob: f64) -> Result<Self> {
        if let Some(e) = eps {
            if !(e > 0.0) || !e.is_finite() {
                return Err(Error::Config(format!("output budget must be positive, got {e}")));
            }
        }
        spectral::validate_eps1(eps1)?;
        Ok(Self { eps, eps1, frob })
    }

    /// `√ε / (ε₁·‖X‖_F)`; unbounded when no budget is set or no energy was seen.
    pub fn v_norm_cap(&self) -> f64 {
        match self.eps {
            Some(e) if self.frob > 0.0 => e.sqrt() / (self.eps1 * self.frob),
            _ => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityReport {
    /// `max_x ‖xᵀ·U·V‖₂` over the supplied inputs.
    pub max_perturbation: f64,
    /// `ε₁·‖X‖_F·‖V‖₂`.
    pub bound: f64,
    pub v_norm: f64,
    pub v_norm_cap: f64,
    pub pass: bool,
}

/// Slack added to every bound comparison.
pub const STABILITY_SLACK: f64 = 1e-8;

/// Measures how much the adapter moves the layer output on `inputs` (one
/// previous input per row) and compares it with the analytic bound.
pub fn stability_check(pair: &AdapterPair, inputs: &Matrix, budget: &StabilityBudget) -> StabilityReport {
    let v_norm = pair.v.spectral_norm();
    let bound = budget.eps1 * budget.frob * v_norm;
    let cap = budget.v_norm_cap();
    let max_perturbation = if pair.rank() == 0 || inputs.rows() == 0 || inputs.cols() != pair.basis().rows() {
        0.0
    } else {
        let out = inputs
            .matmul(pair.basis())
            .and_then(|p| p.matmul(&pair.v))
            .expect("shapes checked");
        (0..out.rows())
            .map(|r| crate::linalg::l2(out.row(r)))
            .fold(0.0, f64::max)
    };
    let mut pass = max_perturbation <= bound + STABILITY_SLACK;
    if let Some(eps) = budget.eps {
        if v_norm <= cap {
            pass &= max_perturbation <= eps.sqrt() + STABILITY_SLACK;
        }
    }
    StabilityReport {
        max_perturbation,
        bound,
        v_norm,
        v_norm_cap: cap,
        pass,
    }
}

/// Shrinks the singular values of `v` above `cap` down to `cap`, leaving the
/// singular vectors alone. Returns whether anything changed.
pub fn clip_spectral_norm(v: &mut Matrix, cap: f64) -> Result<bool> {
    if !cap.is_finite() || v.rows() == 0 || v.cols() == 0 {
        return Ok(false);
    }
    if v.spectral_norm() <= cap {
        return Ok(false);
    }
    let gram = v.t_matmul(v)?;
    let dec = spectral::eigh(&gram)?;
    let q = dec.eigenvectors();
    let factors: Vec<f64> = dec
        .singular_values()
        .iter()
        .map(|&s| if s > cap { cap / s } else { 1.0 })
        .collect();
    let scaled_q = Matrix::from_fn(q.rows(), q.cols(), |r, c| q[(r, c)] * factors[c]);
    let shrink = scaled_q.matmul_t(q)?;
    *v = v.matmul(&shrink)?;
    Ok(true)
}
