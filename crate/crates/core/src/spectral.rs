//! Streaming input covariance, symmetric eigendecomposition, and the
//! thresholded split of a layer's input space into a dominant part and an
//! approximate null part.
//!
//! For a layer that has seen inputs `x_1, ..., x_N` (the columns of `X`),
//! `C = X·Xᵀ = Σ x_i x_iᵀ` shares its eigenvectors with the left singular
//! vectors of `X`, and its eigenvalues are the squared singular values. The
//! right singular vectors are never formed.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Running `Σ x xᵀ` over a stream of layer inputs, plus the running squared
/// Frobenius norm of the (never stored) input matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceAccumulator {
    dim: usize,
    cov: Matrix,
    sample_count: usize,
    frob_sq: f64,
}

impl CovarianceAccumulator {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension(
                "covariance dimension must be at least 1".into(),
            ));
        }
        Ok(Self {
            dim,
            cov: Matrix::zeros(dim, dim),
            sample_count: 0,
            frob_sq: 0.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn covariance(&self) -> &Matrix {
        &self.cov
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn frob_sq(&self) -> f64 {
        self.frob_sq
    }

    pub fn is_empty(&self) -> bool {
        self.sample_count == 0
    }

    /// Adds the rank-one term `x·xᵀ`.
    pub fn accumulate(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!(
                "sample of length {} for a {}-dimensional accumulator",
                x.len(),
                self.dim
            )));
        }
        if let Some(v) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("input sample contains {v}")));
        }
        self.add_unchecked(x);
        Ok(())
    }

    /// Adds every row of `batch` as one sample.
    pub fn accumulate_rows(&mut self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.dim {
            return Err(Error::Shape(format!(
                "batch of width {} for a {}-dimensional accumulator",
                batch.cols(),
                self.dim
            )));
        }
        if !batch.is_finite() {
            return Err(Error::NonFinite("input batch contains non-finite values".into()));
        }
        for r in 0..batch.rows() {
            self.add_unchecked(batch.row(r));
        }
        Ok(())
    }

    /// Folds another accumulator of the same dimension into this one.
    pub fn absorb(&mut self, other: &CovarianceAccumulator) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::Shape(format!(
                "cannot merge {}-dimensional accumulator into {}-dimensional one",
                other.dim, self.dim
            )));
        }
        self.cov.axpy(1.0, &other.cov);
        self.sample_count += other.sample_count;
        self.frob_sq += other.frob_sq;
        Ok(())
    }

    fn add_unchecked(&mut self, x: &[f64]) {
        let d = self.dim;
        let data = self.cov.as_mut_slice();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &mut data[i * d..(i + 1) * d];
            for (c, &xj) in row.iter_mut().zip(x) {
                *c += xi * xj;
            }
        }
        self.frob_sq += x.iter().map(|v| v * v).sum::<f64>();
        self.sample_count += 1;
    }
}

/// `‖X‖_F` of everything accumulated so far, i.e. `√trace(C)`.
pub fn frobenius_from_accumulator(acc: &CovarianceAccumulator) -> f64 {
    acc.frob_sq.sqrt()
}

/// Eigenpairs of a symmetric positive semidefinite matrix, eigenvalues in
/// descending order and eigenvectors as the matching columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    eigenvectors: Matrix,
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &Matrix {
        &self.eigenvectors
    }

    /// `σ_i = √λ_i`.
    pub fn singular_values(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|l| l.sqrt()).collect()
    }

    /// `U·diag(λ)·Uᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let u = &self.eigenvectors;
        let scaled = Matrix::from_fn(u.rows(), u.cols(), |r, c| u[(r, c)] * self.eigenvalues[c]);
        scaled.matmul_t(u).expect("square factors")
    }
}

/// Sweep cap for the cyclic Jacobi iteration.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Convergence once every off-diagonal entry is at most this times `‖C‖_F`.
pub const JACOBI_TOLERANCE: f64 = 1e-12;

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Ties between equal eigenvalues keep the original diagonal order, and each
/// eigenvector is signed so that its largest-magnitude entry is positive, so
/// the result is fully determined by `c`.
pub fn eigh(c: &Matrix) -> Result<SpectralDecomposition> {
    let n = c.rows();
    if n != c.cols() {
        return Err(Error::Shape(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            n,
            c.cols()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidDimension("empty matrix".into()));
    }
    if !c.is_finite() {
        return Err(Error::NonFinite("matrix to decompose is not finite".into()));
    }
    let scale = c.max_abs().max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (c[(i, j)] - c[(j, i)]).abs() > 1e-8 * scale {
                return Err(Error::Shape(format!(
                    "matrix is not symmetric at ({i}, {j}): {} vs {}",
                    c[(i, j)],
                    c[(j, i)]
                )));
            }
        }
    }

    let mut a = Matrix::from_fn(n, n, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));
    let mut v = Matrix::identity(n);
    let tol = JACOBI_TOLERANCE * a.frobenius_norm();

    let mut converged = false;
    let mut off = max_off_diagonal(&a);
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off <= tol {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
        off = max_off_diagonal(&a);
    }
    if !converged && off > tol {
        return Err(Error::Convergence {
            sweeps: JACOBI_MAX_SWEEPS,
            off_diagonal: off,
        });
    }

    let raw: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort: equal eigenvalues keep their diagonal order.
    order.sort_by(|&x, &y| raw[y].total_cmp(&raw[x]));

    let largest = raw.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    let mut eigenvalues = Vec::with_capacity(n);
    for &k in &order {
        let mut l = raw[k];
        if l < 0.0 {
            if -l > 1e-10 * largest.max(f64::MIN_POSITIVE) && -l > 1e-300 {
                return Err(Error::NonFinite(format!(
                    "matrix is not positive semidefinite (eigenvalue {l:e})"
                )));
            }
            l = 0.0;
        }
        eigenvalues.push(l);
    }

    let mut eigenvectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut pivot = 0;
        for r in 0..n {
            if v[(r, src)].abs() > v[(pivot, src)].abs() {
                pivot = r;
            }
        }
        let sign = if v[(pivot, src)] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            eigenvectors[(r, dst)] = sign * v[(r, src)];
        }
    }

    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

fn max_off_diagonal(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut m = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            m = m.max(a[(i, j)].abs());
        }
    }
    m
}

/// One Jacobi rotation annihilating `a[p][q]`, accumulated into `v`.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == 0.0 {
        return;
    }
    let app = a[(p, p)];
    let aqq = a[(q, q)];
    let theta = (aqq - app) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let t = if theta == 0.0 { 1.0 } else { t };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    let n = a.rows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;

    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Orthonormal basis of the approximate null space of previously seen
/// inputs: the eigenvectors whose singular value is at most `eps1·‖X‖_F`.
#[derive(Debug, Clone, PartialEq)]
pub struct NullBasis {
    basis: Matrix,
    cutoff_index: usize,
    sigma_small_max: f64,
    threshold: f64,
}

impl NullBasis {
    /// `d × r` matrix whose columns span the null directions.
    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.rows()
    }

    pub fn rank(&self) -> usize {
        self.basis.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.rank() == 0
    }

    /// 1-based index of the first retained direction (`d + 1` when empty).
    pub fn cutoff_index(&self) -> usize {
        self.cutoff_index
    }

    /// Largest retained singular value (0 when empty).
    pub fn sigma_small_max(&self) -> f64 {
        self.sigma_small_max
    }

    /// The selection threshold `eps1·‖X‖_F`.
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// A basis from explicit columns, bypassing selection. Columns must be
    /// orthonormal.
    pub fn from_columns(basis: Matrix) -> Result<Self> {
        let defect = crate::linalg::orthonormality_defect(&basis);
        if basis.cols() > 0 && defect > 1e-8 {
            return Err(Error::Shape(format!(
                "basis columns are not orthonormal (defect {defect:e})"
            )));
        }
        Ok(Self {
            cutoff_index: basis.rows() - basis.cols() + 1,
            basis,
            sigma_small_max: 0.0,
            threshold: f64::INFINITY,
        })
    }
}

pub fn validate_eps1(eps1: f64) -> Result<()> {
    if !(eps1 > 0.0 && eps1 <= 1.0) {
        return Err(Error::Config(format!("eps1 must lie in (0, 1], got {eps1}")));
    }
    Ok(())
}

/// Keeps eigenvectors `j..d` where `j` is the first index with
/// `σ_j ≤ eps1·frob`. No such index gives an empty basis.
pub fn select_null_basis(dec: &SpectralDecomposition, eps1: f64, frob: f64) -> Result<NullBasis> {
    validate_eps1(eps1)?;
    if !(frob >= 0.0) || !frob.is_finite() {
        return Err(Error::Config(format!(
            "Frobenius norm must be finite and non-negative, got {frob}"
        )));
    }
    let energy: f64 = dec.eigenvalues.iter().sum();
    let frob_sq = frob * frob;
    if (frob_sq - energy).abs() > 1e-6 * frob_sq.max(energy) {
        return Err(Error::Config(format!(
            "Frobenius norm {frob} inconsistent with eigenvalue mass {energy}"
        )));
    }

    let threshold = eps1 * frob;
    let sigmas = dec.singular_values();
    let d = sigmas.len();
    let start = sigmas.iter().position(|&s| s <= threshold).unwrap_or(d);
    let sigma_small_max = sigmas.get(start).copied().unwrap_or(0.0);
    debug_assert!(sigma_small_max <= threshold || start == d);

    Ok(NullBasis {
        basis: dec.eigenvectors.columns(start, d),
        cutoff_index: start + 1,
        sigma_small_max,
        threshold,
    })
}

/// Smallest leading block of eigenvectors carrying at least
/// `energy_threshold` of the eigenvalue mass. A threshold of 1 keeps every
/// eigenvector, including those of zero eigenvalues.
pub fn select_dominant_basis(dec: &SpectralDecomposition, energy_threshold: f64) -> Result<Matrix> {
    if !(0.0..=1.0).contains(&energy_threshold) {
        return Err(Error::Config(format!(
            "energy threshold must lie in [0, 1], got {energy_threshold}"
        )));
    }
    let total: f64 = dec.eigenvalues.iter().sum();
    let d = dec.dim();
    let mut k = 0;
    let mut mass = 0.0;
    if energy_threshold >= 1.0 {
        k = d;
    } else if total > 0.0 {
        while k < d && mass < energy_threshold * total {
            mass += dec.eigenvalues[k];
            k += 1;
        }
    }
    Ok(dec.eigenvectors.columns(0, k))
}
