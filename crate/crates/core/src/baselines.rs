//! Comparison methods: unconstrained sequential fine-tuning, and gradient
//! projection memory (GPM), which removes from every layer gradient its
//! component in the dominant subspace of previous inputs.
//!
//! Both run through the same training engine as NESS
//! ([`crate::harness::train_sequence`]); this module holds the projection
//! machinery and thin entry points that pin the method.

use crate::error::{Error, Result};
use crate::harness::{train_sequence, Method, TrainSettings, TrainingOutcome};
use crate::linalg::Matrix;
use crate::network::NetworkSpec;
use crate::spectral::{self, CovarianceAccumulator};
use crate::tasks::TaskDataset;

/// Per-layer orthonormal bases of the input directions to protect.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMemory {
    pub bases: Vec<Matrix>,
    pub energy_threshold: f64,
}

impl ProjectionMemory {
    /// For each accumulator, the smallest leading block of eigenvectors that
    /// carries `energy_threshold` of the input energy.
    pub fn from_accumulators(accumulators: &[CovarianceAccumulator], energy_threshold: f64) -> Result<Self> {
        let bases = accumulators
            .iter()
            .map(|acc| {
                if acc.is_empty() {
                    return Ok(Matrix::zeros(acc.dim(), 0));
                }
                let dec = spectral::eigh(acc.covariance())?;
                spectral::select_dominant_basis(&dec, energy_threshold)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            bases,
            energy_threshold,
        })
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.bases.iter().map(Matrix::cols).collect()
    }
}

/// `g − B·Bᵀ·g`: the part of `g` (rows indexed by input directions)
/// orthogonal to the span of the orthonormal columns of `b`.
pub fn project_gradient(g: &Matrix, b: &Matrix) -> Result<Matrix> {
    if b.rows() != g.rows() {
        return Err(Error::Shape(format!(
            "memory basis has {} rows, gradient has {}",
            b.rows(),
            g.rows()
        )));
    }
    if b.cols() == 0 {
        return Ok(g.clone());
    }
    if b.cols() == b.rows() {
        // A square orthonormal basis spans everything.
        return Ok(Matrix::zeros(g.rows(), g.cols()));
    }
    let coeffs = b.t_matmul(g)?;
    g.sub(&b.matmul(&coeffs)?)
}

/// Sequential fine-tuning of every parameter on every task.
pub fn train_naive(
    spec: &NetworkSpec,
    tasks: &[TaskDataset],
    settings: &TrainSettings,
    seed: u64,
) -> Result<TrainingOutcome> {
    let settings = TrainSettings {
        method: Method::Naive,
        ..settings.clone()
    };
    train_sequence(spec, tasks, &settings, seed)
}

/// GPM: task 1 unconstrained, later tasks with projected layer gradients.
pub fn train_gpm(
    spec: &NetworkSpec,
    tasks: &[TaskDataset],
    settings: &TrainSettings,
    energy_threshold: f64,
    seed: u64,
) -> Result<TrainingOutcome> {
    let settings = TrainSettings {
        method: Method::Gpm,
        energy_threshold: Some(energy_threshold),
        ..settings.clone()
    };
    train_sequence(spec, tasks, &settings, seed)
}
