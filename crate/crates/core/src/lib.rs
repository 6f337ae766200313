//! Continual learning with null-space adapters.
//!
//! Each task after the first adapts a layer as `W + U·V`, where `U` is a
//! frozen orthonormal basis of the directions in which earlier tasks' layer
//! inputs carry almost no energy and `V` is trained. Because earlier inputs
//! barely touch `span(U)`, their outputs barely move.
//!
//! Modules, bottom up: [`linalg`] and [`rng`] utilities, [`spectral`]
//! (covariance accumulation, eigendecomposition, basis selection),
//! [`network`] (dense/conv body, per-task heads, backprop), [`adapter`],
//! [`optim`], [`tasks`] (synthetic suites and the suite file format),
//! [`baselines`] (naive fine-tuning and gradient projection) and
//! [`harness`] (training loop, metrics, multi-seed runs, reports).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapter;
pub mod baselines;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod network;
pub mod optim;
pub mod rng;
pub mod spectral;
pub mod tasks;

pub use error::{Error, ErrorClass, Result};
pub use linalg::Matrix;
