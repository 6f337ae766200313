//! Seeded synthetic task sequences and the plain-text suite format.
//!
//! Every generator is a pure function of its [`SuiteSpec`]. Random draws go
//! through [`SeededRng`] in the order documented on each generator, so the
//! suites can be reproduced bit-for-bit elsewhere. Streams used here:
//! `derived(seed, Data, 0)` for shared structure (plane, means, prototypes)
//! and `derived(seed, Data, t)` for the samples of task `t` (1-based).

mod format;

use std::f64::consts::{FRAC_PI_2, TAU};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{SeededRng, StreamTag};

pub use format::{load_file_suite, parse_suite, write_suite, write_suite_file};

/// Fractions of each task held out for validation and test.
pub const VAL_FRACTION: f64 = 0.05;
pub const TEST_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuiteKind {
    RotatedGaussians,
    PermutedFeatures,
    SplitClasses,
    File,
}

impl std::str::FromStr for SuiteKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rotated-gaussians" => Ok(SuiteKind::RotatedGaussians),
            "permuted-features" => Ok(SuiteKind::PermutedFeatures),
            "split-classes" => Ok(SuiteKind::SplitClasses),
            "file" => Ok(SuiteKind::File),
            other => Err(Error::Config(format!("unknown suite kind '{other}'"))),
        }
    }
}

fn default_tasks() -> usize {
    5
}
fn default_dim() -> usize {
    32
}
fn default_classes() -> usize {
    3
}
fn default_samples() -> usize {
    600
}
fn default_interference() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSpec {
    pub kind: SuiteKind,
    /// Number of tasks.
    #[serde(default = "default_tasks")]
    pub tasks: usize,
    /// Input dimension.
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Classes per task.
    #[serde(default = "default_classes")]
    pub classes: usize,
    /// Samples per task, before splitting.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Replaced by the run seed when a suite is generated inside a run.
    #[serde(default)]
    pub seed: u64,
    /// 0 = identical tasks, 1 = maximal conflict (rotated-gaussians only).
    #[serde(default = "default_interference")]
    pub interference: f64,
    /// Source file for `kind = "file"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl SuiteSpec {
    /// The desk-scale preset: 5 tasks, 32 dimensions, 3 classes, 600 samples.
    pub fn preset(kind: SuiteKind, seed: u64) -> Self {
        Self {
            kind,
            tasks: default_tasks(),
            dim: default_dim(),
            classes: default_classes(),
            samples: default_samples(),
            seed,
            interference: default_interference(),
            path: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == SuiteKind::File {
            return match self.path {
                Some(_) => Ok(()),
                None => Err(Error::Config("file suite needs a path".into())),
            };
        }
        let fail = |m: String| Err(Error::Config(m));
        if self.tasks == 0 {
            return fail("suite needs at least one task".into());
        }
        if self.classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.dim < 2 || self.dim < self.classes {
            return fail(format!(
                "dimension {} must be at least 2 and at least the class count {}",
                self.dim, self.classes
            ));
        }
        let (_, val, test) = split_counts(self.samples);
        if val == 0 || test == 0 || self.samples < self.classes {
            return fail(format!(
                "{} samples per task leave an empty validation or test split",
                self.samples
            ));
        }
        if !(0.0..=1.0).contains(&self.interference) {
            return fail(format!("interference must lie in [0, 1], got {}", self.interference));
        }
        Ok(())
    }
}

/// `(train, val, test)` sizes for `n` samples.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let val = (n as f64 * VAL_FRACTION).floor() as usize;
    let test = (n as f64 * TEST_FRACTION).floor() as usize;
    (n.saturating_sub(val + test), val, test)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Train,
    Val,
    Test,
}

/// One task: rows of `x` are samples, ordered train, then validation, then
/// test.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    /// 1-based task number.
    pub task_id: usize,
    pub n_classes: usize,
    pub x: Matrix,
    pub y: Vec<usize>,
}

impl TaskDataset {
    pub fn new(task_id: usize, n_classes: usize, x: Matrix, y: Vec<usize>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::Shape(format!("{} rows but {} labels", x.rows(), y.len())));
        }
        if let Some(&label) = y.iter().find(|&&l| l >= n_classes) {
            return Err(Error::LabelRange {
                label,
                classes: n_classes,
            });
        }
        Ok(Self {
            task_id,
            n_classes,
            x,
            y,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn range(&self, part: Part) -> std::ops::Range<usize> {
        let (train, val, _) = split_counts(self.len());
        match part {
            Part::Train => 0..train,
            Part::Val => train..train + val,
            Part::Test => train + val..self.len(),
        }
    }

    pub fn part(&self, part: Part) -> (Matrix, Vec<usize>) {
        let idx: Vec<usize> = self.range(part).collect();
        (self.x.select_rows(&idx), idx.iter().map(|&i| self.y[i]).collect())
    }
}

/// Generates (or loads) the suite described by `spec`.
pub fn generate(spec: &SuiteSpec) -> Result<Vec<TaskDataset>> {
    spec.validate()?;
    match spec.kind {
        SuiteKind::RotatedGaussians => gen_rotated_gaussians(spec),
        SuiteKind::PermutedFeatures => gen_permuted_features(spec),
        SuiteKind::SplitClasses => gen_split_classes(spec),
        SuiteKind::File => load_file_suite(spec.path.as_ref().expect("validated")),
    }
}

/// Radius of the class means in the rotation plane.
pub const ROTATED_RADIUS: f64 = 2.0;
/// Noise inside the plane.
pub const ROTATED_PLANE_NOISE: f64 = 0.5;
/// Isotropic noise in all `d` dimensions.
pub const ROTATED_AMBIENT_NOISE: f64 = 0.1;

fn normal_vector(rng: &mut SeededRng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.normal()).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = crate::linalg::l2(&v);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Labels `i mod k` for `i < n`, in the order of a seeded permutation.
fn balanced_labels(rng: &mut SeededRng, n: usize, k: usize) -> Vec<usize> {
    rng.permutation(n).into_iter().map(|i| i % k).collect()
}

/// Class clusters on a circle in a 2-plane shared by all tasks; task `t`
/// (0-based) rotates the circle by `t·θ` with `θ = interference·90°`.
///
/// Draw order: plane vectors `a` then `b` (d normals each, `b`
/// orthogonalized against `a`) from the shared stream; per task, the label
/// permutation, then per sample `d` ambient normals followed by 2 in-plane
/// normals.
pub fn gen_rotated_gaussians(spec: &SuiteSpec) -> Result<Vec<TaskDataset>> {
    spec.validate()?;
    let d = spec.dim;
    let k = spec.classes;
    let mut shared = SeededRng::derived(spec.seed, StreamTag::Data, 0);
    let a = unit(normal_vector(&mut shared, d));
    let mut b = normal_vector(&mut shared, d);
    let ab = crate::linalg::dot(&a, &b);
    b.iter_mut().zip(&a).for_each(|(bi, ai)| *bi -= ab * ai);
    let b = unit(b);

    let theta = spec.interference * FRAC_PI_2;
    (0..spec.tasks)
        .map(|t| {
            let mut rng = SeededRng::derived(spec.seed, StreamTag::Data, t as u64 + 1);
            let labels = balanced_labels(&mut rng, spec.samples, k);
            let means: Vec<Vec<f64>> = (0..k)
                .map(|c| {
                    let phi = TAU * c as f64 / k as f64 + t as f64 * theta;
                    (0..d)
                        .map(|j| ROTATED_RADIUS * (phi.cos() * a[j] + phi.sin() * b[j]))
                        .collect()
                })
                .collect();
            let mut x = Matrix::zeros(spec.samples, d);
            for (i, &y) in labels.iter().enumerate() {
                let ambient = normal_vector(&mut rng, d);
                let (u, v) = (rng.normal(), rng.normal());
                let row = x.row_mut(i);
                for j in 0..d {
                    row[j] =
                        means[y][j] + ROTATED_AMBIENT_NOISE * ambient[j] + ROTATED_PLANE_NOISE * (u * a[j] + v * b[j]);
                }
            }
            TaskDataset::new(t + 1, k, x, labels)
        })
        .collect()
}

/// Scale of the base-task class means (per coordinate).
pub const PERMUTED_MEAN_SCALE: f64 = 0.5;

/// One base task (Gaussian classes with random means, unit noise) whose
/// features are permuted per task; task 1 is the identity permutation.
///
/// Draw order: `k` mean vectors from the shared stream, then the label
/// permutation and `d` normals per sample from stream 1. Task `t ≥ 2` uses
/// `derived(seed, Permutation, t).permutation(d)`, with
/// `x_t[j] = x_base[π_t[j]]`.
pub fn gen_permuted_features(spec: &SuiteSpec) -> Result<Vec<TaskDataset>> {
    spec.validate()?;
    let d = spec.dim;
    let k = spec.classes;
    let mut shared = SeededRng::derived(spec.seed, StreamTag::Data, 0);
    let means: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            normal_vector(&mut shared, d)
                .into_iter()
                .map(|v| PERMUTED_MEAN_SCALE * v)
                .collect()
        })
        .collect();
    let mut rng = SeededRng::derived(spec.seed, StreamTag::Data, 1);
    let labels = balanced_labels(&mut rng, spec.samples, k);
    let mut base = Matrix::zeros(spec.samples, d);
    for (i, &y) in labels.iter().enumerate() {
        let row = base.row_mut(i);
        for j in 0..d {
            row[j] = means[y][j] + rng.normal();
        }
    }
    (0..spec.tasks)
        .map(|t| {
            let perm: Vec<usize> = if t == 0 {
                (0..d).collect()
            } else {
                SeededRng::derived(spec.seed, StreamTag::Permutation, t as u64 + 1).permutation(d)
            };
            TaskDataset::new(t + 1, k, permute_columns(&base, &perm), labels.clone())
        })
        .collect()
}

pub fn permute_columns(x: &Matrix, perm: &[usize]) -> Matrix {
    Matrix::from_fn(x.rows(), perm.len(), |r, c| x[(r, perm[c])])
}

/// Scale of the class prototypes (per coordinate).
pub const SPLIT_PROTOTYPE_SCALE: f64 = 0.6;

/// `T·k` class prototypes split into `T` disjoint groups of `k`; task `t`
/// classifies samples of its own group with local labels `0..k`.
///
/// Draw order: all prototypes (d normals each, task-major) from the shared
/// stream; per task the label permutation, then `d` normals per sample.
pub fn gen_split_classes(spec: &SuiteSpec) -> Result<Vec<TaskDataset>> {
    Ok(split_classes_with_prototypes(spec)?.0)
}

/// Class prototypes per task, one vector per class.
pub type Prototypes = Vec<Vec<Vec<f64>>>;

/// The split-classes suite together with each task's prototypes.
pub fn split_classes_with_prototypes(spec: &SuiteSpec) -> Result<(Vec<TaskDataset>, Prototypes)> {
    spec.validate()?;
    let d = spec.dim;
    let k = spec.classes;
    let mut shared = SeededRng::derived(spec.seed, StreamTag::Data, 0);
    let prototypes: Vec<Vec<Vec<f64>>> = (0..spec.tasks)
        .map(|_| {
            (0..k)
                .map(|_| {
                    normal_vector(&mut shared, d)
                        .into_iter()
                        .map(|v| SPLIT_PROTOTYPE_SCALE * v)
                        .collect()
                })
                .collect()
        })
        .collect();
    let tasks = (0..spec.tasks)
        .map(|t| {
            let mut rng = SeededRng::derived(spec.seed, StreamTag::Data, t as u64 + 1);
            let labels = balanced_labels(&mut rng, spec.samples, k);
            let mut x = Matrix::zeros(spec.samples, d);
            for (i, &y) in labels.iter().enumerate() {
                let row = x.row_mut(i);
                for j in 0..d {
                    row[j] = prototypes[t][y][j] + rng.normal();
                }
            }
            TaskDataset::new(t + 1, k, x, labels)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((tasks, prototypes))
}
