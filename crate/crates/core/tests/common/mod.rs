#![allow(dead_code)]

use nalgebra::DMatrix;
use ness::linalg::Matrix;
use ness::rng::SeededRng;

pub fn random_matrix(rng: &mut SeededRng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| scale * rng.normal())
}

/// `n` rows living in a random `rank`-dimensional subspace of `R^d`.
pub fn low_rank_rows(rng: &mut SeededRng, n: usize, d: usize, rank: usize) -> Matrix {
    let coeffs = random_matrix(rng, n, rank, 1.0);
    let basis = random_matrix(rng, rank, d, 1.0);
    coeffs.matmul(&basis).unwrap()
}

/// Rows whose singular values decay geometrically from 1 to `floor`.
pub fn graded_rows(rng: &mut SeededRng, n: usize, d: usize, floor: f64) -> Matrix {
    let z = random_matrix(rng, n, d, 1.0);
    let q = orthonormal(rng, d);
    let scaled = Matrix::from_fn(n, d, |r, c| {
        let t = if d > 1 { c as f64 / (d - 1) as f64 } else { 0.0 };
        z[(r, c)] * floor.powf(t)
    });
    scaled.matmul_t(&q).unwrap()
}

/// Random `d × d` orthogonal matrix (QR of a Gaussian matrix).
pub fn orthonormal(rng: &mut SeededRng, d: usize) -> Matrix {
    let g = to_na(&random_matrix(rng, d, d, 1.0));
    from_na(&g.qr().q())
}

pub fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub fn from_na(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)])
}

pub fn labels(rng: &mut SeededRng, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.below(classes)).collect()
}
