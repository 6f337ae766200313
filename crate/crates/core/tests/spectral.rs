mod common;

use common::{graded_rows, low_rank_rows, random_matrix, to_na};
use ness::linalg::{orthonormality_defect, Matrix};
use ness::rng::SeededRng;
use ness::spectral::{self, CovarianceAccumulator};
use proptest::prelude::*;

fn accumulate(x: &Matrix) -> CovarianceAccumulator {
    let mut acc = CovarianceAccumulator::new(x.cols()).unwrap();
    acc.accumulate_rows(x).unwrap();
    acc
}

#[test]
fn singular_values_match_svd() {
    let mut rng = SeededRng::new(11);
    for _ in 0..50 {
        let d = 1 + rng.below(16);
        let n = d + 2 + rng.below(64 - d - 1);
        let scale = 1.0 + 3.0 * rng.uniform();
        let x = random_matrix(&mut rng, n, d, scale);
        let dec = spectral::eigh(accumulate(&x).covariance()).unwrap();
        let mut svd: Vec<f64> = to_na(&x).singular_values().iter().copied().collect();
        svd.sort_by(|a, b| b.total_cmp(a));
        for (s, t) in dec.singular_values().iter().zip(&svd) {
            assert!((s - t).abs() <= 1e-8 * t, "{s} vs {t}");
        }
    }
}

#[test]
fn rank_deficient_singular_values() {
    let mut rng = SeededRng::new(12);
    for _ in 0..20 {
        let d = 3 + rng.below(12);
        let rank = 1 + rng.below(d - 1);
        let x = low_rank_rows(&mut rng, 40, d, rank);
        let dec = spectral::eigh(accumulate(&x).covariance()).unwrap();
        let sv = dec.singular_values();
        let mut svd: Vec<f64> = to_na(&x).singular_values().iter().copied().collect();
        svd.sort_by(|a, b| b.total_cmp(a));
        for (s, t) in sv.iter().zip(&svd).take(rank) {
            assert!((s - t).abs() <= 1e-8 * t);
        }
        // The zero block comes back near zero (square root of round-off).
        for s in &sv[rank..] {
            assert!(*s <= 1e-6 * sv[0], "{s}");
        }
        let nb =
            spectral::select_null_basis(&dec, 1e-4, spectral::frobenius_from_accumulator(&accumulate(&x))).unwrap();
        assert_eq!(nb.rank(), d - rank);
        // Previous inputs have no component in the null basis.
        assert!(x.matmul(nb.basis()).unwrap().max_abs() <= 1e-6 * x.max_abs());
    }
}

#[test]
fn eigenvectors_reconstruct() {
    let mut rng = SeededRng::new(13);
    for _ in 0..50 {
        let d = 1 + rng.below(16);
        let n = 1 + rng.below(64);
        let x = random_matrix(&mut rng, n, d, 1.0);
        let c = accumulate(&x).covariance().clone();
        let dec = spectral::eigh(&c).unwrap();
        let lmax = dec.eigenvalues()[0];
        assert!(dec.reconstruct().max_abs_diff(&c) <= 1e-8 * lmax.max(f64::MIN_POSITIVE));
        assert!(orthonormality_defect(dec.eigenvectors()) < 1e-10);
    }
}

#[test]
fn eigenvalues_match_nalgebra_symmetric_solver() {
    let mut rng = SeededRng::new(14);
    for _ in 0..20 {
        let d = 2 + rng.below(10);
        let x = graded_rows(&mut rng, 30, d, 1e-3);
        let c = accumulate(&x).covariance().clone();
        let mut oracle: Vec<f64> = to_na(&c).symmetric_eigenvalues().iter().copied().collect();
        oracle.sort_by(|a, b| b.total_cmp(a));
        let dec = spectral::eigh(&c).unwrap();
        for (a, b) in dec.eigenvalues().iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-10 * oracle[0]);
        }
    }
}

#[test]
fn non_symmetric_and_non_finite_rejected() {
    let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
    assert!(spectral::eigh(&m).is_err());
    let m = Matrix::from_fn(2, 2, |_, _| f64::NAN);
    assert!(spectral::eigh(&m).is_err());
    assert!(spectral::eigh(&Matrix::zeros(2, 3)).is_err());
}

#[test]
fn eps1_must_be_in_unit_interval() {
    let dec = spectral::eigh(&Matrix::identity(2)).unwrap();
    for bad in [0.0, -1.0, 1.5, f64::NAN] {
        assert!(matches!(
            spectral::select_null_basis(&dec, bad, 2f64.sqrt()),
            Err(ness::Error::Config(_))
        ));
    }
}

fn rows_strategy() -> impl Strategy<Value = (usize, Vec<Vec<f64>>)> {
    (1usize..8).prop_flat_map(|d| {
        (
            Just(d),
            prop::collection::vec(prop::collection::vec(-5.0f64..5.0, d), 1..30),
        )
    })
}

proptest! {
    #[test]
    fn accumulator_equals_gram((d, rows) in rows_strategy()) {
        let x = Matrix::from_rows(&rows).unwrap();
        let acc = accumulate(&x);
        let gram = x.t_matmul(&x).unwrap();
        prop_assert!(acc.covariance().max_abs_diff(&gram) <= 1e-12 * gram.max_abs().max(1.0));
        prop_assert!((acc.frob_sq() - x.frobenius_sq()).abs() <= 1e-12 * x.frobenius_sq().max(1.0));
        prop_assert_eq!(acc.dim(), d);
    }

    #[test]
    fn split_accumulation_matches((_, rows) in rows_strategy(), cut in 0usize..30) {
        let x = Matrix::from_rows(&rows).unwrap();
        let cut = cut.min(rows.len());
        let mut a = CovarianceAccumulator::new(x.cols()).unwrap();
        let mut b = CovarianceAccumulator::new(x.cols()).unwrap();
        for (i, r) in rows.iter().enumerate() {
            if i < cut { a.accumulate(r).unwrap() } else { b.accumulate(r).unwrap() }
        }
        a.absorb(&b).unwrap();
        let whole = accumulate(&x);
        prop_assert!(a.covariance().max_abs_diff(whole.covariance()) <= 1e-10 * whole.covariance().max_abs().max(1.0));
        prop_assert_eq!(a.sample_count(), rows.len());
    }

    #[test]
    fn null_rank_monotone_in_eps1((_, rows) in rows_strategy(), e1 in 1e-4f64..1.0, e2 in 1e-4f64..1.0) {
        let x = Matrix::from_rows(&rows).unwrap();
        let acc = accumulate(&x);
        let dec = spectral::eigh(acc.covariance()).unwrap();
        let frob = spectral::frobenius_from_accumulator(&acc);
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let a = spectral::select_null_basis(&dec, lo, frob).unwrap();
        let b = spectral::select_null_basis(&dec, hi, frob).unwrap();
        prop_assert!(a.rank() <= b.rank());
        prop_assert!(a.sigma_small_max() <= a.threshold() || a.is_empty());
        prop_assert!(orthonormality_defect(b.basis()) < 1e-10);
        prop_assert_eq!(b.cutoff_index() + b.rank(), x.cols() + 1);
    }

    #[test]
    fn eigenvalues_descending_and_nonnegative((_, rows) in rows_strategy()) {
        let x = Matrix::from_rows(&rows).unwrap();
        let dec = spectral::eigh(accumulate(&x).covariance()).unwrap();
        let ev = dec.eigenvalues();
        prop_assert!(ev.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(ev.iter().all(|&l| l >= 0.0));
    }

    #[test]
    fn dominant_and_null_bases_from_one_decomposition_are_orthogonal((_, rows) in rows_strategy(), eps1 in 1e-3f64..1.0) {
        let x = Matrix::from_rows(&rows).unwrap();
        let acc = accumulate(&x);
        let dec = spectral::eigh(acc.covariance()).unwrap();
        let nb = spectral::select_null_basis(&dec, eps1, spectral::frobenius_from_accumulator(&acc)).unwrap();
        let b = dec.eigenvectors().columns(0, nb.cutoff_index() - 1);
        if b.cols() > 0 && nb.rank() > 0 {
            prop_assert!(b.t_matmul(nb.basis()).unwrap().max_abs() < 1e-10);
        }
        prop_assert_eq!(b.cols() + nb.rank(), x.cols());
    }
}
