mod common;

use common::{from_na, to_na};
use ness::linalg::{l2, Matrix};
use ness::spectral::{self, CovarianceAccumulator};
use ness::tasks::{self, generate, Part, SuiteKind, SuiteSpec, TaskDataset};
use proptest::prelude::*;

fn spec(kind: SuiteKind, seed: u64) -> SuiteSpec {
    SuiteSpec::preset(kind, seed)
}

/// Least-squares linear classifier on one-hot targets (with intercept),
/// solved by nalgebra's SVD.
fn linear_fit_accuracy(train: &TaskDataset) -> f64 {
    let n = train.len();
    let d = train.dim();
    let k = train.n_classes;
    let xa = Matrix::from_fn(n, d + 1, |r, c| if c < d { train.x[(r, c)] } else { 1.0 });
    let t = Matrix::from_fn(n, k, |r, c| if train.y[r] == c { 1.0 } else { 0.0 });
    let w = to_na(&xa).svd(true, true).solve(&to_na(&t), 1e-12).unwrap();
    let pred = xa.matmul(&from_na(&w)).unwrap();
    let correct = (0..n)
        .filter(|&r| {
            let row = pred.row(r);
            let best = (0..k).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            best == train.y[r]
        })
        .count();
    100.0 * correct as f64 / n as f64
}

fn class_means(task: &TaskDataset) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; task.dim()]; task.n_classes];
    let mut counts = vec![0usize; task.n_classes];
    for (r, &y) in task.y.iter().enumerate() {
        counts[y] += 1;
        for (s, v) in sums[y].iter_mut().zip(task.x.row(r)) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|v| *v /= c as f64);
    }
    sums
}

fn nearest_accuracy(centers: &[Vec<f64>], x: &Matrix, y: &[usize]) -> f64 {
    let correct = (0..x.rows())
        .filter(|&r| {
            let best = (0..centers.len())
                .min_by(|&a, &b| {
                    let da: f64 = centers[a].iter().zip(x.row(r)).map(|(m, v)| (m - v) * (m - v)).sum();
                    let db: f64 = centers[b].iter().zip(x.row(r)).map(|(m, v)| (m - v) * (m - v)).sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            best == y[r]
        })
        .count();
    100.0 * correct as f64 / x.rows() as f64
}

#[test]
fn two_separated_classes_are_linearly_separable() {
    let s = SuiteSpec {
        classes: 2,
        samples: 2000,
        tasks: 2,
        ..spec(SuiteKind::RotatedGaussians, 3)
    };
    for t in generate(&s).unwrap() {
        assert!(linear_fit_accuracy(&t) >= 99.0);
    }
}

#[test]
fn zero_interference_tasks_share_a_distribution() {
    let s = SuiteSpec {
        interference: 0.0,
        samples: 3000,
        ..spec(SuiteKind::RotatedGaussians, 4)
    };
    let suite = generate(&s).unwrap();
    let centers = class_means(&suite[0]);
    let reference = nearest_accuracy(&centers, &suite[0].x, &suite[0].y);
    for t in &suite[1..] {
        let acc = nearest_accuracy(&centers, &t.x, &t.y);
        assert!((acc - reference).abs() < 3.0, "{acc} vs {reference}");
        for (m0, m) in centers.iter().zip(class_means(t)) {
            let diff: Vec<f64> = m0.iter().zip(&m).map(|(a, b)| a - b).collect();
            assert!(l2(&diff) < 0.1);
        }
    }
}

#[test]
fn rotation_moves_class_means() {
    let s = SuiteSpec {
        interference: 1.0,
        samples: 3000,
        ..spec(SuiteKind::RotatedGaussians, 5)
    };
    let suite = generate(&s).unwrap();
    let m0 = class_means(&suite[0]);
    let m1 = class_means(&suite[1]);
    // A quarter turn: same radius, orthogonal direction.
    for (a, b) in m0.iter().zip(&m1) {
        let cos = ness::linalg::dot(a, b) / (l2(a) * l2(b));
        assert!(cos.abs() < 0.1, "{cos}");
        assert!((l2(a) - tasks::ROTATED_RADIUS).abs() < 0.15);
    }
}

#[test]
fn permutations_preserve_norms_labels_and_spectrum() {
    let suite = generate(&spec(SuiteKind::PermutedFeatures, 6)).unwrap();
    let base = &suite[0];
    let base_dec = {
        let mut acc = CovarianceAccumulator::new(base.dim()).unwrap();
        acc.accumulate_rows(&base.x).unwrap();
        spectral::eigh(acc.covariance()).unwrap()
    };
    for t in &suite[1..] {
        assert_eq!(t.y, base.y);
        for r in 0..t.len() {
            assert!((l2(t.x.row(r)) - l2(base.x.row(r))).abs() < 1e-12);
        }
        let mut acc = CovarianceAccumulator::new(t.dim()).unwrap();
        acc.accumulate_rows(&t.x).unwrap();
        let dec = spectral::eigh(acc.covariance()).unwrap();
        for (a, b) in dec.eigenvalues().iter().zip(base_dec.eigenvalues()) {
            assert!((a - b).abs() <= 1e-10 * base_dec.eigenvalues()[0]);
        }
        assert_ne!(t.x, base.x);
    }
}

#[test]
fn identity_permutation_is_the_base_task() {
    let suite = generate(&spec(SuiteKind::PermutedFeatures, 7)).unwrap();
    let ident: Vec<usize> = (0..suite[0].dim()).collect();
    assert_eq!(tasks::permute_columns(&suite[0].x, &ident), suite[0].x);
}

#[test]
fn split_classes_prototype_ceiling() {
    let s = spec(SuiteKind::SplitClasses, 8);
    let (suite, protos) = tasks::split_classes_with_prototypes(&s).unwrap();
    for (i, a) in protos.iter().enumerate() {
        for b in &protos[i + 1..] {
            assert!(a.iter().all(|p| !b.contains(p)));
        }
    }
    for (t, task) in suite.iter().enumerate() {
        let (x, y) = task.part(Part::Test);
        let ceiling = nearest_accuracy(&protos[t], &x, &y);
        assert!(ceiling >= 80.0, "task {} ceiling {ceiling}", t + 1);
    }
}

#[test]
fn single_task_split_classes() {
    let s = SuiteSpec {
        tasks: 1,
        ..spec(SuiteKind::SplitClasses, 9)
    };
    let suite = generate(&s).unwrap();
    assert_eq!(suite.len(), 1);
    assert_eq!(suite[0].n_classes, 3);
}

#[test]
fn written_suites_reload_identically() {
    let dir = tempfile::tempdir().unwrap();
    for kind in [
        SuiteKind::RotatedGaussians,
        SuiteKind::PermutedFeatures,
        SuiteKind::SplitClasses,
    ] {
        let s = SuiteSpec {
            samples: 100,
            ..spec(kind, 10)
        };
        let suite = generate(&s).unwrap();
        let path = dir.path().join("suite.txt");
        tasks::write_suite_file(&path, &suite).unwrap();
        let file_spec = SuiteSpec {
            kind: SuiteKind::File,
            path: Some(path),
            ..s
        };
        assert_eq!(generate(&file_spec).unwrap(), suite);
    }
}

#[test]
fn splits_have_exact_counts() {
    let suite = generate(&spec(SuiteKind::RotatedGaussians, 11)).unwrap();
    for t in &suite {
        assert_eq!(t.range(Part::Train).len(), 540);
        assert_eq!(t.range(Part::Val).len(), 30);
        assert_eq!(t.range(Part::Test).len(), 30);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generators_are_pure_and_finite(seed in any::<u64>(), kind in 0usize..3, interference in 0.0f64..=1.0) {
        let kind = [SuiteKind::RotatedGaussians, SuiteKind::PermutedFeatures, SuiteKind::SplitClasses][kind];
        let s = SuiteSpec { tasks: 3, dim: 6, samples: 60, interference, ..spec(kind, seed) };
        let a = generate(&s).unwrap();
        let b = generate(&s).unwrap();
        prop_assert_eq!(&a, &b);
        for t in &a {
            prop_assert!(t.x.is_finite());
            prop_assert!(t.y.iter().all(|&l| l < t.n_classes));
            let mut counts = vec![0usize; t.n_classes];
            t.y.iter().for_each(|&l| counts[l] += 1);
            prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        }
    }
}
