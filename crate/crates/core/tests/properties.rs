use dsfl_core::linalg::{invert_spd, max_eigenvalue};
use dsfl_core::metrics::auc_with_ties;
use dsfl_core::stats::chi2_sf;
use dsfl_core::{
    a_optimal_score, allocate_atilde, combine, select_random, CandidatePool, ConfidenceEllipsoid, ExhaustionPolicy,
    Matrix, SiteResult, TieRule,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `BᵀB + I` from a flat `p × p` draw.
fn spd(p: usize, b: &[f64]) -> Matrix<f64> {
    let mut m = Matrix::identity(p);
    for i in 0..p {
        for j in 0..p {
            m[(i, j)] += (0..p).map(|k| b[k * p + i] * b[k * p + j]).sum::<f64>();
        }
    }
    m
}

fn site_result(n: usize, theta: Vec<f64>, block: Matrix<f64>) -> SiteResult<f64> {
    SiteResult {
        stopping_time: n,
        beta: theta.clone(),
        theta,
        mu: max_eigenvalue(&block.scale(n as f64)),
        info_common: block,
        criterion_value: 0.8,
        criterion_variance: 1e-4,
        exhausted: false,
        recruited: (0..n).collect(),
        trace: Vec::new(),
        fit_failures: 0,
        sampler_fallbacks: 0,
    }
}

fn brute_auc(scores: &[f64], labels: &[f64], ties: TieRule) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &s1) in scores.iter().enumerate() {
        if labels[i] != 1.0 {
            continue;
        }
        for (j, &s0) in scores.iter().enumerate() {
            if labels[j] != 0.0 {
                continue;
            }
            pairs += 1.0;
            num += match ties {
                TieRule::Inclusive => f64::from(u8::from(s1 >= s0)),
                TieRule::Half if s1 == s0 => 0.5,
                TieRule::Half => f64::from(u8::from(s1 > s0)),
            };
        }
    }
    num / pairs
}

proptest! {
    #[test]
    fn rank_one_score_matches_reinversion(
        p in 2usize..6,
        b in prop::collection::vec(-2.0f64..2.0, 36),
        x in prop::collection::vec(-3.0f64..3.0, 6),
        c in 0.01f64..5.0,
    ) {
        let a = spd(p, &b[..p * p]);
        let x = &x[..p];
        let a_inv = invert_spd(&a).matrix;
        let fast = a_optimal_score(&a_inv, x, c);
        let mut updated = a.clone();
        for i in 0..p {
            for j in 0..p {
                updated[(i, j)] += c * x[i] * x[j];
            }
        }
        let slow = invert_spd(&updated).matrix.trace();
        prop_assert!((fast - slow).abs() <= 1e-9 * slow.abs());
    }

    #[test]
    fn combined_weights_sum_to_one(ns in prop::collection::vec(1usize..5000, 1..8)) {
        let results: Vec<_> = ns
            .iter()
            .map(|&n| site_result(n, vec![1.0, 2.0], Matrix::identity(2)))
            .collect();
        let c = combine(&results, ExhaustionPolicy::Abort).unwrap();
        prop_assert_eq!(c.n_hat, ns.iter().sum::<usize>());
        prop_assert!((c.rho.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(c.rho.iter().all(|&r| r > 0.0));
    }

    #[test]
    fn allocation_preserves_total(
        weights in prop::collection::vec(0.01f64..100.0, 1..12),
        a_sq in 0.5f64..30.0,
    ) {
        let shares = allocate_atilde(weights.len(), a_sq, Some(&weights)).unwrap();
        prop_assert!((shares.iter().sum::<f64>() - a_sq).abs() <= 1e-12 * a_sq);
        let total: f64 = weights.iter().sum();
        for (s, w) in shares.iter().zip(&weights) {
            prop_assert!((s - a_sq * w / total).abs() <= 1e-9 * a_sq);
        }
    }

    #[test]
    fn membership_is_rotation_invariant(
        b in prop::collection::vec(-2.0f64..2.0, 4),
        center in prop::collection::vec(-5.0f64..5.0, 2),
        z in prop::collection::vec(-5.0f64..5.0, 2),
        angle in 0.0f64..std::f64::consts::TAU,
        n in 50.0f64..5000.0,
        d1 in 0.05f64..1.0,
    ) {
        let shape = spd(2, &b).scale(1.0 / n);
        let (s, c) = angle.sin_cos();
        let q = Matrix::from_rows(&[[c, -s], [s, c]]);
        let rot = |v: &[f64]| q.mul_vec(v).unwrap();
        let rotated_shape = q.matmul(&shape).unwrap().matmul(&q.transpose()).unwrap().symmetrized();
        let e = ConfidenceEllipsoid::new(center.clone(), shape, n, d1).unwrap();
        let r = ConfidenceEllipsoid::new(rot(&center), rotated_shape, n, d1).unwrap();
        let (s1, s2) = (e.statistic(&z).unwrap(), r.statistic(&rot(&z)).unwrap());
        prop_assert!((s1 - s2).abs() <= 1e-8 * (1.0 + s1.abs()));
        // skip points within rounding of the boundary
        let bound = n * d1 * d1 / e.mu;
        if (s1 - bound).abs() > 1e-7 * bound {
            prop_assert_eq!(e.contains(&z).unwrap(), r.contains(&rot(&z)).unwrap());
        }
    }

    #[test]
    fn max_axis_is_twice_d1(
        p in 1usize..5,
        b in prop::collection::vec(-2.0f64..2.0, 16),
        n in 10.0f64..1e5,
        d1 in 0.01f64..2.0,
    ) {
        let e = ConfidenceEllipsoid::new(vec![0.0; p], spd(p, &b[..p * p]), n, d1).unwrap();
        prop_assert!((e.max_axis_length() - 2.0 * d1).abs() <= 1e-8);
    }

    #[test]
    fn fast_auc_matches_double_loop(
        scores in prop::collection::vec(0u8..12, 2..80),
        labels in prop::collection::vec(any::<bool>(), 80),
    ) {
        let scores: Vec<f64> = scores.iter().map(|&s| f64::from(s) / 4.0).collect();
        let mut labels: Vec<f64> = labels[..scores.len()].iter().map(|&l| f64::from(u8::from(l))).collect();
        labels[0] = 1.0;
        labels[1] = 0.0;
        for ties in [TieRule::Inclusive, TieRule::Half] {
            let fast: f64 = auc_with_ties(&scores, &labels, ties).unwrap();
            prop_assert_eq!(fast, brute_auc(&scores, &labels, ties));
        }
    }
}

#[test]
fn random_selection_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut counts = [0u64; 10];
    let draws = 100_000;
    for _ in 0..draws {
        let mut pool = CandidatePool::new(10);
        counts[select_random(&mut pool, &mut rng).unwrap()] += 1;
    }
    let expected = draws as f64 / 10.0;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    assert!(chi2_sf(9.0, stat) > 0.01, "chi-square {stat}, counts {counts:?}");
}

#[test]
fn random_selection_never_repeats() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut pool = CandidatePool::new(25);
    let mut seen: Vec<usize> = (0..25).map(|_| select_random(&mut pool, &mut rng).unwrap()).collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..25).collect::<Vec<_>>());
    assert!(select_random(&mut pool, &mut rng).is_err());
}
