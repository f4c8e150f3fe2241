//! Brute-force equivalence checks of the fast paths. `selftest` runs them at
//! reduced size; the acceptance suite runs them at full size.

use dsfl_core::glm::logistic;
use dsfl_core::linalg::{invert_spd, Matrix};
use dsfl_core::metrics::{auc_with_ties, TieRule};
use dsfl_core::sampler::AOptimalContext;
use dsfl_core::sequential::precision_statistic;
use dsfl_core::{
    a_optimal_score, fit_mqle, quasi_score, select_a_optimal, CandidatePool, CommonSelector, Dataset64, FitOptions,
    GlmFamily,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy)]
pub struct OracleSizes {
    pub auc_instances: usize,
    pub score_trials: usize,
    pub selection_steps: usize,
    pub block_trials: usize,
    pub ols_trials: usize,
    pub gradient_trials: usize,
}

impl OracleSizes {
    pub fn full() -> Self {
        Self {
            auc_instances: 1000,
            score_trials: 1000,
            selection_steps: 100,
            block_trials: 200,
            ols_trials: 50,
            gradient_trials: 50,
        }
    }

    pub fn quick() -> Self {
        Self {
            auc_instances: 100,
            score_trials: 100,
            selection_steps: 30,
            block_trials: 20,
            ols_trials: 5,
            gradient_trials: 5,
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_spd(rng: &mut ChaCha8Rng, p: usize) -> Matrix<f64> {
    let g: Vec<f64> = (0..p * p).map(|_| normal(rng)).collect();
    let g = Matrix::from_vec(p, p, g).expect("square");
    let mut a = g.matmul(&g.transpose()).expect("square");
    for i in 0..p {
        a[(i, i)] += 0.5;
    }
    a
}

fn brute_auc(fitted: &[f64], labels: &[f64], ties: TieRule) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &v1) in fitted.iter().enumerate() {
        if labels[i] != 1.0 {
            continue;
        }
        for (k, &v0) in fitted.iter().enumerate() {
            if labels[k] != 0.0 {
                continue;
            }
            pairs += 1.0;
            num += if v1 > v0 {
                1.0
            } else if v1 == v0 {
                match ties {
                    TieRule::Inclusive => 1.0,
                    TieRule::Half => 0.5,
                }
            } else {
                0.0
            };
        }
    }
    num / pairs
}

pub fn check_auc(instances: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    for _ in 0..instances {
        let n = rng.random_range(2..80);
        // coarse rounding makes ties common
        let fitted: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 10.0).round() / 10.0).collect();
        let mut labels: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(0.4))).collect();
        labels[0] = 1.0;
        labels[1] = 0.0;
        for ties in [TieRule::Inclusive, TieRule::Half] {
            let fast = auc_with_ties(&fitted, &labels, ties).expect("both classes");
            if (fast - brute_auc(&fitted, &labels, ties)).abs() > 1e-12 {
                mismatches += 1;
            }
        }
    }
    CheckOutcome {
        name: "AUC fast path equals brute-force double loop",
        passed: mismatches == 0,
        detail: format!("{instances} instances, {mismatches} mismatches"),
    }
}

fn full_inversion_score(a: &Matrix<f64>, x: &[f64], c: f64) -> f64 {
    let p = x.len();
    let mut updated = a.clone();
    for i in 0..p {
        for j in 0..p {
            updated[(i, j)] += c * x[i] * x[j];
        }
    }
    invert_spd(&updated).matrix.trace()
}

pub fn check_rank_one(trials: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let p = rng.random_range(1..=8);
        let a = random_spd(&mut rng, p);
        let a_inv = invert_spd(&a).matrix;
        let x: Vec<f64> = (0..p).map(|_| normal(&mut rng)).collect();
        let c = rng.random_range(0.01..2.0);
        let fast = a_optimal_score(&a_inv, &x, c);
        let slow = full_inversion_score(&a, &x, c);
        worst = worst.max(((fast - slow) / slow).abs());
    }
    CheckOutcome {
        name: "rank-one A-optimal score equals full re-inversion",
        passed: worst <= 1e-9,
        detail: format!("{trials} SPD instances, max relative error {worst:.2e}"),
    }
}

pub fn check_selection(steps: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = 3;
    let n = steps + 50;
    let rows: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|_| (0.0, vec![1.0, normal(&mut rng), normal(&mut rng)]))
        .collect();
    let data = Dataset64::from_rows(rows).expect("finite rows");
    let beta = [0.3, -0.8, 0.5];
    let family = GlmFamily::Logistic;
    let mut a = Matrix::identity(p);
    let mut pool = CandidatePool::new(n);
    let mut agree = 0;
    for _ in 0..steps {
        let weight = |i: usize| {
            family
                .evaluate(dsfl_core::linalg::dot(data.x(i), &beta))
                .information_weight()
        };
        let mut brute: Option<(f64, usize)> = None;
        for &i in pool.inactive() {
            let s = full_inversion_score(&a, data.x(i), weight(i));
            if brute.is_none_or(|(bs, bi)| s < bs || (s == bs && i < bi)) {
                brute = Some((s, i));
            }
        }
        let a_inv = invert_spd(&a).matrix;
        let ctx = AOptimalContext {
            a_inv: &a_inv,
            beta: &beta,
            family: &family,
        };
        let pick = select_a_optimal::<f64, ChaCha8Rng>(&data, ctx, &mut pool, None).expect("nonempty pool");
        let (best_score, best) = brute.expect("nonempty pool");
        let picked_score = full_inversion_score(&a, data.x(pick), weight(pick));
        // equal up to rounding in the scores
        if pick == best || (picked_score - best_score).abs() <= 1e-12 * best_score {
            agree += 1;
        }
        let c = weight(pick);
        let x = data.x(pick);
        for i in 0..p {
            for j in 0..p {
                a[(i, j)] += c * x[i] * x[j];
            }
        }
    }
    CheckOutcome {
        name: "A-optimal selection equals exhaustive argmin",
        passed: agree == steps,
        detail: format!("{agree}/{steps} sequential steps agree"),
    }
}

pub fn check_common_block(trials: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let p = rng.random_range(3..=7);
        let sigma = random_spd(&mut rng, p);
        let sel = CommonSelector::new(vec![1, 2], p).expect("p ≥ 3");
        let fast = precision_statistic(&sigma, &sel, 1).expect("SPD").common_block;
        // Schur complement: (Σ_θθ − Σ_θη Σ_ηη⁻¹ Σ_ηθ)⁻¹
        let eta: Vec<usize> = (0..p).filter(|i| *i != 1 && *i != 2).collect();
        let s_tt = sigma.principal_submatrix(&[1, 2]).expect("in range");
        let s_ee_inv = invert_spd(&sigma.principal_submatrix(&eta).expect("in range")).matrix;
        let mut schur = s_tt.clone();
        for (a, &ta) in [1usize, 2].iter().enumerate() {
            for (b, &tb) in [1usize, 2].iter().enumerate() {
                let mut acc = 0.0;
                for (u, &eu) in eta.iter().enumerate() {
                    for (v, &ev) in eta.iter().enumerate() {
                        acc += sigma[(ta, eu)] * s_ee_inv[(u, v)] * sigma[(ev, tb)];
                    }
                }
                schur[(a, b)] -= acc;
            }
        }
        let slow = invert_spd(&schur).matrix;
        for i in 0..2 {
            for j in 0..2 {
                let scale = slow[(i, i)].abs().max(slow[(j, j)].abs());
                worst = worst.max((fast[(i, j)] - slow[(i, j)]).abs() / scale);
            }
        }
    }
    CheckOutcome {
        name: "common block of the inverse equals Schur-complement inverse",
        passed: worst <= 1e-9,
        detail: format!("{trials} SPD instances, max scaled error {worst:.2e}"),
    }
}

/// Least squares by modified Gram–Schmidt QR.
fn ols_qr(data: &Dataset64) -> Vec<f64> {
    let (n, p) = (data.n(), data.p());
    let mut q: Vec<Vec<f64>> = (0..p).map(|j| (0..n).map(|i| data.x(i)[j]).collect()).collect();
    let mut r = vec![vec![0.0; p]; p];
    for j in 0..p {
        for k in 0..j {
            let proj: f64 = q[k].iter().zip(&q[j]).map(|(a, b)| a * b).sum();
            r[k][j] = proj;
            let qk = q[k].clone();
            for (v, u) in q[j].iter_mut().zip(&qk) {
                *v -= proj * u;
            }
        }
        let norm = q[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        r[j][j] = norm;
        for v in &mut q[j] {
            *v /= norm;
        }
    }
    let qty: Vec<f64> = q
        .iter()
        .map(|col| col.iter().zip(data.responses()).map(|(a, b)| a * b).sum())
        .collect();
    let mut beta = vec![0.0; p];
    for j in (0..p).rev() {
        let tail: f64 = (j + 1..p).map(|k| r[j][k] * beta[k]).sum();
        beta[j] = (qty[j] - tail) / r[j][j];
    }
    beta
}

pub fn check_ols(trials: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let p = rng.random_range(2..=6);
        let n = rng.random_range(20..200);
        let truth: Vec<f64> = (0..p).map(|_| normal(&mut rng)).collect();
        let mut d = Dataset64::new(p);
        for _ in 0..n {
            let mut x = vec![1.0; p];
            for v in &mut x[1..] {
                *v = normal(&mut rng);
            }
            let y = dsfl_core::linalg::dot(&x, &truth) + normal(&mut rng);
            d.push(y, &x).expect("finite");
        }
        let fit = fit_mqle(&d, &GlmFamily::Gaussian { sigma2: 1.0 }, &FitOptions::default()).expect("full rank");
        for (a, b) in fit.beta.iter().zip(ols_qr(&d)) {
            worst = worst.max((a - b).abs());
        }
    }
    CheckOutcome {
        name: "linear-family MQLE equals QR least squares",
        passed: worst <= 1e-8,
        detail: format!("{trials} regressions, max abs difference {worst:.2e}"),
    }
}

fn log_likelihood(d: &Dataset64, beta: &[f64]) -> f64 {
    (0..d.n())
        .map(|i| {
            let eta = dsfl_core::linalg::dot(d.x(i), beta);
            let mu = logistic(eta);
            d.y(i) * mu.ln() + (1.0 - d.y(i)) * (1.0 - mu).ln()
        })
        .sum()
}

pub fn check_gradient(trials: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let p = rng.random_range(2..=5);
        let n = rng.random_range(10..60);
        let mut d = Dataset64::new(p);
        for _ in 0..n {
            let mut x = vec![1.0; p];
            for v in &mut x[1..] {
                *v = normal(&mut rng);
            }
            d.push(f64::from(rng.random_bool(0.5)), &x).expect("finite");
        }
        let beta: Vec<f64> = (0..p).map(|_| 0.5 * normal(&mut rng)).collect();
        let score = quasi_score(&d, &beta, &GlmFamily::Logistic).expect("dimensions");
        let h = 1e-6;
        for k in 0..p {
            let mut up = beta.clone();
            let mut down = beta.clone();
            up[k] += h;
            down[k] -= h;
            let fd = (log_likelihood(&d, &up) - log_likelihood(&d, &down)) / (2.0 * h);
            worst = worst.max((fd - score[k]).abs());
        }
    }
    CheckOutcome {
        name: "quasi-score equals finite-difference log-likelihood gradient",
        passed: worst <= 1e-5,
        detail: format!("{trials} instances, max abs difference {worst:.2e}"),
    }
}

pub fn run_oracles(sizes: OracleSizes, seed: u64) -> Vec<CheckOutcome> {
    vec![
        check_auc(sizes.auc_instances, seed),
        check_rank_one(sizes.score_trials, seed + 1),
        check_selection(sizes.selection_steps, seed + 2),
        check_common_block(sizes.block_trials, seed + 3),
        check_ols(sizes.ols_trials, seed + 4),
        check_gradient(sizes.gradient_trials, seed + 5),
    ]
}
