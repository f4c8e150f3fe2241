//! Cross-site combination: chi-square budget allocation, the random-weight
//! combiner, the combined confidence set and the large-sample diagnostics.

use rayon::prelude::*;

use crate::ellipsoid::ConfidenceEllipsoid;
use crate::error::{Error, Result};
use crate::glm::Dataset;
use crate::linalg::{max_eigenvalue, Cholesky, Matrix};
use crate::rng::{stream_rng, StreamPurpose};
use crate::scalar::{compensated_sum, Scalar};
use crate::sequential::{run_site, SiteConfig, SiteResult};
use crate::stats::chi2_quantile;

/// Splits `a_sq` into `m` positive shares, equally or in proportion to
/// `weights`. The shares sum to `a_sq` up to rounding of the last one.
pub fn allocate_atilde<T: Scalar>(m: usize, a_sq: T, weights: Option<&[T]>) -> Result<Vec<T>> {
    if m == 0 {
        return Err(Error::InvalidConfig("at least one site is required".into()));
    }
    if !(a_sq > T::zero()) {
        return Err(Error::InvalidConfig(format!("a² must be positive, got {a_sq}")));
    }
    let Some(w) = weights else {
        return Ok(vec![a_sq / T::from_count(m); m]);
    };
    if w.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: w.len(),
        });
    }
    if let Some(bad) = w.iter().find(|&&v| !(v > T::zero() && v.is_finite())) {
        return Err(Error::InvalidConfig(format!(
            "budget weights must be positive, got {bad}"
        )));
    }
    let total = compensated_sum(w.iter().copied());
    let mut shares: Vec<T> = w.iter().map(|&v| a_sq * v / total).collect();
    let head = compensated_sum(shares[..m - 1].iter().copied());
    shares[m - 1] = a_sq - head;
    Ok(shares)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationPlan<T> {
    pub sites: usize,
    /// Length of the common parameter block.
    pub p0: usize,
    pub alpha: T,
    /// `χ²_{p0}` quantile at `1 − α`.
    pub a_sq: T,
    pub a_tilde_sq: Vec<T>,
}

impl<T: Scalar> FederationPlan<T> {
    pub fn new(p0: usize, alpha: T, sites: usize, weights: Option<&[T]>) -> Result<Self> {
        if p0 == 0 {
            return Err(Error::InvalidConfig("the common block must be nonempty".into()));
        }
        if !(alpha > T::zero() && alpha < T::one()) {
            return Err(Error::InvalidConfig(format!("alpha {alpha} outside (0, 1)")));
        }
        let a_sq = T::lit(chi2_quantile(p0 as f64, 1.0 - alpha.as_f64())?);
        let a_tilde_sq = allocate_atilde(sites, a_sq, weights)?;
        Ok(Self {
            sites,
            p0,
            alpha,
            a_sq,
            a_tilde_sq,
        })
    }
}

/// What `combine` does with sites whose pool ran out before stopping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExhaustionPolicy {
    /// Refuse to combine.
    #[default]
    Abort,
    /// Drop exhausted sites and re-weight over the rest.
    Renormalize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinedResult<T> {
    /// `N̂ = Σ Ñ_j` over the included sites.
    pub n_hat: usize,
    /// Positions (in the input slice) of the sites that were combined.
    pub included: Vec<usize>,
    pub n_per_site: Vec<usize>,
    /// `ρ_j = Ñ_j / N̂`
    pub rho: Vec<T>,
    pub theta_hat: Vec<T>,
    /// `Σ̃ = Σ ρ_j² L Σ_jÑ⁻¹ Lᵀ`
    pub sigma_tilde: Matrix<T>,
    /// `λ_max(N̂ Σ̃)`
    pub mu_hat: T,
}

pub fn combine<T: Scalar>(results: &[SiteResult<T>], policy: ExhaustionPolicy) -> Result<CombinedResult<T>> {
    if results.is_empty() {
        return Err(Error::InvalidConfig("nothing to combine".into()));
    }
    let mut included = Vec::with_capacity(results.len());
    for (j, r) in results.iter().enumerate() {
        if r.exhausted {
            if policy == ExhaustionPolicy::Abort {
                return Err(Error::ExhaustedSite { site: j });
            }
        } else {
            included.push(j);
        }
    }
    if included.is_empty() {
        return Err(Error::ExhaustedSite { site: 0 });
    }
    let p0 = results[included[0]].theta.len();
    for &j in &included {
        if results[j].theta.len() != p0 || results[j].info_common.rows() != p0 {
            return Err(Error::DimensionMismatch {
                expected: p0,
                actual: results[j].theta.len(),
            });
        }
    }

    let n_per_site: Vec<usize> = included.iter().map(|&j| results[j].stopping_time).collect();
    let n_hat: usize = n_per_site.iter().sum();
    let n_hat_t = T::from_count(n_hat);
    let mut rho: Vec<T> = n_per_site.iter().map(|&n| T::from_count(n) / n_hat_t).collect();
    let last = rho.len() - 1;
    rho[last] = T::one() - compensated_sum(rho[..last].iter().copied());

    let mut theta_hat = vec![T::zero(); p0];
    let mut sigma_tilde = Matrix::zeros(p0, p0);
    for (&j, &w) in included.iter().zip(&rho) {
        for (t, &th) in theta_hat.iter_mut().zip(&results[j].theta) {
            *t = *t + w * th;
        }
        sigma_tilde.add_scaled(w * w, &results[j].info_common)?;
    }
    let sigma_tilde = sigma_tilde.symmetrized();
    let mu_hat = max_eigenvalue(&sigma_tilde.scale(n_hat_t));
    Ok(CombinedResult {
        n_hat,
        included,
        n_per_site,
        rho,
        theta_hat,
        sigma_tilde,
        mu_hat,
    })
}

/// `Σ ρ_j (Σ_jÑ / Ñ_j)⁻¹` restricted to the common block, which equals
/// `N̂ Σ̃` algebraically.
pub fn normalized_cross_check<T: Scalar>(results: &[SiteResult<T>], combined: &CombinedResult<T>) -> Result<Matrix<T>> {
    let p0 = combined.theta_hat.len();
    let mut acc = Matrix::zeros(p0, p0);
    for (&j, &w) in combined.included.iter().zip(&combined.rho) {
        let r = &results[j];
        acc.add_scaled(w * T::from_count(r.stopping_time), &r.info_common)?;
    }
    Ok(acc.symmetrized())
}

pub fn combined_ellipsoid<T: Scalar>(combined: &CombinedResult<T>, d1: T) -> Result<ConfidenceEllipsoid<T>> {
    ConfidenceEllipsoid::new(
        combined.theta_hat.clone(),
        combined.sigma_tilde.clone(),
        T::from_count(combined.n_hat),
        d1,
    )
}

/// Whether `z` lies in the combined fixed-size confidence set.
pub fn confidence_set_contains<T: Scalar>(combined: &CombinedResult<T>, z: &[T], d1: T) -> Result<bool> {
    combined_ellipsoid(combined, d1)?.contains(z)
}

/// `(θ̂ − θ₀)ᵀ Σ̃⁻¹ (θ̂ − θ₀)`, asymptotically `χ²_{p0}`.
pub fn wald_statistic<T: Scalar>(combined: &CombinedResult<T>, theta0: &[T]) -> Result<T> {
    if theta0.len() != combined.theta_hat.len() {
        return Err(Error::DimensionMismatch {
            expected: combined.theta_hat.len(),
            actual: theta0.len(),
        });
    }
    let chol = Cholesky::factor(&combined.sigma_tilde).ok_or(Error::SingularInformation)?;
    let diff: Vec<T> = combined.theta_hat.iter().zip(theta0).map(|(&a, &b)| a - b).collect();
    let solved = chol.solve(&diff);
    Ok(diff.iter().zip(&solved).map(|(&a, &b)| a * b).sum())
}

/// Unweighted mean of the site estimates.
pub fn equal_weight_average<T: Scalar>(results: &[SiteResult<T>]) -> Vec<T> {
    let Some(first) = results.first() else {
        return Vec::new();
    };
    let m = T::from_count(results.len());
    (0..first.theta.len())
        .map(|i| results.iter().map(|r| r.theta[i]).sum::<T>() / m)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencyDiagnostics<T> {
    /// `d1² N̂ / (a² μ)`; tends to 1 as `d1 → 0`.
    pub ratio: T,
    /// `λ_max(Σ ρ_j L Σ_j⁻¹ Lᵀ)` with the true per-observation information.
    pub mu: T,
}

/// Compares `N̂` with the size an oracle knowing each site's true
/// per-observation information would need. `true_common_blocks[j]` is
/// `L Σ_j⁻¹ Lᵀ` for the j-th included site.
pub fn efficiency_diagnostics<T: Scalar>(
    combined: &CombinedResult<T>,
    true_common_blocks: &[Matrix<T>],
    d1: T,
    a_sq: T,
) -> Result<EfficiencyDiagnostics<T>> {
    if true_common_blocks.len() != combined.rho.len() {
        return Err(Error::DimensionMismatch {
            expected: combined.rho.len(),
            actual: true_common_blocks.len(),
        });
    }
    let p0 = combined.theta_hat.len();
    let mut acc = Matrix::zeros(p0, p0);
    for (block, &w) in true_common_blocks.iter().zip(&combined.rho) {
        acc.add_scaled(w, block)?;
    }
    let mu = max_eigenvalue(&acc.symmetrized());
    Ok(EfficiencyDiagnostics {
        ratio: d1 * d1 * T::from_count(combined.n_hat) / (a_sq * mu),
        mu,
    })
}

/// Runs every site on its own pool with its own recruitment stream
/// `(master_seed, rep, j)`. Site runs share nothing; output order follows
/// the input order whatever the thread schedule.
pub fn run_sites<T: Scalar>(
    pools: &[Dataset<T>],
    configs: &[SiteConfig<T>],
    master_seed: u64,
    rep: u64,
    parallel: bool,
) -> Result<Vec<Result<SiteResult<T>>>> {
    if pools.len() != configs.len() {
        return Err(Error::DimensionMismatch {
            expected: pools.len(),
            actual: configs.len(),
        });
    }
    let run = |j: usize| {
        let mut rng = stream_rng(master_seed, rep, j as u64, StreamPurpose::Recruitment);
        run_site(&pools[j], &configs[j], &mut rng)
    };
    Ok(if parallel {
        (0..pools.len()).into_par_iter().map(run).collect()
    } else {
        (0..pools.len()).map(run).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn site(n: usize, theta: [f64; 2], block: [[f64; 2]; 2]) -> SiteResult<f64> {
        let info_common = Matrix::from_rows(&block);
        SiteResult {
            stopping_time: n,
            theta: theta.to_vec(),
            beta: vec![0.0, theta[0], theta[1]],
            mu: max_eigenvalue(&info_common.scale(n as f64)),
            info_common,
            criterion_value: 0.8,
            criterion_variance: 1e-4,
            exhausted: false,
            recruited: (0..n).collect(),
            trace: Vec::new(),
            fit_failures: 0,
            sampler_fallbacks: 0,
        }
    }

    #[test]
    fn equal_allocation() {
        let a_sq = chi2_quantile(2.0, 0.95).unwrap();
        let shares = allocate_atilde(5, a_sq, None).unwrap();
        for s in &shares {
            assert_relative_eq!(*s, 1.198_292_909_421_596, max_relative = 1e-12);
        }
        assert!((shares.iter().sum::<f64>() - a_sq).abs() < 1e-12);
    }

    #[test]
    fn weighted_allocation() {
        let a_sq: f64 = 5.991_464_547_107_98;
        let shares = allocate_atilde(5, a_sq, Some(&[1.0, 1.0, 1.0, 1.0, 6.0])).unwrap();
        for s in &shares[..4] {
            assert_relative_eq!(*s, a_sq / 10.0, max_relative = 1e-14);
        }
        assert_relative_eq!(shares[4], 0.6 * a_sq, max_relative = 1e-14);
        assert!((compensated_sum(shares.iter().copied()) - a_sq).abs() < 1e-14);
        assert!(allocate_atilde(2, a_sq, Some(&[1.0, 0.0])).is_err());
        assert!(allocate_atilde(2, a_sq, Some(&[1.0, -2.0])).is_err());
        assert!(allocate_atilde(3, a_sq, Some(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn plan_budget() {
        let plan = FederationPlan::new(2, 0.05, 5, None).unwrap();
        assert_relative_eq!(plan.a_sq, -2.0 * 0.05f64.ln(), max_relative = 1e-12);
        assert_eq!(plan.a_tilde_sq.len(), 5);
    }

    #[test]
    fn two_site_arithmetic() {
        let eye = [[1.0, 0.0], [0.0, 1.0]];
        let res = [site(100, [1.0, 1.0], eye), site(300, [3.0, 3.0], eye)];
        let c = combine(&res, ExhaustionPolicy::Abort).unwrap();
        assert_eq!(c.n_hat, 400);
        assert_eq!(c.rho, vec![0.25, 0.75]);
        assert_eq!(c.theta_hat, vec![2.5, 2.5]);
        // Σ̃ = (0.0625 + 0.5625) I
        assert_relative_eq!(c.sigma_tilde[(0, 0)], 0.625);
        assert_relative_eq!(c.mu_hat, 250.0);
    }

    #[test]
    fn single_site_reduces_to_site_estimate() {
        let block = [[0.02, 0.005], [0.005, 0.03]];
        let res = [site(250, [1.9, 1.1], block)];
        let c = combine(&res, ExhaustionPolicy::Abort).unwrap();
        assert_eq!(c.theta_hat, res[0].theta);
        assert_eq!(c.sigma_tilde, res[0].info_common);
        assert_relative_eq!(c.mu_hat, res[0].mu, max_relative = 1e-14);
    }

    #[test]
    fn exhaustion_policies() {
        let eye = [[1.0, 0.0], [0.0, 1.0]];
        let mut res = vec![site(100, [1.0, 1.0], eye), site(300, [3.0, 3.0], eye)];
        res[0].exhausted = true;
        assert_eq!(
            combine(&res, ExhaustionPolicy::Abort),
            Err(Error::ExhaustedSite { site: 0 })
        );
        let c = combine(&res, ExhaustionPolicy::Renormalize).unwrap();
        assert_eq!((c.n_hat, c.included.clone(), c.rho.clone()), (300, vec![1], vec![1.0]));
    }

    #[test]
    fn normalized_form_agrees() {
        let res = [
            site(130, [1.0, 1.2], [[0.04, 0.01], [0.01, 0.05]]),
            site(410, [2.0, 0.8], [[0.012, -0.002], [-0.002, 0.02]]),
            site(77, [1.5, 1.0], [[0.08, 0.0], [0.0, 0.07]]),
        ];
        let c = combine(&res, ExhaustionPolicy::Abort).unwrap();
        let lhs = c.sigma_tilde.scale(c.n_hat as f64);
        let rhs = normalized_cross_check(&res, &c).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((lhs[(i, j)] - rhs[(i, j)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn membership_and_wald() {
        let res = [
            site(200, [2.1, 0.9], [[0.02, 0.004], [0.004, 0.03]]),
            site(220, [1.9, 1.05], [[0.018, 0.0], [0.0, 0.025]]),
        ];
        let c = combine(&res, ExhaustionPolicy::Abort).unwrap();
        assert!(confidence_set_contains(&c, &c.theta_hat, 0.2).unwrap());
        assert_eq!(wald_statistic(&c, &c.theta_hat).unwrap(), 0.0);
        let e = combined_ellipsoid(&c, 0.2).unwrap();
        assert!((e.max_axis_length() - 0.4).abs() < 1e-8);
        // a point 0.25 away along any direction is outside a set of max axis 0.4
        let far = [c.theta_hat[0] + 0.25, c.theta_hat[1]];
        assert!(!confidence_set_contains(&c, &far, 0.2).unwrap());
    }

    #[test]
    fn wald_identity_covariance() {
        let c = CombinedResult {
            n_hat: 10,
            included: vec![0],
            n_per_site: vec![10],
            rho: vec![1.0],
            theta_hat: vec![3.0, 4.0],
            sigma_tilde: Matrix::identity(2),
            mu_hat: 10.0,
        };
        assert_eq!(wald_statistic(&c, &[0.0, 0.0]).unwrap(), 25.0);
    }

    #[test]
    fn efficiency_ratio_single_site() {
        let block = Matrix::from_rows(&[[20.0, 2.0], [2.0, 10.0]]);
        let c = CombinedResult {
            n_hat: 3000,
            included: vec![0],
            n_per_site: vec![3000],
            rho: vec![1.0],
            theta_hat: vec![2.0, 1.0],
            sigma_tilde: block.scale(1.0 / 3000.0),
            mu_hat: max_eigenvalue(&block),
        };
        let d = efficiency_diagnostics(&c, std::slice::from_ref(&block), 0.2, 5.991_464_547_107_98).unwrap();
        assert_relative_eq!(d.mu, max_eigenvalue(&block));
        assert_relative_eq!(d.ratio, 0.04 * 3000.0 / (5.991_464_547_107_98 * d.mu));
    }

    #[test]
    fn equal_average() {
        let eye = [[1.0, 0.0], [0.0, 1.0]];
        let res = [site(100, [1.0, 1.0], eye), site(300, [3.0, 5.0], eye)];
        assert_eq!(equal_weight_average(&res), vec![2.0, 3.0]);
    }
}
