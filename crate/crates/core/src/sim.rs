//! Synthetic multi-site logistic designs: parameter setups B1/B2, budget
//! proportions p1/p2 and covariate-variance schemes h1/h2.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::glm::{logistic, CommonSelector, Dataset, GlmFamily};
use crate::linalg::{invert_spd, Matrix};
use crate::rng::{stream_rng, StreamPurpose};
use crate::scalar::Scalar;

/// Common parameters shared by every site in both setups.
pub const THETA0: [f64; 2] = [2.0, 1.0];
/// Positions of the common block inside each site's parameter vector.
pub const COMMON_INDICES: [usize; 2] = [1, 2];

const B1_BETA: [f64; 5] = [-2.0, 2.0, 1.0, 1.0, 0.0];
const B2_SITE_3: [f64; 6] = [-2.0, 2.0, 1.0, 1.0, 0.5, 0.0];
const B2_OTHERS: [[f64; 5]; 4] = [
    [-2.0, 2.0, 1.0, 1.0, 0.0],
    [-2.0, 2.0, 1.0, 1.0, 0.5],
    [-1.5, 2.0, 1.0, 1.0, 0.0],
    [-2.5, 2.0, 1.0, 1.0, 1.0],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BetaSetup {
    /// Every site has the same parameter vector.
    #[default]
    B1,
    /// Five sites with distinct intercepts and nuisance parts.
    B2,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum Proportions {
    #[default]
    P1,
    /// Four small sites and one site with six times their budget.
    P2,
    Weights(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovariateScheme {
    /// Unit variances everywhere.
    #[default]
    H1,
    /// Inflated variances on covariates 3 and 4 at sites 2, 4 and 5.
    H2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDesign {
    pub beta_setup: BetaSetup,
    pub proportions: Proportions,
    pub covariates: CovariateScheme,
    pub sites: usize,
    pub pool_size: usize,
    pub seed: u64,
}

impl Default for SimDesign {
    fn default() -> Self {
        Self {
            beta_setup: BetaSetup::B1,
            proportions: Proportions::P1,
            covariates: CovariateScheme::H1,
            sites: 5,
            pool_size: 20_000,
            seed: 0,
        }
    }
}

impl SimDesign {
    pub fn validate(&self) -> Result<()> {
        if self.sites == 0 {
            return Err(Error::InvalidConfig("sites must be at least 1".into()));
        }
        if self.pool_size == 0 {
            return Err(Error::InvalidConfig("pool_size must be at least 1".into()));
        }
        if self.beta_setup == BetaSetup::B2 && self.sites != 5 {
            return Err(Error::InvalidConfig(format!("B2 defines 5 sites, got {}", self.sites)));
        }
        match &self.proportions {
            Proportions::P2 if self.sites != 5 => {
                Err(Error::InvalidConfig(format!("p2 defines 5 sites, got {}", self.sites)))
            }
            Proportions::Weights(w) if w.len() != self.sites => Err(Error::InvalidConfig(format!(
                "{} budget weights for {} sites",
                w.len(),
                self.sites
            ))),
            Proportions::Weights(w) if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) => {
                Err(Error::InvalidConfig("budget weights must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    fn check_site(&self, site: usize) -> Result<()> {
        if site >= self.sites {
            return Err(Error::IndexOutOfRange {
                index: site,
                len: self.sites,
            });
        }
        Ok(())
    }

    /// Weights for splitting the chi-square budget; `None` means equal.
    pub fn budget_weights(&self) -> Option<Vec<f64>> {
        match &self.proportions {
            Proportions::P1 => None,
            Proportions::P2 => Some(vec![1.0, 1.0, 1.0, 1.0, 6.0]),
            Proportions::Weights(w) => Some(w.clone()),
        }
    }
}

/// Parameter vector of `site` (0-based) and the selector of its common block.
pub fn site_parameters(design: &SimDesign, site: usize) -> Result<(Vec<f64>, CommonSelector)> {
    design.check_site(site)?;
    let beta = match design.beta_setup {
        BetaSetup::B1 => B1_BETA.to_vec(),
        BetaSetup::B2 if site == 2 => B2_SITE_3.to_vec(),
        BetaSetup::B2 => B2_OTHERS[if site < 2 { site } else { site - 1 }].to_vec(),
    };
    let selector = CommonSelector::new(COMMON_INDICES.to_vec(), beta.len())?;
    Ok((beta, selector))
}

/// Variances of the non-intercept covariates at `site`.
pub fn covariate_variances(design: &SimDesign, site: usize) -> Result<Vec<f64>> {
    let (beta, _) = site_parameters(design, site)?;
    let mut phi = vec![1.0; beta.len() - 1];
    if design.covariates == CovariateScheme::H2 {
        let inflated = match site {
            1 | 4 => 4.0,
            3 => 2.0,
            _ => 1.0,
        };
        // covariates 3 and 4 in 1-based numbering
        phi[2] = inflated;
        phi[3] = inflated;
    }
    Ok(phi)
}

/// `n` rows `(1, x)` with `x ~ N(0, diag(φ))`, as an `n × p` matrix.
pub fn gen_covariates<T: Scalar, R: Rng + ?Sized>(
    design: &SimDesign,
    site: usize,
    n: usize,
    rng: &mut R,
) -> Result<Matrix<T>> {
    let sd: Vec<f64> = covariate_variances(design, site)?.iter().map(|v| v.sqrt()).collect();
    let p = sd.len() + 1;
    let mut data = Vec::with_capacity(n * p);
    for _ in 0..n {
        data.push(T::one());
        for &s in &sd {
            let z: f64 = StandardNormal.sample(rng);
            data.push(T::lit(s * z));
        }
    }
    Matrix::from_vec(n, p, data)
}

/// Bernoulli responses with success probability `logistic(xᵢᵀβ)`.
pub fn gen_responses<T: Scalar, R: Rng + ?Sized>(x: &Matrix<T>, beta: &[f64], rng: &mut R) -> Result<Vec<T>> {
    if x.cols() != beta.len() {
        return Err(Error::DimensionMismatch {
            expected: beta.len(),
            actual: x.cols(),
        });
    }
    Ok((0..x.rows())
        .map(|i| {
            let eta: f64 = x.row(i).iter().zip(beta).map(|(a, &b)| a.as_f64() * b).sum();
            let u: f64 = rng.random();
            if u < logistic(eta) {
                T::one()
            } else {
                T::zero()
            }
        })
        .collect())
}

/// Pool for `site` in replication `rep`, drawn from its own stream.
pub fn generate_pool<T: Scalar>(design: &SimDesign, rep: u64, site: usize) -> Result<Dataset<T>> {
    let (beta, _) = site_parameters(design, site)?;
    let mut rng = stream_rng(design.seed, rep, site as u64, StreamPurpose::PoolData);
    let x = gen_covariates::<T, _>(design, site, design.pool_size, &mut rng)?;
    let y = gen_responses(&x, &beta, &mut rng)?;
    Dataset::from_flat(x.cols(), x.as_slice().to_vec(), y)
}

/// Monte Carlo estimate of the per-observation information
/// `E[μ̇(xᵀβ)²/ν · x xᵀ]` at `site` from `draws` covariate vectors.
pub fn true_information<R: Rng + ?Sized>(
    design: &SimDesign,
    site: usize,
    draws: usize,
    rng: &mut R,
) -> Result<Matrix<f64>> {
    let (beta, _) = site_parameters(design, site)?;
    let sd: Vec<f64> = covariate_variances(design, site)?.iter().map(|v| v.sqrt()).collect();
    let p = beta.len();
    let family = GlmFamily::<f64>::Logistic;
    let mut acc = vec![0.0; p * p];
    let mut x = vec![1.0; p];
    for _ in 0..draws {
        for (xi, &s) in x[1..].iter_mut().zip(&sd) {
            let z: f64 = StandardNormal.sample(rng);
            *xi = s * z;
        }
        let eta: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
        let c = family.evaluate(eta).information_weight();
        for i in 0..p {
            let ci = c * x[i];
            for j in i..p {
                acc[i * p + j] += ci * x[j];
            }
        }
    }
    let n = draws as f64;
    let mut m = Matrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            m[(i, j)] = acc[i * p + j] / n;
            m[(j, i)] = m[(i, j)];
        }
    }
    Ok(m)
}

/// `L Σ⁻¹ Lᵀ` for the true per-observation information of every site.
pub fn true_common_blocks(design: &SimDesign, draws: usize, seed: u64) -> Result<Vec<Matrix<f64>>> {
    (0..design.sites)
        .map(|j| {
            let (_, sel) = site_parameters(design, j)?;
            let mut rng = stream_rng(seed, 0, j as u64, StreamPurpose::Auxiliary);
            let info = true_information(design, j, draws, &mut rng)?;
            let inv = invert_spd(&info);
            if inv.singular {
                return Err(Error::SingularInformation);
            }
            sel.select_block(&inv.matrix)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn b2() -> SimDesign {
        SimDesign {
            beta_setup: BetaSetup::B2,
            ..SimDesign::default()
        }
    }

    #[test]
    fn b2_vectors() {
        let d = b2();
        assert_eq!(site_parameters(&d, 0).unwrap().0, vec![-2.0, 2.0, 1.0, 1.0, 0.0]);
        assert_eq!(site_parameters(&d, 2).unwrap().0, vec![-2.0, 2.0, 1.0, 1.0, 0.5, 0.0]);
        assert_eq!(site_parameters(&d, 4).unwrap().0, vec![-2.5, 2.0, 1.0, 1.0, 1.0]);
        for j in 0..5 {
            let (beta, sel) = site_parameters(&d, j).unwrap();
            assert_eq!(sel.select(&beta).unwrap(), THETA0.to_vec());
            let (b1, sel1) = site_parameters(&SimDesign::default(), j).unwrap();
            assert_eq!(sel1.select(&b1).unwrap(), THETA0.to_vec());
        }
        assert!(site_parameters(&d, 5).is_err());
    }

    #[test]
    fn h2_variances() {
        let d = SimDesign {
            covariates: CovariateScheme::H2,
            ..b2()
        };
        assert_eq!(covariate_variances(&d, 0).unwrap(), vec![1.0; 4]);
        assert_eq!(covariate_variances(&d, 1).unwrap(), vec![1.0, 1.0, 4.0, 4.0]);
        assert_eq!(covariate_variances(&d, 2).unwrap(), vec![1.0; 5]);
        assert_eq!(covariate_variances(&d, 3).unwrap(), vec![1.0, 1.0, 2.0, 2.0]);
        assert_eq!(covariate_variances(&d, 4).unwrap(), vec![1.0, 1.0, 4.0, 4.0]);
    }

    #[test]
    fn validation() {
        assert!(SimDesign::default().validate().is_ok());
        let bad = SimDesign { sites: 3, ..b2() };
        assert!(bad.validate().is_err());
        let bad = SimDesign {
            sites: 2,
            proportions: Proportions::P2,
            ..SimDesign::default()
        };
        assert!(bad.validate().is_err());
        let bad = SimDesign {
            sites: 2,
            proportions: Proportions::Weights(vec![1.0, 0.0]),
            ..SimDesign::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn saturated_and_null_responses() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = gen_covariates::<f64, _>(&SimDesign::default(), 0, 1000, &mut rng).unwrap();
        let y = gen_responses::<f64, _>(&x, &[50.0, 0.0, 0.0, 0.0, 0.0], &mut rng).unwrap();
        assert!(y.iter().all(|&v| v == 1.0));
        assert!(gen_responses::<f64, _>(&x, &[0.0; 3], &mut rng).is_err());
    }

    #[test]
    fn pools_are_reproducible() {
        let d = SimDesign {
            pool_size: 50,
            seed: 7,
            ..SimDesign::default()
        };
        let a: Dataset<f64> = generate_pool(&d, 3, 1).unwrap();
        let b: Dataset<f64> = generate_pool(&d, 3, 1).unwrap();
        let c: Dataset<f64> = generate_pool(&d, 3, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!((a.n(), a.p()), (50, 5));
    }
}
