//! Prediction-performance indices for the stopping rule: the Mann–Whitney
//! AUC with its variance (logistic models) and an MSE criterion (linear
//! models).

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How a positive/negative pair with equal fitted values is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieRule {
    /// `I(v1 ≥ v2)`: a tie counts as concordant.
    #[default]
    Inclusive,
    /// A tie counts one half.
    Half,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AucVarianceMethod {
    #[default]
    HanleyMcNeil,
    DeLong,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AucEstimate<T> {
    pub auc: T,
    pub variance: T,
    pub n1: usize,
    pub n0: usize,
}

fn split_classes<T: Scalar>(fitted: &[T], labels: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    if fitted.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: fitted.len(),
            actual: labels.len(),
        });
    }
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (&v, &y) in fitted.iter().zip(labels) {
        if !v.is_finite() {
            return Err(Error::InvalidData(format!("non-finite fitted value {v}")));
        }
        if y == T::one() {
            pos.push(v);
        } else if y == T::zero() {
            neg.push(v);
        } else {
            return Err(Error::InvalidData(format!("label {y} is not 0 or 1")));
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::DegenerateClasses {
            n1: pos.len(),
            n0: neg.len(),
        });
    }
    Ok((pos, neg))
}

fn sort_scores<T: Scalar>(v: &mut [T]) {
    v.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
}

/// Twice the concordance count, so the half-tie rule stays integral.
fn doubled_concordance<T: Scalar>(pos: &[T], neg_sorted: &[T], ties: TieRule) -> u64 {
    pos.iter()
        .map(|&v| {
            let below = neg_sorted.partition_point(|&w| w < v) as u64;
            let at_or_below = neg_sorted.partition_point(|&w| w <= v) as u64;
            match ties {
                TieRule::Inclusive => 2 * at_or_below,
                TieRule::Half => below + at_or_below,
            }
        })
        .sum()
}

/// Mann–Whitney AUC with the chosen tie rule, in `O(n log n)`.
pub fn auc_with_ties<T: Scalar>(fitted: &[T], labels: &[T], ties: TieRule) -> Result<T> {
    let (pos, mut neg) = split_classes(fitted, labels)?;
    sort_scores(&mut neg);
    let twice = doubled_concordance(&pos, &neg, ties);
    let pairs = pos.len() as u64 * neg.len() as u64;
    Ok(ratio_of_counts(twice, 2 * pairs))
}

#[inline]
fn ratio_of_counts<T: Scalar>(num: u64, den: u64) -> T {
    T::from_u64(num).expect("count") / T::from_u64(den).expect("count")
}

/// `(1/(n0 n1)) Σ_{S1} Σ_{S0} I(v1 ≥ v2)`.
pub fn auc_estimate<T: Scalar>(fitted: &[T], labels: &[T]) -> Result<T> {
    auc_with_ties(fitted, labels, TieRule::Inclusive)
}

/// Hanley–McNeil variance of an AUC estimate.
pub fn auc_variance<T: Scalar>(auc: T, n1: usize, n0: usize) -> T {
    let a = auc;
    let one = T::one();
    let two = T::lit(2.0);
    let q1 = a / (two - a);
    let q2 = two * a * a / (one + a);
    let a2 = a * a;
    let n1f = T::from_count(n1);
    let n0f = T::from_count(n0);
    let num = a * (one - a) + (n1f - one) * (q1 - a2) + (n0f - one) * (q2 - a2);
    (num / (n0f * n1f)).max(T::zero())
}

/// DeLong's structural-component variance estimate.
pub fn delong_variance<T: Scalar>(fitted: &[T], labels: &[T], ties: TieRule) -> Result<T> {
    let (mut pos, mut neg) = split_classes(fitted, labels)?;
    let (n1, n0) = (pos.len(), neg.len());
    if n1 < 2 || n0 < 2 {
        let a = auc_with_ties(fitted, labels, ties)?;
        return Ok(auc_variance(a, n1, n0));
    }
    sort_scores(&mut pos);
    sort_scores(&mut neg);
    let half = T::lit(0.5);
    let component = |v: T, others: &[T], positive: bool| -> T {
        // fraction of the opposite class this value beats
        let (strict, weak) = if positive {
            (others.partition_point(|&w| w < v), others.partition_point(|&w| w <= v))
        } else {
            (
                others.len() - others.partition_point(|&w| w <= v),
                others.len() - others.partition_point(|&w| w < v),
            )
        };
        let count = match ties {
            TieRule::Inclusive => T::from_count(weak),
            TieRule::Half => (T::from_count(strict) + T::from_count(weak)) * half,
        };
        count / T::from_count(others.len())
    };
    let v10: Vec<T> = pos.iter().map(|&v| component(v, &neg, true)).collect();
    let v01: Vec<T> = neg.iter().map(|&v| component(v, &pos, false)).collect();
    Ok(sample_var(&v10) / T::from_count(n1) + sample_var(&v01) / T::from_count(n0))
}

fn sample_var<T: Scalar>(xs: &[T]) -> T {
    let n = T::from_count(xs.len());
    let m = xs.iter().copied().sum::<T>() / n;
    xs.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / (n - T::one())
}

/// AUC and its variance in one call.
pub fn auc_with_variance<T: Scalar>(
    fitted: &[T],
    labels: &[T],
    method: AucVarianceMethod,
    ties: TieRule,
) -> Result<AucEstimate<T>> {
    let (pos, mut neg) = split_classes(fitted, labels)?;
    let (n1, n0) = (pos.len(), neg.len());
    sort_scores(&mut neg);
    let auc = ratio_of_counts(doubled_concordance(&pos, &neg, ties), 2 * n1 as u64 * n0 as u64);
    let variance = match method {
        AucVarianceMethod::HanleyMcNeil => auc_variance(auc, n1, n0),
        AucVarianceMethod::DeLong => delong_variance(fitted, labels, ties)?,
    };
    Ok(AucEstimate { auc, variance, n1, n0 })
}

/// `(MSE, variance of the MSE estimator)`; the latter is the sample variance
/// of the squared residuals divided by `n`.
pub fn mse_criterion<T: Scalar>(fitted: &[T], observed: &[T]) -> Result<(T, T)> {
    if fitted.len() != observed.len() {
        return Err(Error::DimensionMismatch {
            expected: fitted.len(),
            actual: observed.len(),
        });
    }
    if fitted.len() < 2 {
        return Err(Error::Domain("MSE criterion needs at least two rows".into()));
    }
    let sq: Vec<T> = fitted.iter().zip(observed).map(|(&f, &o)| (o - f) * (o - f)).collect();
    let n = T::from_count(sq.len());
    let mse = sq.iter().copied().sum::<T>() / n;
    Ok((mse, sample_var(&sq) / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn auc_small_examples() {
        assert_eq!(auc_estimate(&[0.9, 0.1], &[1.0, 0.0]).unwrap(), 1.0);
        // ties count as concordant
        assert_eq!(auc_estimate(&[0.7, 0.7], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(auc_with_ties(&[0.7, 0.7], &[1.0, 0.0], TieRule::Half).unwrap(), 0.5);
        // S1 = {0.8, 0.4}, S0 = {0.6, 0.2}: pairs 0.8>0.6, 0.8>0.2, 0.4>0.2
        assert_eq!(
            auc_estimate(&[0.8, 0.4, 0.6, 0.2], &[1.0, 1.0, 0.0, 0.0]).unwrap(),
            0.75
        );
    }

    #[test]
    fn auc_requires_both_classes() {
        assert_eq!(
            auc_estimate(&[0.3, 0.4], &[1.0, 1.0]),
            Err(Error::DegenerateClasses { n1: 2, n0: 0 })
        );
        assert!(auc_estimate(&[0.3, 0.4], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn hanley_mcneil_examples() {
        assert_eq!(auc_variance(0.5, 1, 1), 0.25);
        // exact rational value 171/2240
        assert_relative_eq!(auc_variance(0.75, 2, 2), 171.0 / 2240.0, max_relative = 1e-14);
        for (n1, n0) in [(1, 1), (5, 9), (300, 20)] {
            assert_eq!(auc_variance(1.0, n1, n0), 0.0);
        }
    }

    #[test]
    fn hanley_mcneil_shrinks_with_sample_size() {
        for a in [0.55, 0.7, 0.9, 0.99] {
            let mut prev = f64::INFINITY;
            for n in [10, 100, 1000] {
                let v = auc_variance(a, n, n);
                assert!(v < prev);
                prev = v;
            }
            assert!(prev < 1e-3);
            for n in 1..60 {
                assert!(auc_variance(a, n + 1, 7) <= auc_variance(a, n, 7));
                assert!(auc_variance(a, 7, n + 1) <= auc_variance(a, 7, n));
            }
        }
    }

    #[test]
    fn delong_matches_hand_computation() {
        // S1 = {0.8, 0.4}, S0 = {0.6, 0.2}
        // V10 = (1, 0.5), V01 = (0.5, 1) → var = 0.125/2 + 0.125/2
        let v = delong_variance(&[0.8, 0.4, 0.6, 0.2], &[1.0, 1.0, 0.0, 0.0], TieRule::Inclusive).unwrap();
        assert_relative_eq!(v, 0.125, max_relative = 1e-15);
        let est = auc_with_variance(
            &[0.8, 0.4, 0.6, 0.2],
            &[1.0, 1.0, 0.0, 0.0],
            AucVarianceMethod::DeLong,
            TieRule::Inclusive,
        )
        .unwrap();
        assert_eq!((est.auc, est.n1, est.n0), (0.75, 2, 2));
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_criterion(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), (0.0, 0.0));
        assert_eq!(mse_criterion(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), (1.0, 0.0));
        let (m, v) = mse_criterion(&[0.0, 0.0, 0.0], &[0.0, 1.0, 2.0]).unwrap();
        // squared residuals {0,1,4}: mean 5/3, sample variance 13/3, over n = 3
        assert_relative_eq!(m, 5.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(v, 13.0 / 9.0, max_relative = 1e-15);
    }
}
