//! Distribution functions used by the stopping rule and the calibration
//! checks: chi-square and normal quantiles, Kolmogorov–Smirnov, and a paired
//! variance comparison. Double precision throughout.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};

const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let t = x + 7.5;
        let mut a = LANCZOS[0];
        for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
    }
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        gamma_series(a, x)
    } else {
        1.0 - gamma_cont_frac(a, x)
    }
}

/// Regularized upper incomplete gamma `Q(a, x) = 1 − P(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_series(a, x)
    } else {
        gamma_cont_frac(a, x)
    }
}

fn gamma_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut del = 1.0 / a;
    let mut sum = del;
    for _ in 0..1000 {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * 1e-17 {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_cont_frac(a: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..1000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-17 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

pub fn erfc(z: f64) -> f64 {
    if z >= 0.0 {
        gamma_q(0.5, z * z)
    } else {
        2.0 - gamma_q(0.5, z * z)
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

pub fn chi2_cdf(dof: f64, x: f64) -> f64 {
    gamma_p(0.5 * dof, 0.5 * x)
}

pub fn chi2_sf(dof: f64, x: f64) -> f64 {
    gamma_q(0.5 * dof, 0.5 * x)
}

fn check_prob(prob: f64) -> Result<()> {
    if prob > 0.0 && prob < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("probability {prob} outside (0, 1)")))
    }
}

/// Standard normal inverse CDF (Wichura's AS 241).
pub fn normal_quantile(prob: f64) -> Result<f64> {
    check_prob(prob)?;
    let q = prob - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = (((((((2_509.080_928_730_122_7 * r + 33_430.575_583_588_13) * r + 67_265.770_927_008_7) * r
            + 45_921.953_931_549_87)
            * r
            + 13_731.693_765_509_46)
            * r
            + 1_971.590_950_306_551_3)
            * r
            + 133.141_667_891_784_38)
            * r
            + 3.387_132_872_796_366_5)
            * q;
        let den = ((((((5_226.495_278_852_545 * r + 28_729.085_735_721_943) * r + 39_307.895_800_092_71) * r
            + 21_213.794_301_586_597)
            * r
            + 5_394.196_021_424_751)
            * r
            + 687.187_007_492_057_9)
            * r
            + 42.313_330_701_600_91)
            * r
            + 1.0;
        return Ok(num / den);
    }
    let mut r = if q < 0.0 { prob } else { 1.0 - prob };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 0.022_723_844_989_269_184) * r + 0.241_780_725_177_450_6)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r + 0.015_198_666_563_616_457)
            * r
            + 0.148_103_976_427_480_08)
            * r
            + 0.689_767_334_985_100_1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_759)
            * r
            + 1.0;
        num / den
    } else {
        let r = r - 5.0;
        let num = ((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 0.001_242_660_947_388_078_4)
            * r
            + 0.026_532_189_526_576_124)
            * r
            + 0.296_560_571_828_504_9)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den =
            ((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r + 1.846_318_317_510_054_8e-5) * r
                + 7.868_691_311_456_133e-4)
                * r
                + 0.014_875_361_290_850_615)
                * r
                + 0.136_929_880_922_735_8)
                * r
                + 0.599_832_206_555_888)
                * r
                + 1.0;
        num / den
    };
    Ok(if q < 0.0 { -val } else { val })
}

/// Chi-square inverse CDF with `dof` degrees of freedom.
///
/// Safeguarded Newton iteration on the regularized incomplete gamma,
/// started from the Wilson–Hilferty approximation.
pub fn chi2_quantile(dof: f64, prob: f64) -> Result<f64> {
    check_prob(prob)?;
    if !(dof > 0.0) {
        return Err(Error::Domain(format!("degrees of freedom {dof} must be positive")));
    }
    let z = normal_quantile(prob)?;
    let h = 2.0 / (9.0 * dof);
    let mut x = (dof * (1.0 - h + z * h.sqrt()).powi(3)).max(1e-300);
    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    let a = 0.5 * dof;
    for _ in 0..200 {
        let f = chi2_cdf(dof, x) - prob;
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        // chi-square density
        let ln_pdf = (a - 1.0) * x.ln() - 0.5 * x - a * std::f64::consts::LN_2 - ln_gamma(a);
        let pdf = ln_pdf.exp();
        let mut next = if pdf > 0.0 && pdf.is_finite() {
            x - f / pdf
        } else {
            f64::NAN
        };
        if !(next > lo && next < hi) {
            next = if hi.is_finite() {
                0.5 * (lo + hi)
            } else {
                2.0 * x.max(1.0)
            };
        }
        let done = (next - x).abs() <= 1e-14 * x.max(1e-300) || (hi.is_finite() && hi - lo <= 1e-15 * hi);
        x = next;
        if done {
            break;
        }
    }
    Ok(x)
}

/// One-sample Kolmogorov–Smirnov statistic `sup |F_n − F|`.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0_f64, |d, (i, &x)| {
        let f = cdf(x);
        let upper = (i as f64 + 1.0) / n - f;
        let lower = f - i as f64 / n;
        d.max(upper).max(lower)
    })
}

/// Asymptotic p-value of the KS statistic `d` for sample size `n`, with
/// Stephens' small-sample correction.
pub fn ks_pvalue(n: usize, d: f64) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedVarianceTest {
    /// `var(a) / var(b)`
    pub ratio: f64,
    /// Correlation of `a + b` with `a − b`.
    pub correlation: f64,
    /// Fisher-z statistic; negative when `var(a) < var(b)`.
    pub z: f64,
    /// One-sided p-value for the alternative `var(a) < var(b)`.
    pub p_less: f64,
}

/// Pitman–Morgan comparison of the variances of two paired samples.
pub fn pitman_morgan(a: &[f64], b: &[f64]) -> Result<PairedVarianceTest> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let n = a.len();
    if n < 4 {
        return Err(Error::Domain("Pitman-Morgan test needs at least 4 pairs".into()));
    }
    let s: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + y).collect();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let r = correlation(&s, &d);
    let z = r.clamp(-1.0 + 1e-15, 1.0 - 1e-15).atanh() * ((n - 3) as f64).sqrt();
    Ok(PairedVarianceTest {
        ratio: sample_variance(a) / sample_variance(b),
        correlation: r,
        z,
        p_less: normal_cdf(z),
    })
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (`n − 1` denominator); zero for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

    #[test]
    fn chi2_quantile_reference_values() {
        // 2 dof: closed form −2 ln(0.05)
        assert!((chi2_quantile(2.0, 0.95).unwrap() - (-2.0 * 0.05_f64.ln())).abs() < 1e-10);
        assert!((chi2_quantile(2.0, 0.95).unwrap() - 5.991_464_547_107_98).abs() < 1e-8);
        // 1 dof: square of the normal quantile
        let z = normal_quantile(0.975).unwrap();
        assert!((chi2_quantile(1.0, 0.95).unwrap() - z * z).abs() < 1e-9);
        assert!((chi2_quantile(1.0, 0.95).unwrap() - 3.841_458_820_694_124).abs() < 1e-8);
        assert!((chi2_quantile(3.0, 0.9).unwrap() - 6.251_388_631_170_325).abs() < 1e-8);
        assert!((chi2_quantile(5.0, 0.01).unwrap() - 0.554_298_076_728_277_2).abs() < 1e-8);
        assert!((chi2_quantile(10.0, 0.999).unwrap() - 29.588_298_445_074_42).abs() < 1e-8);
    }

    #[test]
    fn chi2_quantile_near_zero_probability() {
        for dof in [1.0, 2.0, 5.0] {
            let x = chi2_quantile(dof, 1e-12).unwrap();
            assert!((0.0..1e-3).contains(&x), "dof {dof}: {x}");
        }
    }

    #[test]
    fn quantiles_reject_out_of_domain() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(chi2_quantile(2.0, p).is_err());
            assert!(normal_quantile(p).is_err());
        }
    }

    #[test]
    fn normal_quantile_reference_values() {
        assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
        assert!((normal_quantile(0.975).unwrap() - 1.959_963_984_540_054).abs() < 1e-9);
        assert!((normal_quantile(0.6).unwrap() - 0.253_347_103_135_799_7).abs() < 1e-9);
        assert!((normal_quantile(1e-10).unwrap() + 6.361_340_902_404_056).abs() < 1e-9);
        assert!(normal_quantile(0.6).unwrap() < normal_quantile(0.9).unwrap());
    }

    #[test]
    fn agrees_with_independent_library() {
        let normal = Normal::new(0.0, 1.0).unwrap();
        for i in 1..200 {
            let p = i as f64 / 200.0;
            assert!((normal_quantile(p).unwrap() - normal.inverse_cdf(p)).abs() < 1e-9);
            for dof in [1.0, 2.0, 3.0, 7.0, 20.0] {
                let chi = ChiSquared::new(dof).unwrap();
                let q = chi2_quantile(dof, p).unwrap();
                assert!((chi.cdf(q) - p).abs() < 1e-12, "dof {dof} p {p}");
            }
        }
        // high-precision reference values; the library's cdf is only good to ~1e-10 here
        let reference = [
            (-5.0, 2.866_515_718_791_939_1e-7),
            (-1.3, 0.096_800_484_585_610_325),
            (0.0, 0.5),
            (0.4, 0.655_421_741_610_324_17),
            (2.2, 0.986_096_552_486_501_4),
            (6.0, 0.999_999_999_013_412_4),
        ];
        for (x, want) in reference {
            assert_relative_eq!(normal_cdf(x), want, max_relative = 1e-13);
            assert_relative_eq!(normal_cdf(x), normal.cdf(x), max_relative = 1e-9);
        }
    }

    #[test]
    fn ks_detects_wrong_distribution() {
        // stratified uniform sample: near-perfect fit
        let xs: Vec<f64> = (0..500).map(|i| (i as f64 + 0.5) / 500.0).collect();
        let d = ks_statistic(&xs, |x| x.clamp(0.0, 1.0));
        assert!(d <= 0.001 + 1e-12);
        assert!(ks_pvalue(500, d) > 0.99);
        let d = ks_statistic(&xs, |x| (x * x).clamp(0.0, 1.0));
        assert!(ks_pvalue(500, d) < 1e-6);
    }

    #[test]
    fn pitman_morgan_orders_variances() {
        let a: Vec<f64> = (0..200).map(|i| ((i as f64) * 0.7).sin()).collect();
        let b: Vec<f64> = a
            .iter()
            .enumerate()
            .map(|(i, x)| 3.0 * x + ((i as f64) * 1.3).cos())
            .collect();
        let t = pitman_morgan(&a, &b).unwrap();
        assert!(t.ratio < 1.0 && t.z < 0.0 && t.p_less < 1e-6);
    }
}
