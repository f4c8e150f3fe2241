//! One site's sequential procedure: initial sample, one-at-a-time
//! recruitment, and the two-part stopping rule
//!
//! ```text
//! k ≥ n0,   μ_k = λ_max(k L Σ_k⁻¹ Lᵀ) ≤ d1² k / ã²,   v_k ≤ (d2 / a_p)²
//! ```
//!
//! where `v_k` is the estimated variance of the prediction index (AUC or MSE)
//! and `a_p` the `1 − α/2` normal quantile.

use std::io::{self, Write};

use rand::Rng;

use crate::ellipsoid::ConfidenceEllipsoid;
use crate::error::{Error, Result};
use crate::glm::{fit_mqle, fitted_values, CommonSelector, Dataset, FamilyKind, FitOptions, GlmFamily};
use crate::linalg::{invert_spd, max_eigenvalue, Matrix};
use crate::metrics::{auc_with_variance, mse_criterion, AucVarianceMethod, TieRule};
use crate::sampler::{select_a_optimal, select_random, AOptimalContext, CandidatePool};
use crate::scalar::Scalar;
use crate::stats::normal_quantile;

/// Re-draws of the last initial element while looking for both classes.
const INITIAL_CLASS_REDRAWS: usize = 100;
/// Extra random recruits allowed while the initial fit fails.
const INITIAL_FIT_RETRIES: usize = 50;
#[cfg(debug_assertions)]
const WARM_START_CHECK_EVERY: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplerKind {
    #[default]
    Random,
    AOptimal,
}

/// Prediction index controlling the second half of the stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Criterion {
    #[default]
    Auc,
    Mse,
}

#[derive(Debug, Clone)]
pub struct SiteConfig<T> {
    pub family: GlmFamily<T>,
    pub selector: CommonSelector,
    /// This site's share `ã²` of the chi-square budget.
    pub a_tilde_sq: T,
    pub d1: T,
    pub d2: T,
    pub alpha: T,
    /// Initial sample size; `None` means `max(10 p, 30)`.
    pub n0: Option<usize>,
    pub sampler: SamplerKind,
    /// Score only this many random candidates per A-optimal step.
    pub candidate_subsample: Option<usize>,
    pub criterion: Criterion,
    /// Cap on recruitment steps after the initial sample.
    pub max_steps: Option<usize>,
    pub batch_size: usize,
    pub tie_rule: TieRule,
    pub auc_variance: AucVarianceMethod,
    pub record_trace: bool,
    pub fit: FitOptions<T>,
}

impl<T: Scalar> SiteConfig<T> {
    pub fn new(family: GlmFamily<T>, selector: CommonSelector, a_tilde_sq: T, d1: T, d2: T, alpha: T) -> Self {
        let criterion = match family.kind() {
            FamilyKind::Logistic => Criterion::Auc,
            _ => Criterion::Mse,
        };
        Self {
            family,
            selector,
            a_tilde_sq,
            d1,
            d2,
            alpha,
            n0: None,
            sampler: SamplerKind::Random,
            candidate_subsample: None,
            criterion,
            max_steps: None,
            batch_size: 1,
            tie_rule: TieRule::Inclusive,
            auc_variance: AucVarianceMethod::HanleyMcNeil,
            record_trace: false,
            fit: FitOptions::default(),
        }
    }

    pub fn with_sampler(mut self, sampler: SamplerKind) -> Self {
        self.sampler = sampler;
        self
    }

    pub fn initial_size(&self, p: usize) -> usize {
        self.n0.unwrap_or_else(|| (10 * p).max(30))
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        let positive = |v: T, name: &str| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")))
            }
        };
        positive(self.a_tilde_sq, "a_tilde_sq")?;
        positive(self.d1, "d1")?;
        positive(self.d2, "d2")?;
        if !(self.alpha > T::zero() && self.alpha < T::one()) {
            return Err(Error::InvalidConfig(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        let n0 = self.initial_size(p);
        if n0 < p + 1 {
            return Err(Error::InvalidConfig(format!(
                "n0 = {n0} must be at least p + 1 = {}",
                p + 1
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if let Some(&i) = self.selector.indices().iter().find(|&&i| i >= p) {
            return Err(Error::IndexOutOfRange { index: i, len: p });
        }
        if self.criterion == Criterion::Auc && self.family.kind() != FamilyKind::Logistic {
            return Err(Error::InvalidConfig("the AUC criterion needs a logistic family".into()));
        }
        Ok(())
    }

    pub fn thresholds(&self) -> Result<StopThresholds<T>> {
        let a_p = T::lit(normal_quantile(1.0 - self.alpha.as_f64() / 2.0)?);
        let ratio = self.d2 / a_p;
        Ok(StopThresholds {
            precision_per_obs: self.d1 * self.d1 / self.a_tilde_sq,
            max_criterion_variance: ratio * ratio,
        })
    }
}

/// Right-hand sides of the stopping inequalities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopThresholds<T> {
    /// `d1² / ã²`; the precision bound at size `k` is `k` times this.
    pub precision_per_obs: T,
    /// `(d2 / a_p)²`
    pub max_criterion_variance: T,
}

/// A site's procedure after `k` recruits.
#[derive(Debug, Clone)]
pub struct SiteState<T> {
    /// Pool rows recruited so far, in recruitment order.
    pub recruited: Vec<usize>,
    /// Copy of the recruited rows.
    pub sample: Dataset<T>,
    pub beta: Vec<T>,
    /// Un-normalized information at `beta` over the recruited rows.
    pub info: Matrix<T>,
    pub criterion_value: T,
    pub criterion_variance: T,
    /// False when the latest fit failed; such a state never stops.
    pub fitted: bool,
}

impl<T: Scalar> SiteState<T> {
    pub fn k(&self) -> usize {
        self.recruited.len()
    }
}

/// `μ_k = λ_max(k L Σ_k⁻¹ Lᵀ)` together with the block `L Σ_k⁻¹ Lᵀ` and `Σ_k⁻¹`.
#[derive(Debug, Clone)]
pub struct Precision<T> {
    pub mu: T,
    pub common_block: Matrix<T>,
    pub info_inv: Matrix<T>,
}

pub fn precision_statistic<T: Scalar>(info: &Matrix<T>, selector: &CommonSelector, k: usize) -> Result<Precision<T>> {
    let inv = invert_spd(info);
    if inv.singular {
        return Err(Error::SingularInformation);
    }
    let common_block = selector.select_block(&inv.matrix)?;
    let mu = max_eigenvalue(&common_block.scale(T::from_count(k)));
    Ok(Precision {
        mu,
        common_block,
        info_inv: inv.matrix,
    })
}

fn stop_decision<T: Scalar>(
    state: &SiteState<T>,
    precision: Option<&Precision<T>>,
    n0: usize,
    thresholds: &StopThresholds<T>,
) -> bool {
    let k = state.k();
    let Some(prec) = precision else {
        return false;
    };
    state.fitted
        && k >= n0
        && prec.mu <= thresholds.precision_per_obs * T::from_count(k)
        && state.criterion_variance <= thresholds.max_criterion_variance
}

/// Evaluates the stopping rule on `state`. A singular information matrix
/// means "do not stop".
pub fn check_stop<T: Scalar>(state: &SiteState<T>, config: &SiteConfig<T>) -> Result<bool> {
    let thresholds = config.thresholds()?;
    let n0 = config.initial_size(state.sample.p());
    let precision = match precision_statistic(&state.info, &config.selector, state.k()) {
        Ok(p) => Some(p),
        Err(Error::SingularInformation) => None,
        Err(e) => return Err(e),
    };
    Ok(stop_decision(state, precision.as_ref(), n0, &thresholds))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow<T> {
    pub step: usize,
    pub k: usize,
    pub mu_jk: T,
    pub v_a: T,
    pub stopped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiteResult<T> {
    /// `Ñ`, the sample size at stopping (or at exhaustion).
    pub stopping_time: usize,
    pub theta: Vec<T>,
    pub beta: Vec<T>,
    /// `L Σ_Ñ⁻¹ Lᵀ` with the un-normalized information.
    pub info_common: Matrix<T>,
    /// `μ_Ñ = λ_max(Ñ L Σ_Ñ⁻¹ Lᵀ)`
    pub mu: T,
    /// AUC (or MSE under the MSE criterion) at stopping.
    pub criterion_value: T,
    pub criterion_variance: T,
    pub exhausted: bool,
    pub recruited: Vec<usize>,
    pub trace: Vec<TraceRow<T>>,
    /// Recruitment steps whose refit failed.
    pub fit_failures: usize,
    /// A-optimal steps that fell back to random selection.
    pub sampler_fallbacks: usize,
}

fn evaluate_criterion<T: Scalar>(sample: &Dataset<T>, beta: &[T], config: &SiteConfig<T>) -> Result<(T, T)> {
    let fitted = fitted_values(sample, beta, &config.family)?;
    match config.criterion {
        Criterion::Auc => {
            let est = auc_with_variance(&fitted, sample.responses(), config.auc_variance, config.tie_rule)?;
            Ok((est.auc, est.variance))
        }
        Criterion::Mse => mse_criterion(&fitted, sample.responses()),
    }
}

fn draw_initial<T: Scalar, R: Rng + ?Sized>(
    pool_data: &Dataset<T>,
    candidates: &mut CandidatePool,
    n0: usize,
    needs_both_classes: bool,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let mut chosen = Vec::with_capacity(n0);
    for _ in 0..n0 {
        chosen.push(select_random(candidates, rng)?);
    }
    if !needs_both_classes {
        return Ok(chosen);
    }
    let has_both = |idx: &[usize]| {
        let pos = idx.iter().filter(|&&i| pool_data.y(i) == T::one()).count();
        pos > 0 && pos < idx.len()
    };
    let mut redraws = 0;
    while !has_both(&chosen) {
        if redraws == INITIAL_CLASS_REDRAWS || !candidates.has_candidates() {
            return Err(Error::InitInfeasible(format!(
                "no two-class initial sample of size {n0} after {redraws} re-draws"
            )));
        }
        let last = chosen.pop().expect("n0 > 0");
        chosen.push(select_random(candidates, rng)?);
        candidates.release(last)?;
        redraws += 1;
    }
    Ok(chosen)
}

/// Runs the sequential procedure on one site's pool until the stopping rule
/// holds, the pool is used up, or `max_steps` recruitment steps have run.
pub fn run_site<T: Scalar, R: Rng + ?Sized>(
    pool: &Dataset<T>,
    config: &SiteConfig<T>,
    rng: &mut R,
) -> Result<SiteResult<T>> {
    let p = pool.p();
    config.validate(p)?;
    pool.validate(&config.family)?;
    let n0 = config.initial_size(p);
    if pool.n() < n0 {
        return Err(Error::InitInfeasible(format!(
            "pool has {} rows, initial sample needs {n0}",
            pool.n()
        )));
    }
    let thresholds = config.thresholds()?;
    let logistic = config.family.kind() == FamilyKind::Logistic;

    let mut candidates = CandidatePool::new(pool.n());
    let mut recruited = draw_initial(pool, &mut candidates, n0, logistic, rng)?;
    let mut sample = pool.subset(&recruited)?;

    let mut retries = 0;
    let mut fit = loop {
        match fit_mqle(&sample, &config.family, &config.fit).and_then(|f| f.ensure_converged()) {
            Ok(f) => break f,
            Err(e) => {
                if retries == INITIAL_FIT_RETRIES {
                    return Err(Error::InitInfeasible(format!(
                        "initial fit failed after {retries} extra recruits: {e}"
                    )));
                }
                let idx = select_random(&mut candidates, rng)
                    .map_err(|_| Error::InitInfeasible(format!("pool exhausted while initial fit failed: {e}")))?;
                recruited.push(idx);
                sample.push_from(pool, idx);
                retries += 1;
            }
        }
    };

    let (value, variance) = evaluate_criterion(&sample, &fit.beta, config)?;
    let mut state = SiteState {
        recruited,
        sample,
        beta: std::mem::take(&mut fit.beta),
        info: fit.info,
        criterion_value: value,
        criterion_variance: variance,
        fitted: true,
    };

    let mut trace = Vec::new();
    let mut steps = 0usize;
    let mut fit_failures = 0usize;
    let mut fallbacks = 0usize;
    loop {
        let precision = precision_statistic(&state.info, &config.selector, state.k()).ok();
        let stopped = stop_decision(&state, precision.as_ref(), n0, &thresholds);
        if config.record_trace {
            trace.push(TraceRow {
                step: steps,
                k: state.k(),
                mu_jk: precision.as_ref().map_or(T::nan(), |p| p.mu),
                v_a: state.criterion_variance,
                stopped,
            });
        }
        let out_of_budget = config.max_steps.is_some_and(|m| steps >= m);
        if stopped || out_of_budget || !candidates.has_candidates() {
            return Ok(finish(
                state,
                precision,
                config,
                !stopped,
                trace,
                fit_failures,
                fallbacks,
            ));
        }

        for _ in 0..config.batch_size {
            if !candidates.has_candidates() {
                break;
            }
            let idx = match (config.sampler, &precision) {
                (SamplerKind::AOptimal, Some(prec)) if state.fitted => {
                    let ctx = AOptimalContext {
                        a_inv: &prec.info_inv,
                        beta: &state.beta,
                        family: &config.family,
                    };
                    let sub = config.candidate_subsample.map(|m| (m, &mut *rng));
                    select_a_optimal(pool, ctx, &mut candidates, sub)?
                }
                (SamplerKind::AOptimal, _) => {
                    fallbacks += 1;
                    select_random(&mut candidates, rng)?
                }
                (SamplerKind::Random, _) => select_random(&mut candidates, rng)?,
            };
            state.recruited.push(idx);
            state.sample.push_from(pool, idx);
        }
        steps += 1;

        let opts = config.fit.clone().warm_start(state.beta.clone());
        let refit = fit_mqle(&state.sample, &config.family, &opts)
            .and_then(|f| f.ensure_converged())
            .or_else(|_| fit_mqle(&state.sample, &config.family, &config.fit).and_then(|f| f.ensure_converged()));
        match refit {
            Ok(f) => {
                #[cfg(debug_assertions)]
                if steps.is_multiple_of(WARM_START_CHECK_EVERY) {
                    check_against_cold_start(&state.sample, config, &f.beta);
                }
                state.beta = f.beta;
                state.info = f.info;
                state.fitted = true;
                let (value, variance) = evaluate_criterion(&state.sample, &state.beta, config)?;
                state.criterion_value = value;
                state.criterion_variance = variance;
            }
            Err(_) => {
                fit_failures += 1;
                state.fitted = false;
            }
        }
    }
}

#[cfg(debug_assertions)]
fn check_against_cold_start<T: Scalar>(sample: &Dataset<T>, config: &SiteConfig<T>, warm: &[T]) {
    if let Ok(cold) = fit_mqle(sample, &config.family, &config.fit) {
        if cold.converged {
            let gap = cold
                .beta
                .iter()
                .zip(warm)
                .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()));
            debug_assert!(
                gap <= T::lit(1e-6).max(T::epsilon().sqrt()),
                "warm/cold fits differ by {gap}"
            );
        }
    }
}

fn finish<T: Scalar>(
    state: SiteState<T>,
    precision: Option<Precision<T>>,
    config: &SiteConfig<T>,
    exhausted: bool,
    trace: Vec<TraceRow<T>>,
    fit_failures: usize,
    sampler_fallbacks: usize,
) -> SiteResult<T> {
    let k = state.k();
    let (mu, info_common) = match precision {
        Some(p) => (p.mu, p.common_block),
        None => {
            // singular information at exhaustion: report the pseudo-inverse block
            let pinv = invert_spd(&state.info).matrix;
            let block = config
                .selector
                .select_block(&pinv)
                .unwrap_or_else(|_| Matrix::zeros(config.selector.len(), config.selector.len()));
            (T::nan(), block)
        }
    };
    let theta = config
        .selector
        .select(&state.beta)
        .expect("selector validated against p");
    SiteResult {
        stopping_time: k,
        theta,
        beta: state.beta,
        info_common,
        mu,
        criterion_value: state.criterion_value,
        criterion_variance: state.criterion_variance,
        exhausted,
        recruited: state.recruited,
        trace,
        fit_failures,
        sampler_fallbacks,
    }
}

/// Per-site confidence ellipsoid for θ at the stopping time; its longest
/// axis is `2 d1`.
pub fn site_confidence_set<T: Scalar>(result: &SiteResult<T>, d1: T) -> Result<ConfidenceEllipsoid<T>> {
    if result.exhausted {
        return Err(Error::Domain("site stopped by exhaustion; no fixed-size set".into()));
    }
    ConfidenceEllipsoid::new(
        result.theta.clone(),
        result.info_common.clone(),
        T::from_count(result.stopping_time),
        d1,
    )
}

/// Writes trace rows as `site,step,k,mu_jk,v_A,stopped`.
pub fn write_trace_csv<T: Scalar, W: Write>(
    out: &mut W,
    site: usize,
    rows: &[TraceRow<T>],
    header: bool,
) -> io::Result<()> {
    if header {
        writeln!(out, "site,step,k,mu_jk,v_A,stopped")?;
    }
    for r in rows {
        writeln!(out, "{site},{},{},{},{},{}", r.step, r.k, r.mu_jk, r.v_a, r.stopped)?;
    }
    Ok(())
}
