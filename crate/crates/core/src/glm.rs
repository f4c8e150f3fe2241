//! Link/variance families, quasi-likelihood estimation and information
//! matrices for generalized linear models.
//!
//! Information matrices are kept un-normalized: `Σ_k = Σᵢ xᵢ (μ̇²/ν)(xᵢᵀβ) xᵢᵀ`
//! summed over the `k` rows, never divided by `k`.

use crate::error::{Error, Result};
use crate::linalg::{dot, Cholesky, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyKind {
    Logistic,
    Gaussian,
    Custom,
}

/// Mean/variance functions for a user supplied family.
#[derive(Debug, Clone, Copy)]
pub struct CustomFamily<T> {
    pub mu: fn(T) -> T,
    pub mu_dot: fn(T) -> T,
    pub nu: fn(T) -> T,
}

#[derive(Debug, Clone, Copy)]
pub enum GlmFamily<T> {
    /// Bernoulli response with logit link.
    Logistic,
    /// Identity link with constant variance `sigma2`.
    Gaussian {
        sigma2: T,
    },
    Custom(CustomFamily<T>),
}

/// The four family functions evaluated at one linear predictor value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyEval<T> {
    pub mu: T,
    pub mu_dot: T,
    pub nu: T,
    pub weight: T,
}

impl<T: Scalar> FamilyEval<T> {
    /// `μ̇² / ν`, the per-row information weight.
    #[inline]
    pub fn information_weight(&self) -> T {
        self.mu_dot * self.mu_dot * self.weight
    }
}

/// Saturation floor for logistic probabilities.
#[inline]
pub fn probability_floor<T: Scalar>() -> T {
    T::lit(1e-12).max(T::epsilon())
}

/// Overflow-safe logistic function (unclamped).
#[inline]
pub fn logistic<T: Scalar>(t: T) -> T {
    if t >= T::zero() {
        T::one() / (T::one() + (-t).exp())
    } else {
        let e = t.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> GlmFamily<T> {
    pub fn kind(&self) -> FamilyKind {
        match self {
            GlmFamily::Logistic => FamilyKind::Logistic,
            GlmFamily::Gaussian { .. } => FamilyKind::Gaussian,
            GlmFamily::Custom(_) => FamilyKind::Custom,
        }
    }

    #[inline]
    pub fn evaluate(&self, t: T) -> FamilyEval<T> {
        match self {
            GlmFamily::Logistic => {
                let eps = probability_floor::<T>();
                let p = logistic(t).max(eps).min(T::one() - eps);
                let v = p * (T::one() - p);
                FamilyEval {
                    mu: p,
                    mu_dot: v,
                    nu: v,
                    weight: T::one() / v,
                }
            }
            GlmFamily::Gaussian { sigma2 } => FamilyEval {
                mu: t,
                mu_dot: T::one(),
                nu: *sigma2,
                weight: T::one() / *sigma2,
            },
            GlmFamily::Custom(f) => {
                let nu = (f.nu)(t);
                FamilyEval {
                    mu: (f.mu)(t),
                    mu_dot: (f.mu_dot)(t),
                    nu,
                    weight: T::one() / nu,
                }
            }
        }
    }

    /// Whether `y` is an admissible response for this family.
    pub fn accepts_response(&self, y: T) -> bool {
        match self {
            GlmFamily::Logistic => y == T::zero() || y == T::one(),
            _ => y.is_finite(),
        }
    }
}

/// Evaluates `(μ, μ̇, ν, w)` at `t`.
pub fn evaluate_family<T: Scalar>(family: &GlmFamily<T>, t: T) -> FamilyEval<T> {
    family.evaluate(t)
}

/// Responses and covariate rows (any intercept column is part of `x`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    p: usize,
    x: Vec<T>,
    y: Vec<T>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(p: usize) -> Self {
        Self {
            p,
            x: Vec::new(),
            y: Vec::new(),
        }
    }

    pub fn with_capacity(p: usize, n: usize) -> Self {
        Self {
            p,
            x: Vec::with_capacity(n * p),
            y: Vec::with_capacity(n),
        }
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: impl IntoIterator<Item = (T, R)>) -> Result<Self> {
        let mut iter = rows.into_iter().peekable();
        let p = iter.peek().map_or(0, |(_, x)| x.as_ref().len());
        let mut d = Self::new(p);
        for (y, x) in iter {
            d.push(y, x.as_ref())?;
        }
        Ok(d)
    }

    /// Builds from a flat row-major covariate buffer.
    pub fn from_flat(p: usize, x: Vec<T>, y: Vec<T>) -> Result<Self> {
        if x.len() != p * y.len() {
            return Err(Error::DimensionMismatch {
                expected: p * y.len(),
                actual: x.len(),
            });
        }
        if let Some(bad) = x.iter().chain(&y).find(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite entry {bad}")));
        }
        Ok(Self { p, x, y })
    }

    pub fn push(&mut self, y: T, x: &[T]) -> Result<()> {
        if x.len() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                actual: x.len(),
            });
        }
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite entry".into()));
        }
        self.y.push(y);
        self.x.extend_from_slice(x);
        Ok(())
    }

    /// Appends row `i` of `other` (same `p`).
    #[inline]
    pub fn push_from(&mut self, other: &Dataset<T>, i: usize) {
        debug_assert_eq!(self.p, other.p);
        self.y.push(other.y[i]);
        self.x.extend_from_slice(other.x(i));
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.y.len()
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn x(&self, i: usize) -> &[T] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    #[inline]
    pub fn y(&self, i: usize) -> T {
        self.y[i]
    }

    pub fn responses(&self) -> &[T] {
        &self.y
    }

    pub fn covariates_flat(&self) -> &[T] {
        &self.x
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut d = Self::with_capacity(self.p, indices.len());
        for &i in indices {
            if i >= self.n() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.n(),
                });
            }
            d.push_from(self, i);
        }
        Ok(d)
    }

    /// Counts of (positive, negative) responses.
    pub fn class_counts(&self) -> (usize, usize) {
        let n1 = self.y.iter().filter(|&&y| y == T::one()).count();
        (n1, self.n() - n1)
    }

    /// Checks the response domain for `family`.
    pub fn validate(&self, family: &GlmFamily<T>) -> Result<()> {
        if let Some(i) = self.y.iter().position(|&y| !family.accepts_response(y)) {
            return Err(Error::InvalidData(format!(
                "row {i}: response {} not admissible for {:?} family",
                self.y[i],
                family.kind()
            )));
        }
        Ok(())
    }
}

/// Positions of the shared parameters θ within a site's β (the selection
/// matrix `L`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommonSelector {
    indices: Vec<usize>,
}

impl CommonSelector {
    pub fn new(indices: Vec<usize>, p: usize) -> Result<Self> {
        for (k, &i) in indices.iter().enumerate() {
            if i >= p {
                return Err(Error::IndexOutOfRange { index: i, len: p });
            }
            if indices[..k].contains(&i) {
                return Err(Error::InvalidConfig(format!("duplicate common index {i}")));
            }
        }
        if indices.is_empty() {
            return Err(Error::InvalidConfig("no common parameters selected".into()));
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// `p0`
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// `θ = L β`
    pub fn select<T: Scalar>(&self, beta: &[T]) -> Result<Vec<T>> {
        self.indices
            .iter()
            .map(|&i| {
                beta.get(i).copied().ok_or(Error::IndexOutOfRange {
                    index: i,
                    len: beta.len(),
                })
            })
            .collect()
    }

    /// `L M Lᵀ`, the `p0 × p0` block of `m` at the common indices.
    pub fn select_block<T: Scalar>(&self, m: &Matrix<T>) -> Result<Matrix<T>> {
        m.principal_submatrix(&self.indices)
    }

    /// `Lᵀ θ`, zero outside the common positions.
    pub fn embed<T: Scalar>(&self, theta: &[T], p: usize) -> Result<Vec<T>> {
        if theta.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                actual: theta.len(),
            });
        }
        let mut beta = vec![T::zero(); p];
        for (&i, &v) in self.indices.iter().zip(theta) {
            if i >= p {
                return Err(Error::IndexOutOfRange { index: i, len: p });
            }
            beta[i] = v;
        }
        Ok(beta)
    }
}

fn check_beta<T: Scalar>(data: &Dataset<T>, beta: &[T]) -> Result<()> {
    if beta.len() != data.p() {
        return Err(Error::DimensionMismatch {
            expected: data.p(),
            actual: beta.len(),
        });
    }
    Ok(())
}

/// `Σᵢ μ̇ w (yᵢ − μ) xᵢ` at `beta`.
pub fn quasi_score<T: Scalar>(data: &Dataset<T>, beta: &[T], family: &GlmFamily<T>) -> Result<Vec<T>> {
    check_beta(data, beta)?;
    let mut score = vec![T::zero(); data.p()];
    for i in 0..data.n() {
        let x = data.x(i);
        let f = family.evaluate(dot(x, beta));
        let r = f.mu_dot * f.weight * (data.y(i) - f.mu);
        for (s, &xj) in score.iter_mut().zip(x) {
            *s = *s + r * xj;
        }
    }
    Ok(score)
}

/// Un-normalized information `Σᵢ xᵢ (μ̇²/ν) xᵢᵀ` at `beta`.
pub fn information_matrix<T: Scalar>(data: &Dataset<T>, beta: &[T], family: &GlmFamily<T>) -> Result<Matrix<T>> {
    check_beta(data, beta)?;
    let p = data.p();
    let mut info = Matrix::zeros(p, p);
    for i in 0..data.n() {
        let x = data.x(i);
        let w = family.evaluate(dot(x, beta)).information_weight();
        accumulate_outer(&mut info, x, w);
    }
    mirror_upper(&mut info);
    Ok(info)
}

#[inline]
fn accumulate_outer<T: Scalar>(info: &mut Matrix<T>, x: &[T], w: T) {
    let p = x.len();
    for a in 0..p {
        let wa = w * x[a];
        for b in a..p {
            info[(a, b)] = info[(a, b)] + wa * x[b];
        }
    }
}

fn mirror_upper<T: Scalar>(info: &mut Matrix<T>) {
    let p = info.rows();
    for a in 0..p {
        for b in 0..a {
            info[(a, b)] = info[(b, a)];
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions<T> {
    pub init: Option<Vec<T>>,
    /// Convergence threshold on the max-norm of the quasi-score.
    pub tol: T,
    /// The scoring step must also be this small; a vanishing score with a
    /// large step is the signature of separation.
    pub step_tol: T,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// `|xᵀβ|` beyond which a non-converged iterate signals separation.
    pub separation_eta: T,
}

impl<T: Scalar> Default for FitOptions<T> {
    fn default() -> Self {
        Self {
            init: None,
            tol: T::lit(1e-8),
            step_tol: T::lit(1e-6),
            max_iter: 100,
            max_halvings: 20,
            separation_eta: T::lit(30.0),
        }
    }
}

impl<T: Scalar> FitOptions<T> {
    pub fn warm_start(mut self, beta: Vec<T>) -> Self {
        self.init = Some(beta);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<T> {
    pub beta: Vec<T>,
    /// Un-normalized information evaluated at `beta`.
    pub info: Matrix<T>,
    pub converged: bool,
    pub iterations: usize,
    pub score_norm: T,
}

impl<T: Scalar> FitResult<T> {
    /// Turns a non-converged fit into [`Error::NonConvergence`].
    pub fn ensure_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NonConvergence {
                iterations: self.iterations,
                score_norm: self.score_norm.as_f64(),
            })
        }
    }
}

struct Pass<T> {
    score: Vec<T>,
    info: Matrix<T>,
    max_abs_eta: T,
}

impl<T: Scalar> Pass<T> {
    fn score_norm(&self) -> T {
        self.score.iter().fold(T::zero(), |m, &s| m.max(s.abs()))
    }
}

fn evaluate_pass<T: Scalar>(data: &Dataset<T>, beta: &[T], family: &GlmFamily<T>) -> Pass<T> {
    let p = data.p();
    let mut score = vec![T::zero(); p];
    let mut info = Matrix::zeros(p, p);
    let mut max_abs_eta = T::zero();
    for i in 0..data.n() {
        let x = data.x(i);
        let eta = dot(x, beta);
        max_abs_eta = max_abs_eta.max(eta.abs());
        let f = family.evaluate(eta);
        let r = f.mu_dot * f.weight * (data.y(i) - f.mu);
        for (s, &xj) in score.iter_mut().zip(x) {
            *s = *s + r * xj;
        }
        accumulate_outer(&mut info, x, f.information_weight());
    }
    mirror_upper(&mut info);
    Pass {
        score,
        info,
        max_abs_eta,
    }
}

/// Maximum quasi-likelihood estimate by Fisher scoring with step halving.
///
/// A run that exhausts `max_iter` is returned with `converged = false` and
/// the best iterate; use [`FitResult::ensure_converged`] to make that an error.
pub fn fit_mqle<T: Scalar>(data: &Dataset<T>, family: &GlmFamily<T>, options: &FitOptions<T>) -> Result<FitResult<T>> {
    let p = data.p();
    if data.n() < p {
        return Err(Error::InvalidData(format!(
            "{} rows cannot identify {p} parameters",
            data.n()
        )));
    }
    if family.kind() == FamilyKind::Logistic {
        let (n1, n0) = data.class_counts();
        if n1 == 0 || n0 == 0 {
            return Err(Error::DegenerateClasses { n1, n0 });
        }
    }
    let mut beta = match &options.init {
        Some(b) => {
            check_beta(data, b)?;
            b.clone()
        }
        None => vec![T::zero(); p],
    };
    let mut pass = evaluate_pass(data, &beta, family);
    let mut norm = pass.score_norm();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.max_iter {
        let chol = Cholesky::factor(&pass.info).ok_or(Error::SingularInformation)?;
        let delta = chol.solve(&pass.score);
        let step_norm = delta.iter().fold(T::zero(), |m, &d| m.max(d.abs()));
        if norm <= options.tol && step_norm <= options.step_tol {
            converged = true;
            break;
        }
        // a warm start may sit far out; only judge iterates this fit produced
        if iterations > 0 && pass.max_abs_eta > options.separation_eta {
            return Err(Error::SeparationSuspected {
                max_abs_eta: pass.max_abs_eta.as_f64(),
            });
        }
        iterations += 1;

        let mut step = T::one();
        let mut accepted = None;
        for _ in 0..=options.max_halvings {
            let candidate: Vec<T> = beta.iter().zip(&delta).map(|(&b, &d)| b + step * d).collect();
            let cand_pass = evaluate_pass(data, &candidate, family);
            let cand_norm = cand_pass.score_norm();
            if cand_norm < norm || (norm <= options.tol && cand_norm <= options.tol) {
                accepted = Some((candidate, cand_pass, cand_norm));
                break;
            }
            step = step * T::lit(0.5);
        }
        match accepted {
            Some((b, ps, n)) => {
                beta = b;
                pass = ps;
                norm = n;
            }
            // no descent along the scoring direction: the current iterate is
            // the best available
            None => break,
        }
    }
    Ok(FitResult {
        beta,
        info: pass.info,
        converged,
        iterations,
        score_norm: norm,
    })
}

/// Fitted means `μ(xᵢᵀβ)` for every row.
pub fn fitted_values<T: Scalar>(data: &Dataset<T>, beta: &[T], family: &GlmFamily<T>) -> Result<Vec<T>> {
    check_beta(data, beta)?;
    Ok((0..data.n())
        .map(|i| family.evaluate(dot(data.x(i), beta)).mu)
        .collect())
}

pub use crate::linalg::max_eigenvalue;
