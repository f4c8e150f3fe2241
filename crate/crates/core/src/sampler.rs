//! Recruitment strategies over a site's inactive pool: uniform random and
//! A-optimal selection.
//!
//! The A-optimal score of a candidate `x` with information weight `c` is
//! `tr((A + c x xᵀ)⁻¹)`, evaluated through the rank-one identity
//!
//! ```text
//! tr(A⁻¹) − c · xᵀA⁻²x / (1 + c · xᵀA⁻¹x)
//! ```
//!
//! so a scan over the pool never inverts a matrix.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::glm::{Dataset, GlmFamily};
use crate::linalg::{dot, Matrix};
use crate::scalar::Scalar;

/// Partition of a site's rows into recruited (`active`) and not yet
/// recruited (`inactive`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidatePool {
    inactive: Vec<usize>,
    active: Vec<usize>,
}

impl CandidatePool {
    pub fn new(n: usize) -> Self {
        Self {
            inactive: (0..n).collect(),
            active: Vec::new(),
        }
    }

    pub fn inactive(&self) -> &[usize] {
        &self.inactive
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn len(&self) -> usize {
        self.inactive.len() + self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn has_candidates(&self) -> bool {
        !self.inactive.is_empty()
    }

    /// Moves the inactive entry at `position` to the active set.
    fn take_at(&mut self, position: usize) -> usize {
        let idx = self.inactive.swap_remove(position);
        self.active.push(idx);
        idx
    }

    /// Moves the row `idx` to the active set.
    pub fn take(&mut self, idx: usize) -> Result<usize> {
        let pos = self
            .inactive
            .iter()
            .position(|&i| i == idx)
            .ok_or(Error::IndexOutOfRange {
                index: idx,
                len: self.len(),
            })?;
        Ok(self.take_at(pos))
    }

    /// Returns an active row to the inactive set.
    pub fn release(&mut self, idx: usize) -> Result<()> {
        let pos = self
            .active
            .iter()
            .position(|&i| i == idx)
            .ok_or(Error::IndexOutOfRange {
                index: idx,
                len: self.len(),
            })?;
        self.active.swap_remove(pos);
        self.inactive.push(idx);
        Ok(())
    }
}

/// Draws one inactive row uniformly at random and activates it.
pub fn select_random<R: Rng + ?Sized>(pool: &mut CandidatePool, rng: &mut R) -> Result<usize> {
    if pool.inactive.is_empty() {
        return Err(Error::EmptyPool);
    }
    let pos = rng.random_range(0..pool.inactive.len());
    Ok(pool.take_at(pos))
}

/// `tr((A + c x xᵀ)⁻¹)` given `A⁻¹`, via the rank-one identity.
pub fn a_optimal_score<T: Scalar>(a_inv: &Matrix<T>, x: &[T], c: T) -> T {
    let mut y = vec![T::zero(); x.len()];
    rank_one_trace(a_inv.trace(), a_inv, x, c, &mut y)
}

#[inline]
fn rank_one_trace<T: Scalar>(trace: T, a_inv: &Matrix<T>, x: &[T], c: T, y: &mut [T]) -> T {
    for (i, yi) in y.iter_mut().enumerate() {
        *yi = dot(a_inv.row(i), x);
    }
    let q1 = dot(x, y);
    let q2 = dot(y, y);
    trace - c * q2 / (T::one() + c * q1)
}

/// Plug-in state the A-optimal criterion is evaluated at.
#[derive(Debug, Clone, Copy)]
pub struct AOptimalContext<'a, T> {
    /// Inverse of the current information `Σ_k`.
    pub a_inv: &'a Matrix<T>,
    /// Current estimate `β̃_k`.
    pub beta: &'a [T],
    pub family: &'a GlmFamily<T>,
}

/// Scores every inactive candidate (or a random subset of `subsample` of
/// them) and activates the minimiser. Equal scores resolve to the lowest row
/// index.
pub fn select_a_optimal<T: Scalar, R: Rng + ?Sized>(
    data: &Dataset<T>,
    ctx: AOptimalContext<'_, T>,
    pool: &mut CandidatePool,
    subsample: Option<(usize, &mut R)>,
) -> Result<usize> {
    if pool.inactive.is_empty() {
        return Err(Error::EmptyPool);
    }
    let p = data.p();
    if ctx.a_inv.rows() != p || ctx.beta.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            actual: ctx.a_inv.rows(),
        });
    }
    let trace = ctx.a_inv.trace();
    let mut y = vec![T::zero(); p];
    let mut best: Option<(T, usize, usize)> = None;
    let mut consider = |pos: usize, best: &mut Option<(T, usize, usize)>| {
        let idx = pool.inactive[pos];
        let x = data.x(idx);
        let c = ctx.family.evaluate(dot(x, ctx.beta)).information_weight();
        let score = rank_one_trace(trace, ctx.a_inv, x, c, &mut y);
        let better = match best {
            None => true,
            Some((s, i, _)) => score < *s || (score == *s && idx < *i),
        };
        if better {
            *best = Some((score, idx, pos));
        }
    };
    match subsample {
        Some((m, rng)) if m < pool.inactive.len() => {
            for pos in index::sample(rng, pool.inactive.len(), m) {
                consider(pos, &mut best);
            }
        }
        _ => {
            for pos in 0..pool.inactive.len() {
                consider(pos, &mut best);
            }
        }
    }
    let (_, _, pos) = best.expect("nonempty pool has a best candidate");
    Ok(pool.take_at(pos))
}
