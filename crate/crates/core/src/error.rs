use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("quasi-likelihood fit did not converge after {iterations} iterations (score norm {score_norm:e})")]
    NonConvergence { iterations: usize, score_norm: f64 },
    #[error("information matrix is singular")]
    SingularInformation,
    #[error("separation suspected: |x'beta| reached {max_abs_eta:.1} before convergence")]
    SeparationSuspected { max_abs_eta: f64 },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("both response classes are required (n1 = {n1}, n0 = {n0})")]
    DegenerateClasses { n1: usize, n0: usize },
    #[error("argument outside its domain: {0}")]
    Domain(String),
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error("initial sample infeasible: {0}")]
    InitInfeasible(String),
    /// `site` is 0-based; the message numbers sites from 1.
    #[error("site {} exhausted its pool before the stopping rule was met", site + 1)]
    ExhaustedSite { site: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
}

pub type Result<T> = std::result::Result<T, Error>;
