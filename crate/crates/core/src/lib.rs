//! Distributed sequential estimation for generalized linear models.
//!
//! Each site recruits observations one at a time until a fixed-size
//! confidence ellipsoid for the shared parameters and a precision bound on
//! its prediction index are both met. The sites' estimates are then pooled
//! with weights proportional to their stopping times.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix the scalar type.

pub mod ellipsoid;
pub mod error;
pub mod federation;
pub mod glm;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod sequential;
pub mod sim;
pub mod stats;

pub use ellipsoid::ConfidenceEllipsoid;
pub use error::{Error, Result};
pub use federation::{
    allocate_atilde, combine, combined_ellipsoid, confidence_set_contains, efficiency_diagnostics,
    equal_weight_average, normalized_cross_check, run_sites, wald_statistic, CombinedResult, EfficiencyDiagnostics,
    ExhaustionPolicy, FederationPlan,
};
pub use glm::{
    fit_mqle, fitted_values, information_matrix, quasi_score, CommonSelector, Dataset, FamilyKind, FitOptions,
    FitResult, GlmFamily,
};
pub use linalg::Matrix;
pub use metrics::{auc_estimate, auc_variance, AucVarianceMethod, TieRule};
pub use sampler::{a_optimal_score, select_a_optimal, select_random, CandidatePool};
pub use scalar::Scalar;
pub use sequential::{
    check_stop, run_site, site_confidence_set, Criterion, SamplerKind, SiteConfig, SiteResult, SiteState,
};

pub type Matrix64 = Matrix<f64>;
pub type Dataset64 = Dataset<f64>;
pub type FitResult64 = FitResult<f64>;
pub type SiteConfig64 = SiteConfig<f64>;
pub type SiteResult64 = SiteResult<f64>;
pub type CombinedResult64 = CombinedResult<f64>;

pub type Matrix32 = Matrix<f32>;
pub type Dataset32 = Dataset<f32>;
pub type FitResult32 = FitResult<f32>;
pub type SiteConfig32 = SiteConfig<f32>;
pub type SiteResult32 = SiteResult<f32>;
pub type CombinedResult32 = CombinedResult<f32>;
