use std::fmt;
use std::path::{Path, PathBuf};

use dsfl_core::sim::{BetaSetup, CovariateScheme, Proportions, SimDesign};
use dsfl_core::{ExhaustionPolicy, SamplerKind};
use serde::Deserialize;

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Simulation,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerName {
    Random,
    #[serde(alias = "a_optimal", alias = "adaptive")]
    Aopt,
}

impl SamplerName {
    pub fn kind(self) -> SamplerKind {
        match self {
            SamplerName::Random => SamplerKind::Random,
            SamplerName::Aopt => SamplerKind::AOptimal,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SamplerName::Random => "random",
            SamplerName::Aopt => "aopt",
        }
    }
}

impl fmt::Display for SamplerName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Columns of a CSV data source.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSource {
    pub path: PathBuf,
    pub response: String,
    pub site: String,
    /// Covariates shared by all sites, in θ order.
    pub common: Vec<String>,
    /// `None` means every remaining column that is observed and not constant
    /// within the site.
    pub site_specific: Option<Vec<String>>,
    pub budget_weights: Option<Vec<f64>>,
}

/// Raw file layout; every key is optional so defaults live in one place.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    source: Option<Source>,
    beta_setup: Option<String>,
    proportions: Option<String>,
    budget_weights: Option<Vec<f64>>,
    covariates: Option<String>,
    sites: Option<usize>,
    pool_size: Option<usize>,
    d1: Option<Vec<f64>>,
    d2: Option<Vec<f64>>,
    alpha: Option<f64>,
    replications: Option<usize>,
    samplers: Option<Vec<SamplerName>>,
    master_seed: Option<u64>,
    output_dir: Option<PathBuf>,
    threads: Option<usize>,
    max_failure_rate: Option<f64>,
    n0: Option<usize>,
    candidate_subsample: Option<usize>,
    exhaustion: Option<String>,
    trace: Option<bool>,
    oracle_draws: Option<usize>,
    data: Option<PathBuf>,
    response: Option<String>,
    site: Option<String>,
    common: Option<Vec<String>>,
    site_specific: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Design {
    Simulation(SimDesign),
    Csv(DataSource),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub design: Design,
    pub d1_grid: Vec<f64>,
    pub d2_grid: Vec<f64>,
    pub alpha: f64,
    pub replications: usize,
    pub samplers: Vec<SamplerName>,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// 0 means one per available core.
    pub threads: usize,
    /// Share of failed replications above which the run is reported as failed.
    pub max_failure_rate: f64,
    pub n0: Option<usize>,
    pub candidate_subsample: Option<usize>,
    pub exhaustion: ExhaustionPolicy,
    pub trace: bool,
    /// Monte Carlo draws for the true information used by the efficiency ratio;
    /// 0 skips the ratio.
    pub oracle_draws: usize,
}

impl ExperimentConfig {
    pub fn simulation(design: SimDesign) -> Self {
        Self {
            design: Design::Simulation(design),
            d1_grid: vec![0.2],
            d2_grid: vec![0.05],
            alpha: 0.05,
            replications: 200,
            samplers: vec![SamplerName::Random],
            master_seed: 1,
            output_dir: PathBuf::from("dsfl-out"),
            threads: 0,
            max_failure_rate: 0.1,
            n0: None,
            candidate_subsample: None,
            exhaustion: ExhaustionPolicy::Abort,
            trace: false,
            oracle_draws: 1_000_000,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        Self::from_raw(raw)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    fn from_raw(raw: RawConfig) -> Result<Self, HarnessError> {
        let bad = |msg: String| HarnessError::Config(msg);
        let source = raw.source.unwrap_or(Source::Simulation);
        let design = match source {
            Source::Simulation => {
                let beta_setup = match raw.beta_setup.as_deref().unwrap_or("B1") {
                    s if s.eq_ignore_ascii_case("b1") => BetaSetup::B1,
                    s if s.eq_ignore_ascii_case("b2") => BetaSetup::B2,
                    s => return Err(bad(format!("beta_setup must be B1 or B2, got {s:?}"))),
                };
                let proportions = match (raw.proportions.as_deref(), raw.budget_weights) {
                    (Some(_), Some(_)) => {
                        return Err(bad("give either proportions or budget_weights, not both".into()))
                    }
                    (None, Some(w)) => Proportions::Weights(w),
                    (None, None) => Proportions::P1,
                    (Some(s), None) if s.eq_ignore_ascii_case("p1") => Proportions::P1,
                    (Some(s), None) if s.eq_ignore_ascii_case("p2") => Proportions::P2,
                    (Some(s), None) => return Err(bad(format!("proportions must be p1 or p2, got {s:?}"))),
                };
                let covariates = match raw.covariates.as_deref().unwrap_or("h1") {
                    s if s.eq_ignore_ascii_case("h1") => CovariateScheme::H1,
                    s if s.eq_ignore_ascii_case("h2") => CovariateScheme::H2,
                    s => return Err(bad(format!("covariates must be h1 or h2, got {s:?}"))),
                };
                let master_seed = raw.master_seed.unwrap_or(1);
                let design = SimDesign {
                    beta_setup,
                    proportions,
                    covariates,
                    sites: raw.sites.unwrap_or(5),
                    pool_size: raw.pool_size.unwrap_or(20_000),
                    seed: master_seed,
                };
                design.validate().map_err(|e| bad(e.to_string()))?;
                Design::Simulation(design)
            }
            Source::Csv => {
                let need = |v: Option<String>, key: &str| v.ok_or_else(|| bad(format!("csv source needs `{key}`")));
                Design::Csv(DataSource {
                    path: raw.data.ok_or_else(|| bad("csv source needs `data`".into()))?,
                    response: need(raw.response, "response")?,
                    site: need(raw.site, "site")?,
                    common: raw.common.ok_or_else(|| bad("csv source needs `common`".into()))?,
                    site_specific: raw.site_specific,
                    budget_weights: raw.budget_weights,
                })
            }
        };
        let exhaustion = match raw.exhaustion.as_deref().unwrap_or("abort") {
            "abort" => ExhaustionPolicy::Abort,
            "renormalize" => ExhaustionPolicy::Renormalize,
            s => return Err(bad(format!("exhaustion must be abort or renormalize, got {s:?}"))),
        };
        let mut cfg = Self {
            design,
            d1_grid: raw.d1.unwrap_or_else(|| vec![0.2]),
            d2_grid: raw.d2.unwrap_or_else(|| vec![0.05]),
            alpha: raw.alpha.unwrap_or(0.05),
            replications: raw.replications.unwrap_or(200),
            samplers: raw.samplers.unwrap_or_else(|| vec![SamplerName::Random]),
            master_seed: raw.master_seed.unwrap_or(1),
            output_dir: raw.output_dir.unwrap_or_else(|| PathBuf::from("dsfl-out")),
            threads: raw.threads.unwrap_or(0),
            max_failure_rate: raw.max_failure_rate.unwrap_or(0.1),
            n0: raw.n0,
            candidate_subsample: raw.candidate_subsample,
            exhaustion,
            trace: raw.trace.unwrap_or(false),
            oracle_draws: raw.oracle_draws.unwrap_or(1_000_000),
        };
        cfg.samplers.dedup();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        for (name, grid) in [("d1", &self.d1_grid), ("d2", &self.d2_grid)] {
            if grid.is_empty() {
                return bad(format!("{name} grid is empty"));
            }
            if let Some(v) = grid.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
                return bad(format!("{name} values must be positive, got {v}"));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.samplers.is_empty() {
            return bad("samplers must name at least one of random, aopt".into());
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return bad(format!(
                "max_failure_rate must lie in [0, 1], got {}",
                self.max_failure_rate
            ));
        }
        if let Design::Simulation(d) = &self.design {
            d.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
            if d.seed != self.master_seed {
                return bad("simulation seed and master_seed differ".into());
            }
        }
        Ok(())
    }

    /// Short design label such as `B1-p1-h1`.
    pub fn design_label(&self) -> String {
        match &self.design {
            Design::Simulation(d) => {
                let b = match d.beta_setup {
                    BetaSetup::B1 => "B1",
                    BetaSetup::B2 => "B2",
                };
                let p = match d.proportions {
                    Proportions::P1 => "p1",
                    Proportions::P2 => "p2",
                    Proportions::Weights(_) => "pw",
                };
                let h = match d.covariates {
                    CovariateScheme::H1 => "h1",
                    CovariateScheme::H2 => "h2",
                };
                format!("{b}-{p}-{h}")
            }
            Design::Csv(src) => src
                .path
                .file_stem()
                .map_or_else(|| "data".to_string(), |s| s.to_string_lossy().into_owned()),
        }
    }

    /// Sets the master seed, keeping a simulation design's seed in step.
    pub fn set_seed(&mut self, seed: u64) {
        self.master_seed = seed;
        if let Design::Simulation(d) = &mut self.design {
            d.seed = seed;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_from_empty_file() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg.replications, 200);
        assert_eq!(cfg.design_label(), "B1-p1-h1");
        assert_eq!(cfg.samplers, vec![SamplerName::Random]);
    }

    #[test]
    fn full_simulation_file() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            beta_setup = "B2"
            proportions = "p2"
            covariates = "h2"
            d1 = [0.4, 0.3]
            d2 = [0.06]
            samplers = ["random", "aopt"]
            replications = 3
            master_seed = 99
            exhaustion = "renormalize"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.design_label(), "B2-p2-h2");
        assert_eq!(cfg.d1_grid, vec![0.4, 0.3]);
        assert_eq!(cfg.exhaustion, ExhaustionPolicy::Renormalize);
        let Design::Simulation(d) = &cfg.design else { panic!() };
        assert_eq!(d.seed, 99);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "d1 = []",
            "d2 = [0.0]",
            "alpha = 1.5",
            "replications = 0",
            "beta_setup = \"B3\"",
            "unknown_key = 1",
            "beta_setup = \"B2\"\nsites = 4",
            "source = \"csv\"",
        ] {
            assert!(ExperimentConfig::from_toml_str(text).is_err(), "{text}");
        }
    }
}
