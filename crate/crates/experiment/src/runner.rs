//! Replication loop: for each replication, generate (or reuse) the site
//! pools, run every grid cell on them, combine and score.

use dsfl_core::federation::run_sites;
use dsfl_core::sequential::TraceRow;
use dsfl_core::sim::{generate_pool, site_parameters, true_common_blocks, THETA0};
use dsfl_core::stats::{mean, sample_variance};
use dsfl_core::{
    combine, confidence_set_contains, efficiency_diagnostics, equal_weight_average, wald_statistic, CommonSelector,
    Dataset64, Error, FederationPlan, GlmFamily, Matrix64, SiteConfig64, SiteResult64,
};
use rayon::prelude::*;

use crate::config::{Design, ExperimentConfig, SamplerName};
use crate::ingest::load_dataset;
use crate::HarnessError;

/// One point of the (sampler, d1, d2) grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub sampler: SamplerName,
    pub d1: f64,
    pub d2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureReason {
    Exhausted,
    InitInfeasible,
    NonConvergence,
    Singular,
    Separation,
    Other,
}

impl FailureReason {
    pub fn code(self) -> &'static str {
        match self {
            FailureReason::Exhausted => "exhausted",
            FailureReason::InitInfeasible => "init_infeasible",
            FailureReason::NonConvergence => "nonconvergence",
            FailureReason::Singular => "singular_information",
            FailureReason::Separation => "separation",
            FailureReason::Other => "other",
        }
    }

    fn of(err: &Error) -> Self {
        match err {
            Error::ExhaustedSite { .. } => FailureReason::Exhausted,
            Error::InitInfeasible(_) => FailureReason::InitInfeasible,
            Error::NonConvergence { .. } => FailureReason::NonConvergence,
            Error::SingularInformation => FailureReason::Singular,
            Error::SeparationSuspected { .. } => FailureReason::Separation,
            _ => FailureReason::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub rep: usize,
    pub site: Option<usize>,
    pub reason: FailureReason,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepRecord {
    pub rep: usize,
    pub n_hat: usize,
    /// Stopping time per site; 0 for a site dropped from the combination.
    pub n_per_site: Vec<usize>,
    pub theta_hat: Vec<f64>,
    /// Whether θ₀ lies in the combined set; `None` without a known θ₀.
    pub covered: Option<bool>,
    /// Wald statistic at θ₀ (NaN without a known θ₀).
    pub wald: f64,
    pub auc_mean: f64,
    pub site_theta: Vec<Vec<f64>>,
    pub site_auc: Vec<f64>,
    pub equal_average: Vec<f64>,
    /// `d1² N̂ / (a² μ)` against the true information, when available.
    pub efficiency_ratio: Option<f64>,
}

/// Per-site step logs, keyed by 0-based site.
pub type SiteTraces = Vec<(usize, Vec<TraceRow<f64>>)>;

#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: Cell,
    pub records: Vec<RepRecord>,
    pub failures: Vec<Failure>,
    /// Per-step logs of the first replication, when tracing.
    pub trace: SiteTraces,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub label: String,
    pub sites: usize,
    pub p0: usize,
    pub replications: usize,
    pub theta0: Option<Vec<f64>>,
    pub cells: Vec<CellResult>,
}

impl ExperimentOutput {
    pub fn failure_rate_exceeded(&self, max_rate: f64) -> bool {
        self.cells
            .iter()
            .any(|c| c.failures.len() as f64 > max_rate * self.replications as f64)
    }
}

pub fn cells(config: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &sampler in &config.samplers {
        for &d1 in &config.d1_grid {
            for &d2 in &config.d2_grid {
                out.push(Cell { sampler, d1, d2 });
            }
        }
    }
    out
}

/// Everything that stays fixed across replications.
struct Context {
    config: ExperimentConfig,
    cells: Vec<Cell>,
    sites: usize,
    selectors: Vec<CommonSelector>,
    fixed_pools: Option<Vec<Dataset64>>,
    plan: FederationPlan<f64>,
    theta0: Option<Vec<f64>>,
    true_blocks: Option<Vec<Matrix64>>,
}

impl Context {
    fn new(config: &ExperimentConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let (sites, selectors, fixed_pools, weights, theta0, true_blocks) = match &config.design {
            Design::Simulation(d) => {
                let selectors = (0..d.sites)
                    .map(|j| site_parameters(d, j).map(|(_, s)| s))
                    .collect::<Result<Vec<_>, _>>()?;
                let blocks = if config.oracle_draws > 0 {
                    Some(true_common_blocks(d, config.oracle_draws, config.master_seed)?)
                } else {
                    None
                };
                (
                    d.sites,
                    selectors,
                    None,
                    d.budget_weights(),
                    Some(THETA0.to_vec()),
                    blocks,
                )
            }
            Design::Csv(src) => {
                let loaded = load_dataset(src)?;
                let m = loaded.pools.len();
                (
                    m,
                    loaded.selectors,
                    Some(loaded.pools),
                    src.budget_weights.clone(),
                    None,
                    None,
                )
            }
        };
        let p0 = selectors[0].len();
        let plan = FederationPlan::new(p0, config.alpha, sites, weights.as_deref())
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(Self {
            config: config.clone(),
            cells: cells(config),
            sites,
            selectors,
            fixed_pools,
            plan,
            theta0,
            true_blocks,
        })
    }

    fn site_configs(&self, cell: &Cell) -> Vec<SiteConfig64> {
        (0..self.sites)
            .map(|j| {
                let mut c = SiteConfig64::new(
                    GlmFamily::Logistic,
                    self.selectors[j].clone(),
                    self.plan.a_tilde_sq[j],
                    cell.d1,
                    cell.d2,
                    self.config.alpha,
                )
                .with_sampler(cell.sampler.kind());
                c.n0 = self.config.n0;
                c.candidate_subsample = self.config.candidate_subsample;
                c.record_trace = self.config.trace;
                c
            })
            .collect()
    }

    fn pools_for(&self, rep: usize) -> Result<Vec<Dataset64>, Error> {
        match (&self.config.design, &self.fixed_pools) {
            (_, Some(pools)) => Ok(pools.clone()),
            (Design::Simulation(d), None) => (0..self.sites).map(|j| generate_pool(d, rep as u64, j)).collect(),
            (Design::Csv(_), None) => unreachable!("csv pools are loaded up front"),
        }
    }

    fn run_cell(&self, pools: &[Dataset64], cell: &Cell, rep: usize) -> (Result<RepRecord, Failure>, SiteTraces) {
        let fail = |site: Option<usize>, err: &Error| Failure {
            rep,
            site,
            reason: FailureReason::of(err),
            message: err.to_string(),
        };
        let configs = self.site_configs(cell);
        let outcomes = match run_sites(pools, &configs, self.config.master_seed, rep as u64, false) {
            Ok(o) => o,
            Err(e) => return (Err(fail(None, &e)), Vec::new()),
        };
        let mut results: Vec<SiteResult64> = Vec::with_capacity(self.sites);
        for (j, out) in outcomes.into_iter().enumerate() {
            match out {
                Ok(r) => results.push(r),
                Err(e) => return (Err(fail(Some(j), &e)), Vec::new()),
            }
        }
        let trace = if self.config.trace && rep == 0 {
            results.iter().enumerate().map(|(j, r)| (j, r.trace.clone())).collect()
        } else {
            Vec::new()
        };
        let combined = match combine(&results, self.config.exhaustion) {
            Ok(c) => c,
            Err(e) => {
                let site = match e {
                    Error::ExhaustedSite { site } => Some(site),
                    _ => None,
                };
                return (Err(fail(site, &e)), trace);
            }
        };
        let included: Vec<SiteResult64> = combined.included.iter().map(|&j| results[j].clone()).collect();
        let (covered, wald) = match &self.theta0 {
            Some(t0) => {
                let covered = match confidence_set_contains(&combined, t0, cell.d1) {
                    Ok(c) => c,
                    Err(e) => return (Err(fail(None, &e)), trace),
                };
                let wald = match wald_statistic(&combined, t0) {
                    Ok(w) => w,
                    Err(e) => return (Err(fail(None, &e)), trace),
                };
                (Some(covered), wald)
            }
            None => (None, f64::NAN),
        };
        let efficiency_ratio = self.true_blocks.as_ref().and_then(|blocks| {
            let used: Vec<Matrix64> = combined.included.iter().map(|&j| blocks[j].clone()).collect();
            efficiency_diagnostics(&combined, &used, cell.d1, self.plan.a_sq)
                .ok()
                .map(|d| d.ratio)
        });
        let mut n_per_site = vec![0; self.sites];
        for (&j, &n) in combined.included.iter().zip(&combined.n_per_site) {
            n_per_site[j] = n;
        }
        let site_auc: Vec<f64> = results.iter().map(|r| r.criterion_value).collect();
        let record = RepRecord {
            rep,
            n_hat: combined.n_hat,
            n_per_site,
            auc_mean: mean(&included.iter().map(|r| r.criterion_value).collect::<Vec<_>>()),
            theta_hat: combined.theta_hat.clone(),
            covered,
            wald,
            site_theta: results.iter().map(|r| r.theta.clone()).collect(),
            site_auc,
            equal_average: equal_weight_average(&included),
            efficiency_ratio,
        };
        (Ok(record), trace)
    }

    fn run_rep(&self, rep: usize) -> Vec<(Result<RepRecord, Failure>, SiteTraces)> {
        let pools = match self.pools_for(rep) {
            Ok(p) => p,
            Err(e) => {
                let f = Failure {
                    rep,
                    site: None,
                    reason: FailureReason::of(&e),
                    message: e.to_string(),
                };
                return self.cells.iter().map(|_| (Err(f.clone()), Vec::new())).collect();
            }
        };
        self.cells.iter().map(|cell| self.run_cell(&pools, cell, rep)).collect()
    }
}

/// Runs every replication of every grid cell. Results are identical for
/// any thread count.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    let ctx = Context::new(config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| HarnessError::Config(format!("cannot start {} threads: {e}", config.threads)))?;
    let per_rep: Vec<_> = pool.install(|| {
        (0..config.replications)
            .into_par_iter()
            .map(|rep| ctx.run_rep(rep))
            .collect()
    });

    let mut cells: Vec<CellResult> = ctx
        .cells
        .iter()
        .map(|&cell| CellResult {
            cell,
            records: Vec::new(),
            failures: Vec::new(),
            trace: Vec::new(),
        })
        .collect();
    for rep_out in per_rep {
        for (cell, (outcome, trace)) in cells.iter_mut().zip(rep_out) {
            match outcome {
                Ok(r) => cell.records.push(r),
                Err(f) => cell.failures.push(f),
            }
            if !trace.is_empty() {
                cell.trace = trace;
            }
        }
    }
    Ok(ExperimentOutput {
        label: config.design_label(),
        sites: ctx.sites,
        p0: ctx.plan.p0,
        replications: config.replications,
        theta0: ctx.theta0,
        cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self {
                mean: f64::NAN,
                sd: f64::NAN,
            };
        }
        let sd = if xs.len() > 1 { sample_variance(xs).sqrt() } else { 0.0 };
        Self { mean: mean(xs), sd }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub design: String,
    pub cell: Cell,
    pub completed: usize,
    pub failures: usize,
    pub n_hat: MeanSd,
    pub n_site: Vec<MeanSd>,
    /// Coverage frequency over completed replications.
    pub coverage: Option<f64>,
    pub auc: MeanSd,
    pub efficiency_ratio: Option<f64>,
}

pub fn summarize(output: &ExperimentOutput) -> Vec<SummaryRow> {
    output
        .cells
        .iter()
        .map(|c| {
            let recs = &c.records;
            let col = |f: &dyn Fn(&RepRecord) -> f64| recs.iter().map(f).collect::<Vec<f64>>();
            let covered: Vec<bool> = recs.iter().filter_map(|r| r.covered).collect();
            let coverage = (!covered.is_empty() && covered.len() == recs.len())
                .then(|| covered.iter().filter(|&&b| b).count() as f64 / covered.len() as f64);
            let ratios: Vec<f64> = recs.iter().filter_map(|r| r.efficiency_ratio).collect();
            SummaryRow {
                design: output.label.clone(),
                cell: c.cell,
                completed: recs.len(),
                failures: c.failures.len(),
                n_hat: MeanSd::of(&col(&|r| r.n_hat as f64)),
                n_site: (0..output.sites)
                    .map(|j| MeanSd::of(&col(&|r| r.n_per_site[j] as f64)))
                    .collect(),
                coverage,
                auc: MeanSd::of(&col(&|r| r.auc_mean)),
                efficiency_ratio: (!ratios.is_empty() && ratios.len() == recs.len()).then(|| mean(&ratios)),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasRow {
    /// `proposed`, `average`, or `site<j>` (1-based).
    pub estimator: String,
    /// 1-based index into θ.
    pub component: usize,
    pub abs_bias: MeanSd,
}

/// Mean and sd of `|θ̂_k − θ₀_k|` for the combiner, the equal-weight
/// average and every single site.
pub fn compute_bias_table(records: &[RepRecord], theta0: &[f64]) -> Vec<BiasRow> {
    let Some(first) = records.first() else {
        return Vec::new();
    };
    // 0 = proposed, 1 = average, 2.. = single sites
    let estimate = |r: &RepRecord, e: usize| -> Vec<f64> {
        match e {
            0 => r.theta_hat.clone(),
            1 => r.equal_average.clone(),
            j => r.site_theta[j - 2].clone(),
        }
    };
    let name = |e: usize| match e {
        0 => "proposed".to_string(),
        1 => "average".to_string(),
        j => format!("site{}", j - 1),
    };
    let mut rows = Vec::new();
    for e in 0..first.site_theta.len() + 2 {
        let values: Vec<Vec<f64>> = records.iter().map(|r| estimate(r, e)).collect();
        for (k, &t0) in theta0.iter().enumerate() {
            let dev: Vec<f64> = values.iter().map(|v| (v[k] - t0).abs()).collect();
            rows.push(BiasRow {
                estimator: name(e),
                component: k + 1,
                abs_bias: MeanSd::of(&dev),
            });
        }
    }
    rows
}
