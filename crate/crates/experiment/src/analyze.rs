//! Single federated analysis of a real multi-site CSV file.

use std::fmt::Write as _;
use std::path::Path;

use dsfl_core::federation::run_sites;
use dsfl_core::rng::{stream_rng, StreamPurpose};
use dsfl_core::stats::normal_quantile;
use dsfl_core::{
    combine, CombinedResult64, Dataset64, ExhaustionPolicy, FederationPlan, GlmFamily, SamplerKind, SiteConfig64,
};
use rand::seq::SliceRandom;

use crate::config::DataSource;
use crate::ingest::load_dataset;
use crate::HarnessError;

#[derive(Debug, Clone)]
pub struct AnalyzeOptions {
    pub source: DataSource,
    pub d1: f64,
    pub d2: f64,
    pub alpha: f64,
    pub sampler: SamplerKind,
    /// Seeds both the row shuffle and recruitment.
    pub seed: u64,
    pub n0: Option<usize>,
    pub trace: bool,
}

#[derive(Debug, Clone)]
pub struct SiteSummary {
    pub name: String,
    pub pool_rows: usize,
    pub stopping_time: usize,
    pub exhausted: bool,
    pub auc: f64,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AnalysisReport {
    pub seed: u64,
    pub common: Vec<String>,
    pub sites: Vec<SiteSummary>,
    pub combined: CombinedResult64,
    /// Per-parameter `θ̂ ± z_{1−α/2} sqrt(Σ̃_kk)`.
    pub wald_intervals: Vec<(f64, f64)>,
    pub alpha: f64,
    pub dropped_rows: usize,
    pub trace_csv: Option<String>,
}

fn shuffled(pool: &Dataset64, seed: u64, site: usize) -> Result<Dataset64, HarnessError> {
    let mut order: Vec<usize> = (0..pool.n()).collect();
    let mut rng = stream_rng(seed, 0, site as u64, StreamPurpose::Auxiliary);
    order.shuffle(&mut rng);
    Ok(pool.subset(&order)?)
}

/// Loads the file, runs every site, and combines the sites that stopped.
/// Sites whose pool runs out are reported and left out of the combination.
pub fn analyze(opts: &AnalyzeOptions) -> Result<AnalysisReport, HarnessError> {
    for (name, v) in [("--d1", opts.d1), ("--d2", opts.d2)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(HarnessError::Config(format!("{name} must be positive, got {v}")));
        }
    }
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(HarnessError::Config(format!(
            "--alpha must lie in (0, 1), got {}",
            opts.alpha
        )));
    }
    let loaded = load_dataset(&opts.source)?;
    let m = loaded.pools.len();
    let p0 = opts.source.common.len();
    let plan = FederationPlan::new(p0, opts.alpha, m, opts.source.budget_weights.as_deref())
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let pools = loaded
        .pools
        .iter()
        .enumerate()
        .map(|(j, p)| shuffled(p, opts.seed, j))
        .collect::<Result<Vec<_>, _>>()?;
    let configs: Vec<SiteConfig64> = (0..m)
        .map(|j| {
            let mut c = SiteConfig64::new(
                GlmFamily::Logistic,
                loaded.selectors[j].clone(),
                plan.a_tilde_sq[j],
                opts.d1,
                opts.d2,
                opts.alpha,
            )
            .with_sampler(opts.sampler);
            c.n0 = opts.n0;
            c.record_trace = opts.trace;
            c
        })
        .collect();
    for (j, (pool, cfg)) in pools.iter().zip(&configs).enumerate() {
        let n0 = cfg.initial_size(pool.p());
        if pool.n() < n0 {
            return Err(HarnessError::Data(format!(
                "site `{}` has {} complete rows; the initial sample needs {n0}",
                loaded.site_names[j],
                pool.n()
            )));
        }
    }
    let results = run_sites(&pools, &configs, opts.seed, 0, true)?
        .into_iter()
        .enumerate()
        .map(|(j, r)| r.map_err(|e| HarnessError::Data(format!("site `{}`: {e}", loaded.site_names[j]))))
        .collect::<Result<Vec<_>, _>>()?;
    let combined = combine(&results, ExhaustionPolicy::Renormalize)
        .map_err(|_| HarnessError::Data("no site reached its stopping rule; try a larger d1 or d2".into()))?;
    let z = normal_quantile(1.0 - opts.alpha / 2.0)?;
    let wald_intervals = (0..p0)
        .map(|k| {
            let half = z * combined.sigma_tilde[(k, k)].sqrt();
            (combined.theta_hat[k] - half, combined.theta_hat[k] + half)
        })
        .collect();
    let trace_csv = opts.trace.then(|| {
        let mut buf = b"site,step,k,mu_jk,v_A,stopped\n".to_vec();
        for (j, r) in results.iter().enumerate() {
            dsfl_core::sequential::write_trace_csv(&mut buf, j + 1, &r.trace, false).expect("write to memory");
        }
        String::from_utf8(buf).expect("ascii")
    });
    let sites = results
        .iter()
        .enumerate()
        .map(|(j, r)| SiteSummary {
            name: loaded.site_names[j].clone(),
            pool_rows: pools[j].n(),
            stopping_time: r.stopping_time,
            exhausted: r.exhausted,
            auc: r.criterion_value,
            theta: r.theta.clone(),
        })
        .collect();
    Ok(AnalysisReport {
        seed: opts.seed,
        common: opts.source.common.clone(),
        sites,
        combined,
        wald_intervals,
        alpha: opts.alpha,
        dropped_rows: loaded.dropped_rows,
        trace_csv,
    })
}

impl AnalysisReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let level = 100.0 * (1.0 - self.alpha);
        let _ = writeln!(
            s,
            "shuffle seed {}; {} incomplete rows dropped",
            self.seed, self.dropped_rows
        );
        let _ = writeln!(s, "N_hat {}", self.combined.n_hat);
        let _ = writeln!(s, "\nparameter  estimate  {level:.0}% Wald interval");
        for (k, name) in self.common.iter().enumerate() {
            let (lo, hi) = self.wald_intervals[k];
            let _ = writeln!(s, "{name:<10} {:>9.4}  [{lo:.4}, {hi:.4}]", self.combined.theta_hat[k]);
        }
        let _ = writeln!(s, "\nSigma_tilde");
        for i in 0..self.common.len() {
            let row: Vec<String> = (0..self.common.len())
                .map(|j| format!("{:>12.4e}", self.combined.sigma_tilde[(i, j)]))
                .collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        let _ = writeln!(s, "\nsite       rows      N      AUC  status");
        for site in &self.sites {
            let status = if site.exhausted {
                "exhausted, not combined"
            } else {
                "stopped"
            };
            let _ = writeln!(
                s,
                "{:<8} {:>6} {:>6} {:>8.4}  {status}",
                site.name, site.pool_rows, site.stopping_time, site.auc
            );
        }
        s
    }

    /// One row per site plus a `combined` row.
    pub fn write_csv(&self, path: &Path) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec![
            "site".to_string(),
            "rows".into(),
            "N".into(),
            "auc".into(),
            "exhausted".into(),
        ];
        header.extend(self.common.iter().cloned());
        header.extend(self.common.iter().map(|c| format!("{c}_lo")));
        header.extend(self.common.iter().map(|c| format!("{c}_hi")));
        w.write_record(&header)?;
        for site in &self.sites {
            let mut rec = vec![
                site.name.clone(),
                site.pool_rows.to_string(),
                site.stopping_time.to_string(),
                site.auc.to_string(),
                site.exhausted.to_string(),
            ];
            rec.extend(site.theta.iter().map(f64::to_string));
            rec.extend(std::iter::repeat_n(String::new(), 2 * self.common.len()));
            w.write_record(&rec)?;
        }
        let mut rec = vec![
            "combined".to_string(),
            self.sites.iter().map(|s| s.pool_rows).sum::<usize>().to_string(),
            self.combined.n_hat.to_string(),
            String::new(),
            "false".into(),
        ];
        rec.extend(self.combined.theta_hat.iter().map(f64::to_string));
        rec.extend(self.wald_intervals.iter().map(|w| w.0.to_string()));
        rec.extend(self.wald_intervals.iter().map(|w| w.1.to_string()));
        w.write_record(&rec)?;
        w.flush()?;
        Ok(())
    }
}
