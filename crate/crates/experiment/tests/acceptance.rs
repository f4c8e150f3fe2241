//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Takes roughly a quarter of an hour on one core.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use dsfl_core::federation::{combined_ellipsoid, run_sites};
use dsfl_core::sequential::site_confidence_set;
use dsfl_core::sim::{generate_pool, site_parameters, BetaSetup, CovariateScheme, Proportions, SimDesign};
use dsfl_core::stats::{chi2_cdf, ks_pvalue, ks_statistic, mean, pitman_morgan, sample_variance};
use dsfl_core::{combine, Dataset64, ExhaustionPolicy, FederationPlan, GlmFamily, SiteConfig64};
use dsfl_experiment::report::write_outputs;
use dsfl_experiment::runner::{CellResult, RepRecord};
use dsfl_experiment::selftest::{
    check_auc, check_common_block, check_gradient, check_ols, check_rank_one, check_selection, CheckOutcome,
    OracleSizes,
};
use dsfl_experiment::{compute_bias_table, run_experiment, ExperimentConfig, ExperimentOutput, SamplerName};

const SEED: u64 = 2024;

struct Verdicts {
    lines: Vec<(bool, String)>,
}

impl Verdicts {
    fn record(&mut self, id: &str, passed: bool, detail: String) {
        let line = format!("{} {id}: {detail}", if passed { "PASS" } else { "FAIL" });
        println!("{line}");
        self.lines.push((passed, line));
    }
}

fn design(beta_setup: BetaSetup, proportions: Proportions, covariates: CovariateScheme) -> SimDesign {
    SimDesign {
        beta_setup,
        proportions,
        covariates,
        seed: SEED,
        ..Default::default()
    }
}

fn config(design: SimDesign, sampler: SamplerName, d1: &[f64], reps: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::simulation(design);
    c.master_seed = SEED;
    c.samplers = vec![sampler];
    c.d1_grid = d1.to_vec();
    c.d2_grid = vec![0.05];
    c.replications = reps;
    c
}

fn run(cfg: &ExperimentConfig) -> ExperimentOutput {
    let start = Instant::now();
    let out = run_experiment(cfg).expect("experiment runs");
    let failures: usize = out.cells.iter().map(|c| c.failures.len()).sum();
    eprintln!(
        "  ran {} x {} reps in {:.0}s ({failures} failed replications)",
        out.label,
        cfg.replications,
        start.elapsed().as_secs_f64()
    );
    out
}

fn cell(out: &ExperimentOutput, d1: f64) -> &CellResult {
    out.cells.iter().find(|c| c.cell.d1 == d1).expect("cell present")
}

fn first(records: &[RepRecord], reps: usize) -> Vec<&RepRecord> {
    records.iter().filter(|r| r.rep < reps).collect()
}

fn mean_n_hat(records: &[&RepRecord]) -> f64 {
    mean(&records.iter().map(|r| r.n_hat as f64).collect::<Vec<_>>())
}

fn mean_ratio(records: &[RepRecord]) -> f64 {
    mean(
        &records
            .iter()
            .map(|r| r.efficiency_ratio.expect("oracle ratio"))
            .collect::<Vec<_>>(),
    )
}

fn coverage(records: &[&RepRecord]) -> f64 {
    records.iter().filter(|r| r.covered == Some(true)).count() as f64 / records.len() as f64
}

fn failures_note(c: &CellResult, reps: usize) -> String {
    let n = c.failures.iter().filter(|f| f.rep < reps).count();
    format!("{n} of {reps} replications failed")
}

/// Proposed ≤ average per component and proposed < every single site.
fn bias_dominance(out: &ExperimentOutput) -> (bool, String) {
    let c = cell(out, 0.2);
    let rows = compute_bias_table(&c.records, out.theta0.as_deref().expect("theta0"));
    let mut ok = true;
    let mut parts = Vec::new();
    for k in 1..=out.p0 {
        let get = |name: &str| {
            rows.iter()
                .find(|b| b.estimator == name && b.component == k)
                .unwrap()
                .abs_bias
                .mean
        };
        let proposed = get("proposed");
        let average = get("average");
        let best_site = (1..=out.sites)
            .map(|j| get(&format!("site{j}")))
            .fold(f64::INFINITY, f64::min);
        ok &= proposed <= average && proposed < best_site;
        parts.push(format!(
            "theta_{k} proposed {proposed:.4} average {average:.4} best site {best_site:.4}"
        ));
    }
    (
        ok,
        format!(
            "{}: {}; {}",
            out.label,
            parts.join(", "),
            failures_note(c, out.replications)
        ),
    )
}

fn files_identical(a: &Path, b: &Path) -> Result<(), String> {
    for name in ["summary.csv", "reps.csv", "sites.csv", "failures.csv", "bias.csv"] {
        let x = std::fs::read(a.join(name)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.join(name)).map_err(|e| e.to_string())?;
        if x != y {
            return Err(format!("{name} differs"));
        }
    }
    Ok(())
}

fn check_geometry(v: &mut Verdicts) {
    let d = design(BetaSetup::B1, Proportions::P1, CovariateScheme::H1);
    let d1 = 0.2;
    let plan = FederationPlan::new(2, 0.05, d.sites, None).unwrap();
    let pools: Vec<Dataset64> = (0..d.sites).map(|j| generate_pool(&d, 0, j).unwrap()).collect();
    let configs: Vec<SiteConfig64> = (0..d.sites)
        .map(|j| {
            let (_, sel) = site_parameters(&d, j).unwrap();
            SiteConfig64::new(GlmFamily::Logistic, sel, plan.a_tilde_sq[j], d1, 0.05, 0.05)
        })
        .collect();
    let results: Vec<_> = run_sites(&pools, &configs, SEED, 0, true)
        .unwrap()
        .into_iter()
        .map(|r| r.unwrap())
        .collect();
    let mut worst = 0.0_f64;
    for r in &results {
        let e = site_confidence_set(r, d1).unwrap();
        worst = worst.max((e.max_axis_length() - 2.0 * d1).abs());
    }
    let combined = combine(&results, ExhaustionPolicy::Abort).unwrap();
    let e = combined_ellipsoid(&combined, d1).unwrap();
    worst = worst.max((e.max_axis_length() - 2.0 * d1).abs());
    v.record(
        "C9 geometry",
        worst <= 1e-8,
        format!(
            "max |axis - 2 d1| over {} site sets and the combined set = {worst:.2e} (tol 1e-8)",
            results.len()
        ),
    );
}

fn main() -> ExitCode {
    let mut v = Verdicts { lines: Vec::new() };
    let started = Instant::now();

    // Homogeneous design, random sampler, three precision levels.
    let homog = design(BetaSetup::B1, Proportions::P1, CovariateScheme::H1);
    let random = run(&config(homog.clone(), SamplerName::Random, &[0.4, 0.3, 0.2], 500));
    let r02 = cell(&random, 0.2);
    let r200 = first(&r02.records, 200);

    let cf = coverage(&r200);
    v.record(
        "C1 coverage",
        (0.90..=0.99).contains(&cf),
        format!(
            "CF = {cf:.3} over {} completed replications (target [0.90, 0.99]); {}",
            r200.len(),
            failures_note(r02, 200)
        ),
    );

    let adaptive = run(&config(homog.clone(), SamplerName::Aopt, &[0.2], 200));
    let a02 = cell(&adaptive, 0.2);
    let a200: Vec<&RepRecord> = a02.records.iter().collect();
    let n_random = mean_n_hat(&r200);
    let n_adaptive = mean_n_hat(&a200);
    v.record(
        "C2 stopping times",
        (3400.0..=4600.0).contains(&n_random)
            && (2100.0..=2900.0).contains(&n_adaptive)
            && n_adaptive <= 0.8 * n_random,
        format!(
            "mean N_hat random {n_random:.1} (target [3400, 4600]), adaptive {n_adaptive:.1} (target [2100, 2900]), \
             ratio {:.3} (target <= 0.8); {}",
            n_adaptive / n_random,
            failures_note(a02, 200)
        ),
    );

    let steer = run(&config(
        design(BetaSetup::B1, Proportions::P2, CovariateScheme::H1),
        SamplerName::Random,
        &[0.2],
        200,
    ));
    let s02 = cell(&steer, 0.2);
    let site_mean = |j: usize| mean(&s02.records.iter().map(|r| r.n_per_site[j] as f64).collect::<Vec<_>>());
    let small = mean(&(0..4).map(site_mean).collect::<Vec<_>>());
    let big = site_mean(4);
    v.record(
        "C3 budget steering",
        big >= 4.0 * small,
        format!(
            "mean N_5 = {big:.1}, mean of N_1..N_4 = {small:.1}, ratio {:.2} (target >= 4)",
            big / small
        ),
    );

    let hetero_h1 = run(&config(
        design(BetaSetup::B2, Proportions::P2, CovariateScheme::H1),
        SamplerName::Random,
        &[0.2],
        200,
    ));
    let hetero_h2 = run(&config(
        design(BetaSetup::B2, Proportions::P2, CovariateScheme::H2),
        SamplerName::Random,
        &[0.2],
        200,
    ));
    let mut all = true;
    let mut details = Vec::new();
    for out in [&steer, &hetero_h1, &hetero_h2] {
        let (ok, d) = bias_dominance(out);
        all &= ok;
        details.push(d);
    }
    v.record("C4 bias dominance", all, details.join(" | "));

    // Two homogeneous sites, the first with three times the budget.
    let two_site = SimDesign {
        sites: 2,
        proportions: Proportions::Weights(vec![3.0, 1.0]),
        ..homog.clone()
    };
    let mut two_site_cfg = config(two_site, SamplerName::Random, &[0.3], 500);
    two_site_cfg.threads = 1;
    let two = run(&two_site_cfg);
    let l = cell(&two, 0.3);
    let mut ok = true;
    let mut parts = Vec::new();
    for k in 0..2 {
        let weighted: Vec<f64> = l.records.iter().map(|r| r.theta_hat[k]).collect();
        let equal: Vec<f64> = l.records.iter().map(|r| r.equal_average[k]).collect();
        let t = pitman_morgan(&weighted, &equal).unwrap();
        // reject only if the weighted variance is significantly larger
        let p_greater = 1.0 - t.p_less;
        ok &= p_greater >= 0.05;
        parts.push(format!(
            "theta_{} var ratio {:.3}, one-sided p(weighted > equal) = {p_greater:.3}",
            k + 1,
            sample_variance(&weighted) / sample_variance(&equal)
        ));
    }
    v.record(
        "C5 random weights",
        ok,
        format!(
            "{} over {} replications (level 0.05)",
            parts.join("; "),
            l.records.len()
        ),
    );

    let walds: Vec<f64> = r02.records.iter().map(|r| r.wald).collect();
    let d = ks_statistic(&walds, |x| chi2_cdf(2.0, x));
    let p = ks_pvalue(walds.len(), d);
    v.record(
        "C6 Wald calibration",
        p > 0.01,
        format!(
            "KS d = {d:.4}, p = {p:.4} against chi-square(2) over {} replications (level 0.01)",
            walds.len()
        ),
    );

    let ratios: Vec<f64> = [0.4, 0.3, 0.2]
        .iter()
        .map(|&d1| mean_ratio(&cell(&random, d1).records))
        .collect();
    let gaps: Vec<f64> = ratios.iter().map(|r| (r - 1.0).abs()).collect();
    let trend = gaps.windows(2).all(|w| w[1] <= w[0]);
    v.record(
        "C7 efficiency ratio",
        (0.85..=1.15).contains(&ratios[2]) && trend,
        format!(
            "mean ratio at d1 = 0.4, 0.3, 0.2: {:.4}, {:.4}, {:.4} (target [0.85, 1.15] at 0.2, distance to 1 non-increasing)",
            ratios[0], ratios[1], ratios[2]
        ),
    );

    let sizes = OracleSizes::full();
    let oracles: [(&str, fn(usize, u64) -> CheckOutcome, usize); 6] = [
        ("auc", check_auc, sizes.auc_instances),
        ("rank-one", check_rank_one, sizes.score_trials),
        ("selection", check_selection, sizes.selection_steps),
        ("common block", check_common_block, sizes.block_trials),
        ("ols", check_ols, sizes.ols_trials),
        ("gradient", check_gradient, sizes.gradient_trials),
    ];
    let mut bad = Vec::new();
    let mut slowest = 0.0_f64;
    for (name, check, size) in oracles {
        let t0 = Instant::now();
        let outcome = check(size, SEED);
        let secs = t0.elapsed().as_secs_f64();
        slowest = slowest.max(secs);
        if !outcome.passed || secs >= 1.0 {
            bad.push(format!("{name} ({}, {secs:.2}s)", outcome.detail));
        }
    }
    v.record(
        "C8 oracle equivalences",
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} checks agree, slowest {slowest:.3}s (limit 1s each)", oracles.len())
        } else {
            format!("failed: {}", bad.join("; "))
        },
    );

    check_geometry(&mut v);

    let dir = tempfile::tempdir().unwrap();
    write_outputs(&two, &dir.path().join("one")).unwrap();
    two_site_cfg.threads = 3;
    let rerun = run(&two_site_cfg);
    write_outputs(&rerun, &dir.path().join("three")).unwrap();
    let mut adaptive_cfg = config(
        design(BetaSetup::B2, Proportions::P2, CovariateScheme::H2),
        SamplerName::Aopt,
        &[0.3],
        6,
    );
    for (t, name) in [(1, "a1"), (3, "a3")] {
        adaptive_cfg.threads = t;
        write_outputs(&run(&adaptive_cfg), &dir.path().join(name)).unwrap();
    }
    let det = files_identical(&dir.path().join("one"), &dir.path().join("three"))
        .and_then(|_| files_identical(&dir.path().join("a1"), &dir.path().join("a3")));
    v.record(
        "C10 determinism",
        det.is_ok(),
        match det {
            Ok(()) => {
                "CSV outputs byte-identical on 1 and 3 threads (two-site run and an adaptive B2-p2-h2 run)".into()
            }
            Err(e) => e,
        },
    );

    let passed = v.lines.iter().filter(|l| l.0).count();
    println!(
        "acceptance: {passed}/{} criteria passed in {:.0}s",
        v.lines.len(),
        started.elapsed().as_secs_f64()
    );
    if passed == v.lines.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
