use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::{ContextKind, ContextValue, ErrorKind};
use clap::{Parser, Subcommand, ValueEnum};
use dsfl_core::sim::generate_pool;
use dsfl_core::SamplerKind;
use dsfl_experiment::analyze::{analyze, AnalyzeOptions};
use dsfl_experiment::config::{DataSource, Design, ExperimentConfig};
use dsfl_experiment::ingest::write_pools_file;
use dsfl_experiment::report::{human_table, write_outputs};
use dsfl_experiment::selftest::{run_oracles, OracleSizes};
use dsfl_experiment::{run_experiment, summarize, HarnessError};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_FAILURES: u8 = 3;

#[derive(Parser)]
#[command(
    name = "dsfl",
    version,
    about = "Distributed sequential estimation for multi-site logistic models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerArg {
    Random,
    Aopt,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation study described by a config file
    Simulate {
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Override the master seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of replications
        #[arg(long)]
        reps: Option<usize>,
        /// Override the output directory
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Worker threads (0 = all cores)
        #[arg(long)]
        threads: Option<usize>,
        /// Log every recruitment step of the first replication to trace.csv
        #[arg(long)]
        trace: bool,
        /// Also write the first replication's pools to pools.csv
        #[arg(long)]
        dump_pools: bool,
    },
    /// Run the procedure once on a multi-site CSV file
    Analyze {
        #[arg(long, value_name = "CSV")]
        data: PathBuf,
        /// Binary (0/1) response column
        #[arg(long, value_name = "COL")]
        response: String,
        /// Column holding the site label
        #[arg(long, value_name = "COL")]
        site: String,
        /// Comma-separated covariates shared by all sites
        #[arg(long, value_name = "COLS", value_delimiter = ',', required = true)]
        common: Vec<String>,
        /// Comma-separated site-specific covariates (default: all other observed columns)
        #[arg(long, value_name = "COLS", value_delimiter = ',')]
        site_specific: Option<Vec<String>>,
        #[arg(long)]
        d1: f64,
        #[arg(long)]
        d2: f64,
        #[arg(long, value_enum, default_value = "random")]
        sampler: SamplerArg,
        /// Comma-separated positive budget weights, one per site in order of appearance
        #[arg(long, value_name = "W1,..,WM", value_delimiter = ',')]
        budget: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Initial sample size per site
        #[arg(long)]
        n0: Option<usize>,
        /// Write analysis.csv (and trace.csv with --trace) here
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[arg(long)]
        trace: bool,
    },
    /// Run the fast built-in consistency checks
    Selftest,
}

fn usage_hint(err: &clap::Error) -> String {
    let arg = match err.get(ContextKind::InvalidArg) {
        Some(ContextValue::String(s)) => s.clone(),
        Some(ContextValue::Strings(v)) => v.join(", "),
        _ => String::new(),
    };
    match err.kind() {
        ErrorKind::MissingRequiredArgument => format!("fix: add {arg}"),
        ErrorKind::InvalidValue | ErrorKind::ValueValidation => {
            format!("fix: give {arg} a valid value (see --help)")
        }
        ErrorKind::UnknownArgument => format!("fix: remove or correct {arg} (see --help)"),
        ErrorKind::MissingSubcommand | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            "fix: name a subcommand: simulate, analyze or selftest".into()
        }
        ErrorKind::InvalidSubcommand => "fix: use simulate, analyze or selftest".into(),
        _ => "fix: run `dsfl --help`".into(),
    }
}

fn fail(err: HarnessError) -> ExitCode {
    eprintln!("error: {err}");
    if err.exit_code() == 1 {
        eprintln!("fix: correct the configuration value named above");
        ExitCode::from(EXIT_USAGE)
    } else {
        ExitCode::from(EXIT_DATA)
    }
}

fn simulate(
    config: PathBuf,
    seed: Option<u64>,
    reps: Option<usize>,
    out: Option<PathBuf>,
    threads: Option<usize>,
    trace: bool,
    dump_pools: bool,
) -> Result<ExitCode, HarnessError> {
    let mut cfg = ExperimentConfig::from_file(&config)?;
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    if let Some(r) = reps {
        cfg.replications = r;
    }
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    if let Some(t) = threads {
        cfg.threads = t;
    }
    cfg.trace |= trace;
    cfg.validate()?;
    let output = run_experiment(&cfg)?;
    let written = write_outputs(&output, &cfg.output_dir)?;
    if dump_pools {
        let Design::Simulation(design) = &cfg.design else {
            return Err(HarnessError::Config("--dump-pools needs a simulation config".into()));
        };
        let pools = (0..design.sites)
            .map(|j| generate_pool(design, 0, j))
            .collect::<Result<Vec<_>, _>>()?;
        write_pools_file(&cfg.output_dir.join("pools.csv"), &pools)?;
    }
    print!("{}", human_table(&output, &summarize(&output)));
    for p in written {
        println!("wrote {}", p.display());
    }
    if output.failure_rate_exceeded(cfg.max_failure_rate) {
        eprintln!(
            "error: more than {:.0}% of replications failed in some cell; see failures.csv",
            100.0 * cfg.max_failure_rate
        );
        return Ok(ExitCode::from(EXIT_FAILURES));
    }
    Ok(ExitCode::SUCCESS)
}

fn selftest() -> ExitCode {
    let mut all = true;
    for check in run_oracles(OracleSizes::quick(), 17) {
        all &= check.passed;
        println!(
            "{} {}: {}",
            if check.passed { "PASS" } else { "FAIL" },
            check.name,
            check.detail
        );
    }
    let mut cfg = ExperimentConfig::simulation(dsfl_core::sim::SimDesign {
        sites: 2,
        pool_size: 4000,
        seed: 5,
        ..Default::default()
    });
    cfg.master_seed = 5;
    cfg.replications = 3;
    cfg.d1_grid = vec![0.5];
    cfg.d2_grid = vec![0.08];
    cfg.oracle_draws = 0;
    let runs: Vec<_> = [1, 2]
        .into_iter()
        .map(|t| {
            cfg.threads = t;
            run_experiment(&cfg).map(|o| summarize(&o))
        })
        .collect();
    let deterministic = match (&runs[0], &runs[1]) {
        (Ok(a), Ok(b)) => a == b && a[0].completed == 3,
        _ => false,
    };
    all &= deterministic;
    println!(
        "{} small simulation is identical on 1 and 2 threads",
        if deterministic { "PASS" } else { "FAIL" }
    );
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_DATA)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(err) => {
            if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = err.print();
                return ExitCode::SUCCESS;
            }
            let _ = err.print();
            eprintln!("{}", usage_hint(&err));
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let result = match cli.command {
        Command::Simulate {
            config,
            seed,
            reps,
            out,
            threads,
            trace,
            dump_pools,
        } => simulate(config, seed, reps, out, threads, trace, dump_pools),
        Command::Analyze {
            data,
            response,
            site,
            common,
            site_specific,
            d1,
            d2,
            sampler,
            budget,
            alpha,
            seed,
            n0,
            out,
            trace,
        } => {
            let opts = AnalyzeOptions {
                source: DataSource {
                    path: data,
                    response,
                    site,
                    common,
                    site_specific,
                    budget_weights: budget,
                },
                d1,
                d2,
                alpha,
                sampler: match sampler {
                    SamplerArg::Random => SamplerKind::Random,
                    SamplerArg::Aopt => SamplerKind::AOptimal,
                },
                seed,
                n0,
                trace,
            };
            analyze(&opts).and_then(|report| {
                print!("{}", report.render());
                if let Some(dir) = out {
                    std::fs::create_dir_all(&dir)?;
                    report.write_csv(&dir.join("analysis.csv"))?;
                    if let Some(t) = &report.trace_csv {
                        std::fs::write(dir.join("trace.csv"), t)?;
                    }
                }
                Ok(ExitCode::SUCCESS)
            })
        }
        Command::Selftest => Ok(selftest()),
    };
    result.unwrap_or_else(fail)
}
