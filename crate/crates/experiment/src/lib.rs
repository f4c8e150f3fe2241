//! Simulation harness, real-data analysis and reporting on top of `dsfl-core`.

pub mod analyze;
pub mod config;
pub mod ingest;
pub mod report;
pub mod runner;
pub mod selftest;

pub use config::{DataSource, Design, ExperimentConfig, SamplerName};
pub use runner::{compute_bias_table, run_experiment, summarize, ExperimentOutput};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] dsfl_core::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// 1 for configuration mistakes, 2 for everything the data caused.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            _ => 2,
        }
    }
}
