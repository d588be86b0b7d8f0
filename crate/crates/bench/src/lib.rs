//! Benchmark harness and command-line front end for knowledge-guided subdomain adaptation.

pub mod config;
pub mod harness;
pub mod report;

pub use config::{DataSource, ExperimentConfig, FusionSettings, HeadInit, Method};
pub use harness::{emit_embeddings, prepare_data, run_experiment, run_method, Prepared, SeedCache};
pub use report::{Aggregate, RunReport, RunRow};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] kisa_core::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Run(String),
}

impl BenchError {
    /// Process exit code: 2 for configuration problems, 1 for anything that failed at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 2,
            _ => 1,
        }
    }
}
