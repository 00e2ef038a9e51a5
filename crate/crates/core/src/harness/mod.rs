//! Experiment harness: metrics, memory accounting, configs and run outputs.
pub mod check;
pub mod config;
pub mod experiment;
pub mod memory;
pub mod metrics;

pub use check::{algebra_suite, AlgebraReport, CheckOutcome};
pub use config::{Benchmark, ExperimentConfig, SyntheticConfig};
pub use experiment::{report, resolve_data_dir, run_experiment, ExperimentSummary, DATA_DIR_ENV};
pub use memory::{memory_report, LayerMemory, MemoryReport};
pub use metrics::AccuracyMatrix;
