//! Benchmark harness for the learned index: synthetic datasets, the
//! workload matrix, a threaded runner and report emitters.

pub mod cli;
pub mod dataset;
pub mod report;
pub mod runner;
pub mod workload;

pub use dataset::{generate_dataset, Dataset, DatasetSource, Difficulty};
pub use report::{emit_report, Format, RunReport};
pub use runner::{run, run_on, RunConfig, RunError};
pub use workload::{plan, Op, Plan, WorkloadKind, WorkloadSpec};
