//! Training harness: configuration, the training loop, evaluation reports,
//! checkpoints and the run-directory layout used by the command line.

pub mod checkpoint;
pub mod config;
pub mod report;
pub mod run;
pub mod selftest;
pub mod train;

pub use checkpoint::{Checkpoint, Normalization};
pub use config::RunConfig;
pub use report::{evaluate, Evaluation, MetricReport, Stage};
pub use run::{diagnose_run, eval_run, train_run, TrainRun};
pub use train::{prepare_data, train, EpochDiagnostics, PreparedData};
