//! Data ingestion, synthetic data, configuration, experiment drivers and
//! reports.

pub mod config;
pub mod experiment;
pub mod ingest;
pub mod report;
pub mod stages;
pub mod synthetic;

pub use config::PipelineConfig;
pub use experiment::{run_experiment, ExperimentKind, ExperimentOutcome};
pub use synthetic::{gen_synthetic, SyntheticData, SyntheticModality, SyntheticSpec, UserEvent};
