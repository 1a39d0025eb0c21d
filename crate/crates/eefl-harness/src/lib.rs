//! Experiment harness for the early-exit federated learning simulator:
//! declarative configs, synthetic corpora, the federated round loop,
//! metrics persistence, and reporting.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod report;
pub mod synth;

pub use config::{ExperimentConfig, Scenario, ServerOptimizer};
pub use experiment::{central_train, prepare_initial_params, run_experiment, RunOutput};
pub use metrics::{RoundMetrics, XiRecord};
pub use synth::{generate, Corpora, SynthSpec};
