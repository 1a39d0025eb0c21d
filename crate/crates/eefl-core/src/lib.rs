//! Core simulation library for federated training of early-exit models on
//! heterogeneous clients.
//!
//! The crate is organized around a small set of building blocks:
//!
//! - [`model`]: the early-exit network (dense blocks with one linear head
//!   every fixed number of blocks), exact forward/backward with sub-net
//!   truncation and front-end freezing.
//! - [`losses`]: softmax cross-entropy, CTC, and the compound multi-exit
//!   objective with per-exit weights.
//! - [`fl`]: server-side aggregation algebra (weighted FedAvg, grouped
//!   heterogeneous aggregation, effective-weight diagnostics) and the
//!   FedAvg/FedAdam server optimizers.
//! - [`hetero`]: client population modeling and per-round sub-net sampling.
//! - [`client`]: local SGD training producing pseudo-gradient updates, plus
//!   per-exit evaluation.
//! - [`checkpoint`]: bitwise-exact parameter persistence.
//! - [`oracle`]: independent reference implementations (brute-force CTC,
//!   finite differences) used to cross-check the fast paths.
//!
//! All arithmetic is f64 and fully deterministic given a seed: random numbers
//! come from a counter-based splittable generator ([`rng`]), and every
//! reduction over clients or segments runs in a fixed, sorted order.

pub mod checkpoint;
pub mod client;
pub mod error;
pub mod fl;
pub mod hetero;
pub mod losses;
pub mod model;
pub mod oracle;
pub mod params;
pub mod rng;

pub use client::{evaluate, run_client, ExitEval, LocalTrainConfig, TaskKind};
pub use error::{Error, Result};
pub use fl::{
    aggregate_heterogeneous, compute_effective_weights, fedavg, server_step_fedadam,
    server_step_sgd, ClientUpdate, EffectiveWeightReport, FedAdamConfig, ServerState, Weighting,
};
pub use hetero::{sample_round, Assignment, ClientPopulation, HeterogeneityProfile};
pub use losses::{compound_ee_loss, cross_entropy, ctc_loss, ExitLossReport};
pub use model::{
    backward, forward, forward_traced, init_model, Activation, Batch, ForwardTrace, FrameSeq,
    ModelConfig, Sample, SubNetSpec, Target,
};
pub use params::{ParamSet, Role, Segment, SegmentId};
pub use rng::{StreamKey, StreamRng};
