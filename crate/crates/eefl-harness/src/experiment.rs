//! End-to-end experiment orchestration: centralized (pre-)training, the
//! federated round loop, and evaluation scheduling.

use std::time::Instant;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use eefl_core::model::{backward, forward_traced, Batch, ModelConfig, Sample, SubNetSpec};
use eefl_core::params::ParamSet;
use eefl_core::rng::StreamKey;
use eefl_core::{
    aggregate_heterogeneous, checkpoint, compound_ee_loss, compute_effective_weights, evaluate,
    fedavg, init_model, run_client, sample_round, server_step_fedadam, server_step_sgd,
    ClientUpdate, Error, ServerState, Weighting,
};

use crate::config::{ExperimentConfig, Scenario, ServerOptimizer};
use crate::metrics::{RoundMetrics, XiRecord};
use crate::synth::{Corpora, SynthSpec};

/// Per-epoch training losses logged by centralized training.
#[derive(Clone, Debug)]
pub struct EpochLosses {
    pub epoch: usize,
    pub per_exit: Vec<f64>,
}

/// Plain centralized mini-batch SGD on all exits selected by `exit_weights`.
/// Returns the trained parameters and one per-exit training-loss snapshot
/// per epoch.
#[allow(clippy::too_many_arguments)]
pub fn central_train(
    mut params: ParamSet,
    model: &ModelConfig,
    data: &[Sample],
    epochs: usize,
    lr: f64,
    batch_size: usize,
    exit_weights: &[f64],
    seed: u64,
) -> Result<(ParamSet, Vec<EpochLosses>)> {
    if data.is_empty() {
        bail!("central training needs a non-empty corpus");
    }
    if batch_size == 0 {
        bail!("central training batch size must be positive");
    }
    let subnet = SubNetSpec::full(model);
    let key = StreamKey::root(seed).child_str("central");
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(epochs);

    for epoch in 0..epochs {
        let mut rng = key.child(epoch as u64).stream();
        rng.shuffle(&mut order);
        let mut epoch_losses = vec![0.0; model.num_exits()];
        let mut seen = 0usize;
        for chunk in order.chunks(batch_size) {
            let batch = Batch::new(chunk.iter().map(|&i| data[i].clone()).collect());
            let trace = forward_traced(&params, model, &batch, subnet)?;
            let (report, grads) =
                compound_ee_loss(&trace.logits, &batch.targets(), Some(exit_weights))?;
            if !report.compound.is_finite() {
                return Err(Error::Divergence(format!(
                    "central training diverged at epoch {epoch}"
                ))
                .into());
            }
            let grad = backward(&params, model, &batch, subnet, &trace, &grads, false)?;
            params.add_scaled(&grad, -lr)?;
            for (acc, l) in epoch_losses.iter_mut().zip(&report.per_exit) {
                *acc += l * chunk.len() as f64;
            }
            seen += chunk.len();
        }
        for l in &mut epoch_losses {
            *l /= seen as f64;
        }
        log.push(EpochLosses {
            epoch,
            per_exit: epoch_losses,
        });
    }
    Ok((params, log))
}

/// Build the generator spec implied by an experiment configuration.
pub fn synth_spec(cfg: &ExperimentConfig) -> SynthSpec {
    let total = cfg.population.clients * cfg.task.samples_per_client;
    SynthSpec {
        task: cfg.task_kind(),
        input_dim: cfg.model.input_dim,
        vocab: cfg.model.output_dim,
        num_clients: cfg.population.clients,
        samples_per_client: cfg.task.samples_per_client,
        eval_samples: cfg.task.eval_samples,
        pretrain_samples: cfg.task.pretrain_samples.unwrap_or(total),
        skew: cfg.task.skew,
        domain_shift: cfg.task.domain_shift,
    }
}

/// Produce the starting parameters: a checkpoint if configured, otherwise
/// in-process pre-training on the source corpus, otherwise raw
/// initialization. Pre-training honors the experiment's exit mask.
pub fn prepare_initial_params(
    cfg: &ExperimentConfig,
    corpora: &Corpora,
) -> Result<(ParamSet, Vec<EpochLosses>)> {
    let model = cfg.model_config();
    if let Some(path) = &cfg.pretrain.checkpoint {
        let params = checkpoint::load_matching(path, model.fingerprint())
            .with_context(|| format!("loading checkpoint {}", path.display()))?;
        return Ok((params, Vec::new()));
    }
    let params = init_model(&model)?;
    if cfg.pretrain.epochs == 0 {
        return Ok((params, Vec::new()));
    }
    central_train(
        params,
        &model,
        &corpora.source_train,
        cfg.pretrain.epochs,
        cfg.pretrain.lr,
        cfg.pretrain.batch_size,
        &cfg.exit_weights(),
        cfg.seed ^ 0x7072_6574, // distinct stream family from the FL loop
    )
}

/// Everything a finished run produces.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub metrics: Vec<RoundMetrics>,
    /// One effective-weight record per round (not just evaluation rounds).
    pub xi_log: Vec<XiRecord>,
    pub final_params: ParamSet,
    /// Parameters the federation started from (after pre-training/loading).
    pub initial_params: ParamSet,
    /// (round, client) pairs whose local training diverged and was skipped.
    pub skipped: Vec<(u64, u64)>,
}

fn eval_metrics(
    round: u64,
    params: &ParamSet,
    model: &ModelConfig,
    eval_set: &[Sample],
    clients_total: usize,
    clients_per_exit: Vec<usize>,
    wallclock_ms: u64,
) -> Result<RoundMetrics> {
    let evals = evaluate(params, model, eval_set, SubNetSpec::full(model))?;
    Ok(RoundMetrics {
        round,
        per_exit_loss: evals.iter().map(|e| e.loss).collect(),
        per_exit_err: evals.iter().map(|e| e.token_err).collect(),
        clients_total,
        clients_per_exit,
        wallclock_ms,
    })
}

/// Run the full federated experiment described by `cfg`.
///
/// `parallel` bounds the client worker pool; 0 or 1 runs clients strictly
/// sequentially. Results are identical either way because clients are pure
/// functions of (seed, client, round) and aggregation sorts by client id.
pub fn run_experiment(cfg: &ExperimentConfig, parallel: usize) -> Result<RunOutput> {
    cfg.validate()?;
    let model = cfg.model_config();
    let population = cfg.population();
    let profile = cfg.profile()?;
    let assignment = cfg.assignment()?;
    let scenario = cfg.scenario()?;
    let optimizer = cfg.server_optimizer()?;
    let local_cfg = cfg.local_train_config();
    let exits = model.num_exits();

    let corpora = crate::synth::generate(&synth_spec(cfg), cfg.seed);
    let (initial_params, _) = prepare_initial_params(cfg, &corpora)?;

    let pool = if parallel > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(parallel)
                .build()
                .context("building worker pool")?,
        )
    } else {
        None
    };

    let mut state = ServerState::new(initial_params.clone(), cfg.fedadam_config());
    let mut metrics = Vec::new();
    let mut xi_log = Vec::new();
    let mut skipped = Vec::new();

    metrics.push(eval_metrics(
        0,
        &state.global,
        &model,
        &corpora.target_eval,
        0,
        vec![0; exits],
        0,
    )?);

    for round in 0..cfg.run.rounds {
        let started = Instant::now();
        let mut sampled = sample_round(&population, &profile, assignment, round)?;
        if scenario == Scenario::Ofl {
            for (_, subnet) in &mut sampled {
                *subnet = SubNetSpec::full(&model);
            }
        }

        let run_one = |(client_id, subnet): &(u64, SubNetSpec)| {
            run_client(
                &state.global,
                &model,
                &corpora.shards[*client_id as usize],
                *subnet,
                &local_cfg,
                *client_id,
                round,
                cfg.seed,
            )
        };
        let results: Vec<eefl_core::Result<ClientUpdate>> = match &pool {
            Some(pool) => pool.install(|| sampled.par_iter().map(run_one).collect()),
            None => sampled.iter().map(run_one).collect(),
        };

        let mut updates = Vec::with_capacity(results.len());
        for (result, (client_id, _)) in results.into_iter().zip(&sampled) {
            match result {
                Ok(update) => updates.push(update),
                Err(Error::Divergence(msg)) => {
                    eprintln!("round {round}: dropping client {client_id}: {msg}");
                    skipped.push((round, *client_id));
                }
                Err(other) => return Err(other.into()),
            }
        }

        let report = compute_effective_weights(&updates, exits, cfg.server.lr)?;
        let clients_per_exit = report.client_counts.clone();
        xi_log.push(XiRecord { round, report });

        if !updates.is_empty() {
            let aggregated = match scenario {
                Scenario::Ofl => fedavg(&updates, Weighting::Uniform)?,
                Scenario::Efl => aggregate_heterogeneous(&updates)?,
            };
            state = match optimizer {
                ServerOptimizer::FedAdam => server_step_fedadam(state, &aggregated)?,
                ServerOptimizer::FedAvgSgd => server_step_sgd(state, &aggregated, cfg.server.lr)?,
            };
        }

        let completed = round + 1;
        if completed % cfg.run.eval_every == 0 || completed == cfg.run.rounds {
            let wallclock_ms = started.elapsed().as_millis() as u64;
            metrics.push(eval_metrics(
                completed,
                &state.global,
                &model,
                &corpora.target_eval,
                updates.len(),
                clients_per_exit,
                wallclock_ms,
            )?);
        }
    }

    Ok(RunOutput {
        metrics,
        xi_log,
        final_params: state.global,
        initial_params,
        skipped,
    })
}
