//! Local training and evaluation.
//!
//! A client receives the global parameters, truncates to its assigned
//! sub-net, runs E epochs of mini-batch SGD against the compound early-exit
//! loss on its own shard, and reports the parameter delta as a
//! pseudo-gradient. Clients are pure functions of their inputs and a
//! (seed, client, round) random stream, so rounds can fan out in parallel
//! without affecting results.

use crate::error::{Error, Result};
use crate::fl::ClientUpdate;
use crate::losses::compound_ee_loss;
use crate::model::{
    backward, forward, forward_traced, Batch, ModelConfig, Sample, SubNetSpec, Target,
};
use crate::params::ParamSet;
use crate::rng::StreamKey;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Classification,
    Ctc,
}

/// Local SGD settings.
#[derive(Clone, Debug)]
pub struct LocalTrainConfig {
    pub epochs: usize,
    /// Local learning rate. Zero is permitted (useful as a no-op probe).
    pub learning_rate: f64,
    pub batch_size: usize,
    pub freeze_frontend: bool,
    pub task: TaskKind,
    /// Optional per-exit weights over all M exits (masked-loss experiments);
    /// each client applies the prefix matching its sub-net. Defaults to 1.
    pub exit_weights: Option<Vec<f64>>,
}

impl LocalTrainConfig {
    pub fn new(task: TaskKind) -> Self {
        LocalTrainConfig {
            epochs: 5,
            learning_rate: 0.01,
            batch_size: 8,
            freeze_frontend: false,
            task,
            exit_weights: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("local epochs must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(
                "local learning rate must be finite and >= 0".into(),
            ));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("local batch size must be >= 1".into()));
        }
        Ok(())
    }

    fn weights_for(&self, exits: usize) -> Result<Vec<f64>> {
        match &self.exit_weights {
            None => Ok(vec![1.0; exits]),
            Some(w) => {
                if w.len() < exits {
                    return Err(Error::Config(format!(
                        "exit_weights covers {} exits, sub-net has {exits}",
                        w.len()
                    )));
                }
                Ok(w[..exits].to_vec())
            }
        }
    }
}

fn check_task(shard: &[Sample], task: TaskKind) -> Result<()> {
    for s in shard {
        let ok = matches!(
            (task, &s.target),
            (TaskKind::Classification, Target::Class(_)) | (TaskKind::Ctc, Target::Tokens(_))
        );
        if !ok {
            return Err(Error::Config(
                "shard targets do not match the configured task".into(),
            ));
        }
    }
    Ok(())
}

/// Run one client's local training and return its pseudo-gradient
/// `w(after E epochs) - w(received)`.
#[allow(clippy::too_many_arguments)]
pub fn run_client(
    global: &ParamSet,
    config: &ModelConfig,
    shard: &[Sample],
    subnet: SubNetSpec,
    train: &LocalTrainConfig,
    client_id: u64,
    round: u64,
    seed: u64,
) -> Result<ClientUpdate> {
    train.validate()?;
    subnet.validate(config)?;
    check_task(shard, train.task)?;
    if shard.is_empty() {
        return Err(Error::Config(format!("client {client_id}: empty shard")));
    }

    let weights = train.weights_for(subnet.exits)?;
    let shuffle_key = StreamKey::root(seed)
        .child_str("local")
        .child(client_id)
        .child(round);

    let mut local = global.clone();
    let mut order: Vec<usize> = (0..shard.len()).collect();
    for epoch in 0..train.epochs {
        let mut rng = shuffle_key.child(epoch as u64).stream();
        rng.shuffle(&mut order);
        for chunk in order.chunks(train.batch_size) {
            let batch = Batch::new(chunk.iter().map(|&i| shard[i].clone()).collect());
            let trace = forward_traced(&local, config, &batch, subnet)?;
            let (report, logit_grads) =
                compound_ee_loss(&trace.logits, &batch.targets(), Some(&weights))?;
            if !report.compound.is_finite() {
                return Err(Error::Divergence(format!(
                    "client {client_id} round {round}: non-finite local loss"
                )));
            }
            let grad = backward(
                &local,
                config,
                &batch,
                subnet,
                &trace,
                &logit_grads,
                train.freeze_frontend,
            )?;
            local.add_scaled(&grad, -train.learning_rate)?;
        }
    }

    Ok(ClientUpdate {
        client_id,
        subnet,
        pseudo_gradient: local.sub(global)?,
        num_samples: shard.len(),
        local_epochs_run: train.epochs as u32,
    })
}

/// Per-exit evaluation result.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExitEval {
    /// Mean task loss (nats).
    pub loss: f64,
    /// Greedy-decode error: misclassification rate, or normalized token
    /// edit distance capped at 1.
    pub token_err: f64,
}

fn levenshtein(a: &[usize], b: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ai) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &bj) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ai != bj);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Greedy CTC decode: per-frame argmax, merge adjacent repeats, drop blanks.
fn greedy_ctc_decode(logits: &[Vec<f64>]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for row in logits {
        let p = argmax(row);
        if Some(p) != prev && p != 0 {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

fn sample_error(logits: &[Vec<f64>], target: &Target) -> f64 {
    match target {
        Target::Class(c) => {
            // Mean-pool logits over frames, then pick the top class.
            let vocab = logits[0].len();
            let mut pooled = vec![0.0; vocab];
            for row in logits {
                for (p, &x) in pooled.iter_mut().zip(row) {
                    *p += x;
                }
            }
            f64::from(argmax(&pooled) != *c)
        }
        Target::Tokens(toks) => {
            let decoded = greedy_ctc_decode(logits);
            let dist = levenshtein(&decoded, toks);
            (dist as f64 / toks.len().max(1) as f64).min(1.0)
        }
    }
}

/// Evaluate per-exit mean loss and greedy-decode error on a held-out set.
pub fn evaluate(
    params: &ParamSet,
    config: &ModelConfig,
    eval_set: &[Sample],
    subnet: SubNetSpec,
) -> Result<Vec<ExitEval>> {
    if eval_set.is_empty() {
        return Err(Error::Config("evaluate: empty eval set".into()));
    }
    let batch = Batch::new(eval_set.to_vec());
    let per_exit_logits = forward(params, config, &batch, subnet)?;
    let targets = batch.targets();
    let (report, _) = compound_ee_loss(&per_exit_logits, &targets, None)?;

    let n = eval_set.len() as f64;
    let mut out = Vec::with_capacity(subnet.exits);
    for (m, exit_logits) in per_exit_logits.iter().enumerate() {
        let err: f64 = exit_logits
            .iter()
            .zip(&targets)
            .map(|(logits, target)| sample_error(logits, target))
            .sum::<f64>()
            / n;
        out.push(ExitEval {
            loss: report.per_exit[m],
            token_err: err,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, Activation};

    fn config() -> ModelConfig {
        ModelConfig {
            input_dim: 4,
            hidden_dim: 8,
            num_blocks: 4,
            exit_every: 2,
            output_dim: 4,
            frontend_blocks: 1,
            activation: Activation::Tanh,
            seed: 5,
        }
    }

    fn class_shard(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = StreamKey::root(seed).child_str("shard").stream();
        (0..n)
            .map(|_| Sample {
                features: vec![(0..cfg.input_dim).map(|_| rng.uniform(-1.0, 1.0)).collect()],
                target: Target::Class(rng.index(cfg.output_dim)),
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_moves_nothing() {
        let cfg = config();
        let global = init_model(&cfg).unwrap();
        let shard = class_shard(&cfg, 6, 1);
        let mut train = LocalTrainConfig::new(TaskKind::Classification);
        train.learning_rate = 0.0;
        let update =
            run_client(&global, &cfg, &shard, SubNetSpec::new(2), &train, 0, 0, 42).unwrap();
        assert_eq!(update.pseudo_gradient.max_abs(), 0.0);
        assert_eq!(update.num_samples, 6);
        assert_eq!(update.local_epochs_run, 5);
    }

    #[test]
    fn single_epoch_full_batch_equals_one_gradient_step() {
        let cfg = config();
        let global = init_model(&cfg).unwrap();
        let shard = class_shard(&cfg, 5, 2);
        let subnet = SubNetSpec::new(2);
        let mut train = LocalTrainConfig::new(TaskKind::Classification);
        train.epochs = 1;
        train.batch_size = shard.len();
        train.learning_rate = 0.05;
        let update = run_client(&global, &cfg, &shard, subnet, &train, 3, 0, 42).unwrap();

        let batch = Batch::new(shard.clone());
        let trace = forward_traced(&global, &cfg, &batch, subnet).unwrap();
        let (_, grads) = compound_ee_loss(&trace.logits, &batch.targets(), None).unwrap();
        let grad = backward(&global, &cfg, &batch, subnet, &trace, &grads, false).unwrap();
        let mut expected = grad;
        expected.scale(-train.learning_rate);
        assert!(
            update.pseudo_gradient.max_abs_diff(&expected).unwrap() < 1e-12,
            "pseudo-gradient differs from -lr * grad"
        );
    }

    #[test]
    fn freezing_zeroes_frontend_delta() {
        let cfg = config();
        let global = init_model(&cfg).unwrap();
        let shard = class_shard(&cfg, 8, 3);
        let mut train = LocalTrainConfig::new(TaskKind::Classification);
        train.freeze_frontend = true;
        let update =
            run_client(&global, &cfg, &shard, SubNetSpec::new(2), &train, 1, 2, 9).unwrap();
        for seg in update.pseudo_gradient.segments() {
            if seg.id.role.is_block() && seg.id.index <= cfg.frontend_blocks {
                assert!(seg.data.iter().all(|&x| x == 0.0));
            }
        }
        update.check_zero_outside_subnet().unwrap();
    }

    #[test]
    fn truncated_subnet_update_passes_integrity_check() {
        let cfg = config();
        let global = init_model(&cfg).unwrap();
        let shard = class_shard(&cfg, 8, 4);
        let train = LocalTrainConfig::new(TaskKind::Classification);
        let update =
            run_client(&global, &cfg, &shard, SubNetSpec::new(1), &train, 2, 0, 11).unwrap();
        update.check_zero_outside_subnet().unwrap();
        // Something inside the sub-net did move.
        assert!(update.pseudo_gradient.max_abs() > 0.0);
    }

    #[test]
    fn local_training_usually_reduces_shard_loss() {
        let cfg = config();
        let subnet = SubNetSpec::new(2);
        let mut violations = 0;
        let trials = 40;
        for seed in 0..trials {
            let global = init_model(&ModelConfig {
                seed: 100 + seed,
                ..config()
            })
            .unwrap();
            let shard = class_shard(&cfg, 12, 200 + seed);
            let mut train = LocalTrainConfig::new(TaskKind::Classification);
            train.epochs = 3;
            train.batch_size = 4;
            train.learning_rate = 0.01;
            let batch = Batch::new(shard.clone());
            let before = compound_ee_loss(
                &forward(&global, &cfg, &batch, subnet).unwrap(),
                &batch.targets(),
                None,
            )
            .unwrap()
            .0
            .compound;
            let update =
                run_client(&global, &cfg, &shard, subnet, &train, 0, 0, 300 + seed).unwrap();
            let mut after_params = global.clone();
            after_params
                .add_scaled(&update.pseudo_gradient, 1.0)
                .unwrap();
            let after = compound_ee_loss(
                &forward(&after_params, &cfg, &batch, subnet).unwrap(),
                &batch.targets(),
                None,
            )
            .unwrap()
            .0
            .compound;
            if after > before {
                violations += 1;
            }
        }
        assert!(violations <= 2, "{violations}/{trials} seeds regressed");
    }

    #[test]
    fn divergent_training_is_reported() {
        let cfg = ModelConfig {
            activation: Activation::Relu,
            ..config()
        };
        let global = init_model(&cfg).unwrap();
        let shard = class_shard(&cfg, 8, 5);
        let mut train = LocalTrainConfig::new(TaskKind::Classification);
        train.learning_rate = 1e12;
        train.epochs = 20;
        let res = run_client(&global, &cfg, &shard, SubNetSpec::new(2), &train, 0, 0, 1);
        assert!(matches!(res, Err(Error::Divergence(_))), "got {res:?}");
    }

    #[test]
    fn task_mismatch_is_rejected() {
        let cfg = config();
        let global = init_model(&cfg).unwrap();
        let shard = class_shard(&cfg, 4, 6);
        let train = LocalTrainConfig::new(TaskKind::Ctc);
        assert!(run_client(&global, &cfg, &shard, SubNetSpec::new(1), &train, 0, 0, 1).is_err());
    }

    #[test]
    fn levenshtein_basics() {
        assert_eq!(levenshtein(&[1, 2, 3], &[1, 2, 3]), 0);
        assert_eq!(levenshtein(&[1, 2], &[1, 3]), 1);
        assert_eq!(levenshtein(&[], &[1, 2]), 2);
        assert_eq!(levenshtein(&[1, 2, 3], &[2, 3]), 1);
        assert_eq!(levenshtein(&[3, 2, 1], &[1, 2, 3]), 2);
    }

    #[test]
    fn greedy_decode_collapses() {
        // argmax sequence 1,1,0,2,2 -> [1, 2]
        let rows = vec![
            vec![0.0, 2.0, 1.0],
            vec![0.0, 2.0, 1.0],
            vec![2.0, 0.0, 1.0],
            vec![0.0, 1.0, 2.0],
            vec![0.0, 1.0, 2.0],
        ];
        assert_eq!(greedy_ctc_decode(&rows), vec![1, 2]);
    }

    #[test]
    fn evaluate_perfect_predictor_has_zero_error() {
        let cfg = config();
        let params = init_model(&cfg).unwrap();
        let subnet = SubNetSpec::full(&cfg);
        // Label each input with the model's own top-exit prediction.
        let mut eval = class_shard(&cfg, 20, 8);
        let logits = forward(&params, &cfg, &Batch::new(eval.clone()), subnet).unwrap();
        for (s, exit_logits) in eval.iter_mut().zip(&logits[subnet.exits - 1]) {
            s.target = Target::Class(argmax(&exit_logits[0]));
        }
        let evals = evaluate(&params, &cfg, &eval, subnet).unwrap();
        assert_eq!(evals.len(), cfg.num_exits());
        assert_eq!(evals[subnet.exits - 1].token_err, 0.0);
    }

    #[test]
    fn evaluate_random_model_is_near_chance() {
        let cfg = ModelConfig {
            output_dim: 4,
            ..config()
        };
        let params = init_model(&cfg).unwrap();
        let eval = class_shard(&cfg, 2000, 77);
        let evals = evaluate(&params, &cfg, &eval, SubNetSpec::full(&cfg)).unwrap();
        let chance = 1.0 - 1.0 / cfg.output_dim as f64;
        for e in &evals {
            assert!(
                (e.token_err - chance).abs() < 0.05,
                "error {} far from chance {chance}",
                e.token_err
            );
        }
    }
}
