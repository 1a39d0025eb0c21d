//! Declarative experiment configuration (TOML).
//!
//! One file describes the model, the synthetic task, the client population,
//! the heterogeneity profile, both optimizers, and the round schedule. See
//! `configs/reference.toml` for a fully annotated example.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use eefl_core::{
    Activation, Assignment, ClientPopulation, FedAdamConfig, HeterogeneityProfile,
    LocalTrainConfig, ModelConfig, TaskKind,
};

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random stream in the run derives from it.
    pub seed: u64,
    pub model: ModelSection,
    pub task: TaskSection,
    pub population: PopulationSection,
    pub heterogeneity: HeterogeneitySection,
    pub server: ServerSection,
    pub local: LocalSection,
    pub run: RunSection,
    #[serde(default)]
    pub pretrain: PretrainSection,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_blocks: usize,
    pub exit_every: usize,
    pub output_dim: usize,
    #[serde(default)]
    pub frontend_blocks: usize,
    #[serde(default = "default_activation")]
    pub activation: String,
    /// Initialization seed; defaults to the experiment seed.
    pub init_seed: Option<u64>,
}

fn default_activation() -> String {
    "tanh".into()
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    /// "classification" or "ctc".
    pub kind: String,
    pub samples_per_client: usize,
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    /// Size of the centralized pre-training corpus; defaults to the total
    /// federated corpus size.
    pub pretrain_samples: Option<usize>,
    /// 0 = balanced shards, 1 = shards drawn entirely from each client's
    /// preferred label subset.
    #[serde(default)]
    pub skew: f64,
    /// Distort the federated corpus with a fixed affine map so that
    /// federation adapts the pre-trained model to a shifted domain.
    #[serde(default)]
    pub domain_shift: bool,
}

fn default_eval_samples() -> usize {
    512
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSection {
    pub clients: usize,
    pub sample_fraction: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeterogeneitySection {
    /// Builtin profile name ("uniform", "regular", "extreme").
    pub profile: Option<String>,
    /// Explicit probability vector over sub-net sizes; overrides `profile`.
    pub pi: Option<Vec<f64>>,
    /// "per_round" (redraw every round) or "per_client" (fixed per device).
    #[serde(default = "default_assignment")]
    pub assignment: String,
}

fn default_assignment() -> String {
    "per_round".into()
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSection {
    /// "fedadam" or "fedavg_sgd".
    pub optimizer: String,
    #[serde(default = "default_server_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_server_lr() -> f64 {
    1e-2
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.99
}
fn default_epsilon() -> f64 {
    1e-3
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalSection {
    #[serde(default = "default_local_epochs")]
    pub epochs: usize,
    #[serde(default = "default_local_lr")]
    pub lr: f64,
    #[serde(default = "default_local_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub freeze_frontend: bool,
}

fn default_local_epochs() -> usize {
    5
}
fn default_local_lr() -> f64 {
    0.01
}
fn default_local_batch() -> usize {
    8
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub rounds: u64,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    /// "efl" (heterogeneous sub-nets) or "ofl" (every client runs the full
    /// model and aggregation is plain FedAvg).
    #[serde(default = "default_scenario")]
    pub scenario: String,
    /// Which exits contribute to the training loss; defaults to all.
    pub exit_mask: Option<Vec<bool>>,
}

fn default_eval_every() -> u64 {
    5
}
fn default_scenario() -> String {
    "efl".into()
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSection {
    /// Centralized epochs on the source-domain corpus before federation.
    #[serde(default)]
    pub epochs: usize,
    #[serde(default = "default_local_lr")]
    pub lr: f64,
    #[serde(default = "default_pretrain_batch")]
    pub batch_size: usize,
    /// Start from this checkpoint instead of pre-training in-process.
    /// Relative paths resolve against the config file location.
    pub checkpoint: Option<PathBuf>,
}

fn default_pretrain_batch() -> usize {
    16
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ServerOptimizer {
    FedAdam,
    FedAvgSgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    Efl,
    Ofl,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        // Anchor relative checkpoint paths at the config file.
        if let Some(ckpt) = &cfg.pretrain.checkpoint {
            if ckpt.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.pretrain.checkpoint = Some(dir.join(ckpt));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            input_dim: self.model.input_dim,
            hidden_dim: self.model.hidden_dim,
            num_blocks: self.model.num_blocks,
            exit_every: self.model.exit_every,
            output_dim: self.model.output_dim,
            frontend_blocks: self.model.frontend_blocks,
            activation: match self.model.activation.as_str() {
                "relu" => Activation::Relu,
                _ => Activation::Tanh,
            },
            seed: self.model.init_seed.unwrap_or(self.seed),
        }
    }

    pub fn task_kind(&self) -> TaskKind {
        match self.task.kind.as_str() {
            "ctc" => TaskKind::Ctc,
            _ => TaskKind::Classification,
        }
    }

    pub fn population(&self) -> ClientPopulation {
        ClientPopulation {
            total_clients: self.population.clients,
            sample_fraction: self.population.sample_fraction,
            seed: self.seed,
        }
    }

    pub fn profile(&self) -> Result<HeterogeneityProfile> {
        let exits = self.model_config().num_exits();
        if let Some(pi) = &self.heterogeneity.pi {
            if pi.len() != exits {
                bail!(
                    "heterogeneity.pi has {} entries for {} exits",
                    pi.len(),
                    exits
                );
            }
            return Ok(HeterogeneityProfile::new("explicit", pi.clone())?);
        }
        let name = self.heterogeneity.profile.as_deref().unwrap_or("uniform");
        Ok(HeterogeneityProfile::builtin(name, exits)?)
    }

    pub fn assignment(&self) -> Result<Assignment> {
        match self.heterogeneity.assignment.as_str() {
            "per_round" => Ok(Assignment::PerRound),
            "per_client" => Ok(Assignment::PerClient),
            other => bail!("unknown heterogeneity.assignment `{other}`"),
        }
    }

    pub fn server_optimizer(&self) -> Result<ServerOptimizer> {
        match self.server.optimizer.as_str() {
            "fedadam" => Ok(ServerOptimizer::FedAdam),
            "fedavg_sgd" => Ok(ServerOptimizer::FedAvgSgd),
            other => bail!("unknown server.optimizer `{other}`"),
        }
    }

    pub fn fedadam_config(&self) -> FedAdamConfig {
        FedAdamConfig {
            eta: self.server.lr,
            beta1: self.server.beta1,
            beta2: self.server.beta2,
            epsilon: self.server.epsilon,
        }
    }

    pub fn scenario(&self) -> Result<Scenario> {
        match self.run.scenario.as_str() {
            "efl" => Ok(Scenario::Efl),
            "ofl" => Ok(Scenario::Ofl),
            other => bail!("unknown run.scenario `{other}`"),
        }
    }

    /// Per-exit loss weights implied by the exit mask (1.0 or 0.0).
    pub fn exit_weights(&self) -> Vec<f64> {
        let exits = self.model_config().num_exits();
        match &self.run.exit_mask {
            None => vec![1.0; exits],
            Some(mask) => mask.iter().map(|&on| f64::from(on)).collect(),
        }
    }

    pub fn local_train_config(&self) -> LocalTrainConfig {
        LocalTrainConfig {
            epochs: self.local.epochs,
            learning_rate: self.local.lr,
            batch_size: self.local.batch_size,
            freeze_frontend: self.local.freeze_frontend,
            task: self.task_kind(),
            exit_weights: Some(self.exit_weights()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.model_config();
        model.validate()?;
        self.population().validate()?;
        self.profile()?;
        self.assignment()?;
        self.server_optimizer()?;
        self.scenario()?;
        self.local_train_config().validate()?;

        match self.task.kind.as_str() {
            "classification" | "ctc" => {}
            other => bail!("unknown task.kind `{other}`"),
        }
        if self.task.kind == "classification" && self.model.output_dim < 2 {
            bail!("classification needs output_dim >= 2");
        }
        if self.task.kind == "ctc" && self.model.output_dim < 2 {
            bail!("ctc needs output_dim >= 2 (blank plus at least one token)");
        }
        if !(0.0..=1.0).contains(&self.task.skew) {
            bail!("task.skew must lie in [0, 1]");
        }
        if self.task.samples_per_client == 0 || self.task.eval_samples == 0 {
            bail!("task sample counts must be positive");
        }
        if self.run.rounds < 1 {
            bail!("run.rounds must be >= 1");
        }
        if self.run.eval_every < 1 {
            bail!("run.eval_every must be >= 1");
        }
        if let Some(mask) = &self.run.exit_mask {
            if mask.len() != model.num_exits() {
                bail!(
                    "run.exit_mask has {} entries for {} exits",
                    mask.len(),
                    model.num_exits()
                );
            }
            if !mask.iter().any(|&on| on) {
                bail!("run.exit_mask disables every exit");
            }
        }
        if let Some(ckpt) = &self.pretrain.checkpoint {
            if !ckpt.exists() {
                bail!("pretrain.checkpoint {} does not exist", ckpt.display());
            }
        }
        if self.pretrain.epochs > 0 && self.pretrain.checkpoint.is_some() {
            bail!("set either pretrain.epochs or pretrain.checkpoint, not both");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"
seed = 1

[model]
input_dim = 4
hidden_dim = 8
num_blocks = 4
exit_every = 2
output_dim = 4
frontend_blocks = 1

[task]
kind = "classification"
samples_per_client = 10

[population]
clients = 10
sample_fraction = 0.5

[heterogeneity]
profile = "uniform"

[server]
optimizer = "fedadam"

[local]

[run]
rounds = 3
"#;

    #[test]
    fn minimal_config_parses_and_validates() {
        let cfg: ExperimentConfig = toml::from_str(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.model_config().num_exits(), 2);
        assert_eq!(cfg.exit_weights(), vec![1.0, 1.0]);
        assert_eq!(cfg.server_optimizer().unwrap(), ServerOptimizer::FedAdam);
        assert_eq!(cfg.scenario().unwrap(), Scenario::Efl);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("[local]", "[local]\nlearning_speed = 3");
        assert!(toml::from_str::<ExperimentConfig>(&text).is_err());
    }

    #[test]
    fn explicit_pi_overrides_builtin() {
        let text = MINIMAL.replace("profile = \"uniform\"", "pi = [0.75, 0.25]");
        let cfg: ExperimentConfig = toml::from_str(&text).unwrap();
        let profile = cfg.profile().unwrap();
        assert_eq!(profile.pi, vec![0.75, 0.25]);
    }

    #[test]
    fn bad_mask_is_rejected() {
        let text = MINIMAL.replace("rounds = 3", "rounds = 3\nexit_mask = [false, false]");
        let cfg: ExperimentConfig = toml::from_str(&text).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn missing_checkpoint_is_rejected() {
        let text = format!("{MINIMAL}\n[pretrain]\ncheckpoint = \"/nonexistent/x.eefl1\"\n");
        let cfg: ExperimentConfig = toml::from_str(&text).unwrap();
        assert!(cfg.validate().is_err());
    }
}
