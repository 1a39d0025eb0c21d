//! Synthetic task generation: per-class Gaussian clusters for
//! classification, noisy per-token embedding frames for CTC, one shard per
//! client with optional label skew, and an optional fixed affine domain
//! shift separating the pre-training corpus from the federated one.

use eefl_core::model::{Sample, Target};
use eefl_core::rng::{StreamKey, StreamRng};
use eefl_core::TaskKind;

/// What to generate. `vocab` is the model output dimension: the class count
/// for classification, blank + tokens for CTC.
#[derive(Clone, Debug)]
pub struct SynthSpec {
    pub task: TaskKind,
    pub input_dim: usize,
    pub vocab: usize,
    pub num_clients: usize,
    pub samples_per_client: usize,
    pub eval_samples: usize,
    pub pretrain_samples: usize,
    /// 0 = balanced labels per shard; 1 = only the shard's preferred labels.
    pub skew: f64,
    /// When set, shards and the federated eval set live in an
    /// affine-distorted feature space relative to the pre-training corpus.
    pub domain_shift: bool,
}

/// All the data one experiment needs, generated deterministically from a
/// seed.
#[derive(Clone, Debug)]
pub struct Corpora {
    /// Source-domain corpus for centralized pre-training.
    pub source_train: Vec<Sample>,
    pub source_eval: Vec<Sample>,
    /// One shard per client, in the (possibly shifted) federated domain.
    pub shards: Vec<Vec<Sample>>,
    pub target_eval: Vec<Sample>,
}

impl Corpora {
    /// Union of all client shards (the "central oracle" training set).
    pub fn pooled_shards(&self) -> Vec<Sample> {
        self.shards.iter().flatten().cloned().collect()
    }
}

const FEATURE_NOISE: f64 = 0.65;

/// Per-dimension affine distortion used for the federated domain.
struct DomainShift {
    scale: Vec<f64>,
    offset: Vec<f64>,
}

impl DomainShift {
    fn identity(dim: usize) -> Self {
        DomainShift {
            scale: vec![1.0; dim],
            offset: vec![0.0; dim],
        }
    }

    fn drawn(dim: usize, key: StreamKey) -> Self {
        let mut rng = key.stream();
        DomainShift {
            scale: (0..dim).map(|_| rng.uniform(0.25, 2.2)).collect(),
            offset: (0..dim).map(|_| rng.uniform(-2.0, 2.0)).collect(),
        }
    }

    fn apply(&self, frame: &mut [f64]) {
        for ((x, s), o) in frame.iter_mut().zip(&self.scale).zip(&self.offset) {
            *x = *x * s + o;
        }
    }
}

/// Class (or token) prototype vectors, shared by both domains.
fn prototypes(spec: &SynthSpec, key: StreamKey) -> Vec<Vec<f64>> {
    let mut rng = key.stream();
    (0..spec.vocab)
        .map(|_| {
            (0..spec.input_dim)
                .map(|_| rng.uniform(-1.6, 1.6))
                .collect()
        })
        .collect()
}

fn noisy_frame(prototype: &[f64], rng: &mut StreamRng) -> Vec<f64> {
    prototype
        .iter()
        .map(|&p| p + FEATURE_NOISE * rng.normal())
        .collect()
}

/// Label for the j-th sample of a shard: round-robin keeps skew = 0 balanced
/// to within one count; with probability `skew` the label comes from the
/// shard's preferred subset instead.
fn pick_label(
    j: usize,
    labels: usize,
    preferred: &[usize],
    skew: f64,
    rng: &mut StreamRng,
) -> usize {
    if skew > 0.0 && rng.next_f64() < skew {
        preferred[rng.index(preferred.len())]
    } else {
        j % labels
    }
}

fn classification_sample(
    label: usize,
    protos: &[Vec<f64>],
    shift: &DomainShift,
    rng: &mut StreamRng,
) -> Sample {
    let mut frame = noisy_frame(&protos[label], rng);
    shift.apply(&mut frame);
    Sample {
        features: vec![frame],
        target: Target::Class(label),
    }
}

/// CTC sample: 1..=3 tokens, each rendered as 2 or 3 noisy embedding frames
/// (so T >= 2U always holds and every target is feasible).
fn ctc_sample(
    first_token: usize,
    protos: &[Vec<f64>],
    preferred: &[usize],
    skew: f64,
    shift: &DomainShift,
    rng: &mut StreamRng,
) -> Sample {
    let num_tokens = 1 + rng.index(3);
    let mut tokens = Vec::with_capacity(num_tokens);
    for t in 0..num_tokens {
        let tok = if t == 0 {
            first_token
        } else if skew > 0.0 && rng.next_f64() < skew {
            preferred[rng.index(preferred.len())]
        } else {
            1 + rng.index(protos.len() - 1)
        };
        tokens.push(tok);
    }
    let mut features = Vec::new();
    for &tok in &tokens {
        let repeats = 2 + rng.index(2);
        for _ in 0..repeats {
            let mut frame = noisy_frame(&protos[tok], rng);
            shift.apply(&mut frame);
            features.push(frame);
        }
    }
    Sample {
        features,
        target: Target::Tokens(tokens),
    }
}

/// Labels a shard may over-represent; roughly a quarter of the label space,
/// rotating with the shard index.
fn preferred_labels(shard: usize, first_label: usize, labels: usize) -> Vec<usize> {
    let span = (labels.div_ceil(4)).max(1);
    (0..span)
        .map(|k| first_label + (shard + k) % labels)
        .collect()
}

fn generate_set(
    spec: &SynthSpec,
    count: usize,
    protos: &[Vec<f64>],
    preferred: &[usize],
    skew: f64,
    shift: &DomainShift,
    key: StreamKey,
) -> Vec<Sample> {
    let mut rng = key.stream();
    (0..count)
        .map(|j| match spec.task {
            TaskKind::Classification => {
                let label = pick_label(j, spec.vocab, preferred, skew, &mut rng);
                classification_sample(label, protos, shift, &mut rng)
            }
            TaskKind::Ctc => {
                // Token ids live in 1..vocab (0 is the blank).
                let tokens = spec.vocab - 1;
                let first = if skew > 0.0 && rng.next_f64() < skew {
                    preferred[rng.index(preferred.len())]
                } else {
                    1 + j % tokens
                };
                ctc_sample(first, protos, preferred, skew, shift, &mut rng)
            }
        })
        .collect()
}

/// Generate every corpus an experiment needs. Deterministic in `seed`.
pub fn generate(spec: &SynthSpec, seed: u64) -> Corpora {
    let root = StreamKey::root(seed).child_str("synth");
    let protos = prototypes(spec, root.child_str("prototypes"));
    let first_label = if spec.task == TaskKind::Ctc { 1 } else { 0 };
    let labels: Vec<usize> = (first_label..spec.vocab).collect();

    let source = DomainShift::identity(spec.input_dim);
    let target = if spec.domain_shift {
        DomainShift::drawn(spec.input_dim, root.child_str("domain-shift"))
    } else {
        DomainShift::identity(spec.input_dim)
    };

    let source_train = generate_set(
        spec,
        spec.pretrain_samples,
        &protos,
        &labels,
        0.0,
        &source,
        root.child_str("source-train"),
    );
    let source_eval = generate_set(
        spec,
        spec.eval_samples,
        &protos,
        &labels,
        0.0,
        &source,
        root.child_str("source-eval"),
    );

    let shards = (0..spec.num_clients)
        .map(|c| {
            let preferred = preferred_labels(c, first_label, spec.vocab - first_label);
            generate_set(
                spec,
                spec.samples_per_client,
                &protos,
                &preferred,
                spec.skew,
                &target,
                root.child_str("shard").child(c as u64),
            )
        })
        .collect();

    let target_eval = generate_set(
        spec,
        spec.eval_samples,
        &protos,
        &labels,
        0.0,
        &target,
        root.child_str("target-eval"),
    );

    Corpora {
        source_train,
        source_eval,
        shards,
        target_eval,
    }
}
