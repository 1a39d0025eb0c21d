//! Early-exit model: a stack of dense blocks with one linear exit head every
//! `exit_every` blocks.
//!
//! Block `b` computes `y = act(W_b x + b_b)`, adding a residual connection
//! when input and output widths match (always true past the first block).
//! Exit head `m` is an independent linear layer attached to the output of
//! block `m * exit_every`. A sub-net with `l` exits consists of blocks
//! `1..=l*exit_every` and heads `1..=l`; everything above is untouched by
//! both forward and backward.

use crate::error::{Error, Result};
use crate::params::{ParamSet, Segment, SegmentId};
use crate::rng::StreamKey;

/// One frame sequence: `T` rows of equal width.
pub type FrameSeq = Vec<Vec<f64>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    #[inline]
    fn deriv(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Static definition of the early-exit architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// L: total number of dense blocks.
    pub num_blocks: usize,
    /// B: one exit head every `exit_every` blocks; must divide `num_blocks`.
    pub exit_every: usize,
    /// Output vocabulary size (including the CTC blank when applicable).
    pub output_dim: usize,
    /// F: prefix of blocks designated as the freezable front-end; must lie
    /// strictly below the first exit.
    pub frontend_blocks: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl ModelConfig {
    /// Small configuration used throughout the test suites and the reference
    /// experiment: 3 exits, one freezable front-end block.
    pub fn desk_scale() -> Self {
        ModelConfig {
            input_dim: 8,
            hidden_dim: 16,
            num_blocks: 6,
            exit_every: 2,
            output_dim: 8,
            frontend_blocks: 1,
            activation: Activation::Tanh,
            seed: 0,
        }
    }

    /// Full-depth preset: 12 blocks, 6 exits.
    pub fn full_scale() -> Self {
        ModelConfig {
            num_blocks: 12,
            ..Self::desk_scale()
        }
    }

    /// M: number of exits.
    pub fn num_exits(&self) -> usize {
        self.num_blocks / self.exit_every
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Config(msg));
        if self.input_dim == 0 || self.hidden_dim == 0 || self.output_dim == 0 {
            return err("dimensions must be positive".into());
        }
        if self.num_blocks == 0 || self.exit_every == 0 {
            return err("num_blocks and exit_every must be positive".into());
        }
        if !self.num_blocks.is_multiple_of(self.exit_every) {
            return err(format!(
                "num_blocks ({}) must be a multiple of exit_every ({})",
                self.num_blocks, self.exit_every
            ));
        }
        if self.frontend_blocks >= self.exit_every {
            return err(format!(
                "frontend_blocks ({}) must be strictly below the first exit (exit_every = {})",
                self.frontend_blocks, self.exit_every
            ));
        }
        Ok(())
    }

    /// Input width of block `b` (1-based).
    fn block_in_dim(&self, b: usize) -> usize {
        if b == 1 {
            self.input_dim
        } else {
            self.hidden_dim
        }
    }

    /// Whether block `b` carries a residual connection.
    fn block_residual(&self, b: usize) -> bool {
        self.block_in_dim(b) == self.hidden_dim
    }

    /// Canonical segmentation implied by this configuration.
    pub fn segment_layout(&self) -> Vec<(SegmentId, Vec<usize>)> {
        let mut out = Vec::new();
        for b in 1..=self.num_blocks {
            out.push((
                SegmentId::block_weight(b),
                vec![self.hidden_dim, self.block_in_dim(b)],
            ));
            out.push((SegmentId::block_bias(b), vec![self.hidden_dim]));
        }
        for m in 1..=self.num_exits() {
            out.push((
                SegmentId::head_weight(m),
                vec![self.output_dim, self.hidden_dim],
            ));
            out.push((SegmentId::head_bias(m), vec![self.output_dim]));
        }
        out
    }

    /// Stable 64-bit digest of all architecture fields (not the seed), used
    /// to tie checkpoints to the configuration that produced them.
    pub fn fingerprint(&self) -> u64 {
        let mut buf = Vec::with_capacity(64);
        for v in [
            self.input_dim,
            self.hidden_dim,
            self.num_blocks,
            self.exit_every,
            self.output_dim,
            self.frontend_blocks,
            match self.activation {
                Activation::Tanh => 0usize,
                Activation::Relu => 1,
            },
        ] {
            buf.extend_from_slice(&(v as u64).to_le_bytes());
        }
        crate::rng::fnv1a(&buf)
    }
}

/// Prefix of the early-exit model containing the first `exits` exits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubNetSpec {
    pub exits: usize,
}

impl SubNetSpec {
    pub fn new(exits: usize) -> Self {
        SubNetSpec { exits }
    }

    pub fn full(config: &ModelConfig) -> Self {
        SubNetSpec {
            exits: config.num_exits(),
        }
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.exits < 1 || self.exits > config.num_exits() {
            return Err(Error::Config(format!(
                "sub-net exits ({}) out of range [1, {}]",
                self.exits,
                config.num_exits()
            )));
        }
        Ok(())
    }

    /// Highest block included in this sub-net.
    pub fn top_block(&self, config: &ModelConfig) -> usize {
        self.exits * config.exit_every
    }

    /// Whether a segment belongs to this sub-net.
    pub fn covers(&self, id: SegmentId, config: &ModelConfig) -> bool {
        if id.role.is_block() {
            id.index <= self.top_block(config)
        } else {
            id.index <= self.exits
        }
    }
}

/// Training target for one sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Target {
    /// Class index for the classification task.
    Class(usize),
    /// Token sequence (no blanks) for the CTC task.
    Tokens(Vec<usize>),
}

/// One sample: `T` input frames plus a target.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: FrameSeq,
    pub target: Target,
}

/// A set of samples processed together.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub samples: Vec<Sample>,
}

impl Batch {
    pub fn new(samples: Vec<Sample>) -> Self {
        Batch { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn targets(&self) -> Vec<Target> {
        self.samples.iter().map(|s| s.target.clone()).collect()
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if s.features.is_empty() {
                return Err(Error::Model(format!("sample {i} has no frames")));
            }
            for row in &s.features {
                if row.len() != config.input_dim {
                    return Err(Error::Model(format!(
                        "sample {i}: frame width {} != input_dim {}",
                        row.len(),
                        config.input_dim
                    )));
                }
            }
            if let Target::Tokens(toks) = &s.target {
                if toks.len() > s.features.len() {
                    return Err(Error::Model(format!(
                        "sample {i}: CTC target longer than frame count"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Deterministically initialize parameters for `config`: weights uniform in
/// [-1/sqrt(fan_in), +1/sqrt(fan_in)] from per-segment streams, biases zero.
pub fn init_model(config: &ModelConfig) -> Result<ParamSet> {
    config.validate()?;
    let key = StreamKey::root(config.seed).child_str("init");
    let mut segments = Vec::new();
    for (id, shape) in config.segment_layout() {
        let mut seg = Segment::zeros(id, shape);
        if id.role.is_weight() {
            let fan_in = seg.shape[1];
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut rng = key.child_str(&id.name()).stream();
            for x in &mut seg.data {
                *x = rng.uniform(-bound, bound);
            }
        }
        segments.push(seg);
    }
    Ok(ParamSet::from_segments(segments))
}

fn check_params(params: &ParamSet, config: &ModelConfig) -> Result<()> {
    let expected = config.segment_layout();
    let actual = params.segments();
    let ok = actual.len() == expected.len()
        && actual
            .iter()
            .zip(&expected)
            .all(|(s, (id, shape))| s.id == *id && s.shape == *shape);
    if ok {
        Ok(())
    } else {
        Err(Error::Model(
            "parameter set does not match model configuration".into(),
        ))
    }
}

/// y = W x + b for a weight segment of shape [out, in].
fn affine(w: &Segment, bias: &Segment, x: &[f64]) -> Vec<f64> {
    let in_dim = w.shape[1];
    debug_assert_eq!(x.len(), in_dim);
    let mut y = bias.data.clone();
    for (yo, row) in y.iter_mut().zip(w.data.chunks_exact(in_dim)) {
        let mut acc = 0.0;
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        *yo += acc;
    }
    y
}

/// W^T dy for a weight segment of shape [out, in].
fn matvec_transpose(w: &Segment, dy: &[f64]) -> Vec<f64> {
    let in_dim = w.shape[1];
    debug_assert_eq!(dy.len(), w.shape[0]);
    let mut dx = vec![0.0; in_dim];
    for (&g, row) in dy.iter().zip(w.data.chunks_exact(in_dim)) {
        for (dxi, wi) in dx.iter_mut().zip(row) {
            *dxi += g * wi;
        }
    }
    dx
}

/// Forward intermediates needed for an exact backward pass.
pub struct ForwardTrace {
    /// Per-exit, per-sample logit sequences (`exits` entries).
    pub logits: Vec<Vec<FrameSeq>>,
    /// Block outputs per sample: `hidden[s][b]` is the output of block `b`
    /// (`hidden[s][0]` is the input).
    hidden: Vec<Vec<FrameSeq>>,
    /// Pre-activations per sample: `preact[s][b-1]` for block `b`.
    preact: Vec<Vec<FrameSeq>>,
    subnet: SubNetSpec,
}

/// Run the sub-net forward, keeping intermediates for [`backward`].
pub fn forward_traced(
    params: &ParamSet,
    config: &ModelConfig,
    batch: &Batch,
    subnet: SubNetSpec,
) -> Result<ForwardTrace> {
    config.validate()?;
    check_params(params, config)?;
    subnet.validate(config)?;
    batch.validate(config)?;

    let top_block = subnet.top_block(config);
    let mut logits = vec![Vec::with_capacity(batch.len()); subnet.exits];
    let mut hidden = Vec::with_capacity(batch.len());
    let mut preact = Vec::with_capacity(batch.len());

    for sample in &batch.samples {
        let mut hs: Vec<FrameSeq> = Vec::with_capacity(top_block + 1);
        let mut zs: Vec<FrameSeq> = Vec::with_capacity(top_block);
        hs.push(sample.features.clone());
        for b in 1..=top_block {
            let w = params.segment(SegmentId::block_weight(b)).unwrap();
            let bias = params.segment(SegmentId::block_bias(b)).unwrap();
            let residual = config.block_residual(b);
            let prev = &hs[b - 1];
            let mut z_seq = Vec::with_capacity(prev.len());
            let mut h_seq = Vec::with_capacity(prev.len());
            for (t, x) in prev.iter().enumerate() {
                let z = affine(w, bias, x);
                let mut h: Vec<f64> = z.iter().map(|&v| config.activation.apply(v)).collect();
                if residual {
                    for (hi, xi) in h.iter_mut().zip(&prev[t]) {
                        *hi += xi;
                    }
                }
                z_seq.push(z);
                h_seq.push(h);
            }
            zs.push(z_seq);
            hs.push(h_seq);

            if b % config.exit_every == 0 {
                let m = b / config.exit_every;
                let hw = params.segment(SegmentId::head_weight(m)).unwrap();
                let hb = params.segment(SegmentId::head_bias(m)).unwrap();
                let seq: FrameSeq = hs[b].iter().map(|h| affine(hw, hb, h)).collect();
                logits[m - 1].push(seq);
            }
        }
        hidden.push(hs);
        preact.push(zs);
    }

    Ok(ForwardTrace {
        logits,
        hidden,
        preact,
        subnet,
    })
}

/// Forward pass producing one logit sequence per active exit, per sample.
pub fn forward(
    params: &ParamSet,
    config: &ModelConfig,
    batch: &Batch,
    subnet: SubNetSpec,
) -> Result<Vec<Vec<FrameSeq>>> {
    Ok(forward_traced(params, config, batch, subnet)?.logits)
}

/// Exact backpropagation of per-exit logit gradients into a gradient
/// `ParamSet` with the same segmentation as `params`.
///
/// Segments outside the active sub-net are exactly zero; with
/// `freeze_frontend`, so are the segments of blocks `1..=frontend_blocks`.
pub fn backward(
    params: &ParamSet,
    config: &ModelConfig,
    batch: &Batch,
    subnet: SubNetSpec,
    trace: &ForwardTrace,
    per_exit_logit_grads: &[Vec<FrameSeq>],
    freeze_frontend: bool,
) -> Result<ParamSet> {
    check_params(params, config)?;
    if trace.subnet != subnet || trace.hidden.len() != batch.len() {
        return Err(Error::Model(
            "forward trace does not match backward inputs".into(),
        ));
    }
    if per_exit_logit_grads.len() != subnet.exits {
        return Err(Error::Model(format!(
            "expected {} per-exit gradient lists, got {}",
            subnet.exits,
            per_exit_logit_grads.len()
        )));
    }
    for (m, per_sample) in per_exit_logit_grads.iter().enumerate() {
        if per_sample.len() != batch.len() {
            return Err(Error::Model(format!(
                "exit {}: gradient count {} != sample count {}",
                m + 1,
                per_sample.len(),
                batch.len()
            )));
        }
    }

    let top_block = subnet.top_block(config);
    let frozen = if freeze_frontend {
        config.frontend_blocks
    } else {
        0
    };
    let mut grad = params.zeros_like();

    for (s, hs) in trace.hidden.iter().enumerate() {
        let frames = hs[0].len();
        // d(loss)/d(h_b), maintained while walking blocks top-down.
        let mut dh: FrameSeq = vec![vec![0.0; config.hidden_dim]; frames];

        for b in (1..=top_block).rev() {
            // Exit head attached to the output of block b.
            if b % config.exit_every == 0 {
                let m = b / config.exit_every;
                let hw = params.segment(SegmentId::head_weight(m)).unwrap();
                let dlogits = &per_exit_logit_grads[m - 1][s];
                if dlogits.len() != frames {
                    return Err(Error::Model(format!(
                        "exit {m}: gradient frame count mismatch"
                    )));
                }
                {
                    let gw = grad.segment_mut(SegmentId::head_weight(m)).unwrap();
                    let in_dim = config.hidden_dim;
                    for (t, dl) in dlogits.iter().enumerate() {
                        let h = &hs[b][t];
                        for (o, &g) in dl.iter().enumerate() {
                            let row = &mut gw.data[o * in_dim..(o + 1) * in_dim];
                            for (ri, hi) in row.iter_mut().zip(h) {
                                *ri += g * hi;
                            }
                        }
                    }
                }
                {
                    let gb = grad.segment_mut(SegmentId::head_bias(m)).unwrap();
                    for dl in dlogits {
                        for (gi, &g) in gb.data.iter_mut().zip(dl) {
                            *gi += g;
                        }
                    }
                }
                for (t, dl) in dlogits.iter().enumerate() {
                    let dx = matvec_transpose(hw, dl);
                    for (a, b_) in dh[t].iter_mut().zip(&dx) {
                        *a += b_;
                    }
                }
            }

            // Everything below the frozen prefix receives no parameter
            // gradients, and no lower block has any either; stop here.
            if b <= frozen {
                break;
            }

            // Block b: y = act(z) + (x when residual).
            let w = params.segment(SegmentId::block_weight(b)).unwrap();
            let residual = config.block_residual(b);
            let zs = &trace.preact[s][b - 1];
            let prev = &hs[b - 1];
            let in_dim = config.block_in_dim(b);
            let mut dh_prev: FrameSeq = vec![vec![0.0; in_dim]; frames];

            for t in 0..frames {
                let dz: Vec<f64> = zs[t]
                    .iter()
                    .zip(&dh[t])
                    .map(|(&z, &d)| config.activation.deriv(z) * d)
                    .collect();
                {
                    let gw = grad.segment_mut(SegmentId::block_weight(b)).unwrap();
                    for (o, &g) in dz.iter().enumerate() {
                        let row = &mut gw.data[o * in_dim..(o + 1) * in_dim];
                        for (ri, xi) in row.iter_mut().zip(&prev[t]) {
                            *ri += g * xi;
                        }
                    }
                }
                {
                    let gb = grad.segment_mut(SegmentId::block_bias(b)).unwrap();
                    for (gi, &g) in gb.data.iter_mut().zip(&dz) {
                        *gi += g;
                    }
                }
                if b > 1 {
                    let mut dx = matvec_transpose(w, &dz);
                    if residual {
                        for (di, hi) in dx.iter_mut().zip(&dh[t]) {
                            *di += hi;
                        }
                    }
                    dh_prev[t] = dx;
                }
            }
            dh = dh_prev;
        }
    }

    Ok(grad)
}
