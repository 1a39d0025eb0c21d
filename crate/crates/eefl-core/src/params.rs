//! Named, block-segmented parameter container.
//!
//! A [`ParamSet`] holds the global or local model parameters (and, with the
//! same segmentation, gradients and optimizer moments). Segment names and
//! shapes are fully determined by the model configuration, so two sets built
//! from the same configuration are element-wise addable. Iteration order is
//! canonical: blocks by ascending index (weight before bias), then heads by
//! ascending index (weight before bias).

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    BlockWeight,
    BlockBias,
    HeadWeight,
    HeadBias,
}

impl Role {
    pub fn is_block(self) -> bool {
        matches!(self, Role::BlockWeight | Role::BlockBias)
    }

    pub fn is_weight(self) -> bool {
        matches!(self, Role::BlockWeight | Role::HeadWeight)
    }
}

/// Identifies one segment: a role plus the 1-based block or head index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SegmentId {
    pub role: Role,
    pub index: usize,
}

impl SegmentId {
    pub fn block_weight(index: usize) -> Self {
        SegmentId {
            role: Role::BlockWeight,
            index,
        }
    }
    pub fn block_bias(index: usize) -> Self {
        SegmentId {
            role: Role::BlockBias,
            index,
        }
    }
    pub fn head_weight(index: usize) -> Self {
        SegmentId {
            role: Role::HeadWeight,
            index,
        }
    }
    pub fn head_bias(index: usize) -> Self {
        SegmentId {
            role: Role::HeadBias,
            index,
        }
    }

    /// Canonical segment name, used in checkpoints and error messages.
    pub fn name(&self) -> String {
        match self.role {
            Role::BlockWeight => format!("block{}.weight", self.index),
            Role::BlockBias => format!("block{}.bias", self.index),
            Role::HeadWeight => format!("head{}.weight", self.index),
            Role::HeadBias => format!("head{}.bias", self.index),
        }
    }

    /// Parse a canonical segment name back into an id.
    pub fn parse(name: &str) -> Result<Self> {
        let bad = || Error::Checkpoint(format!("unrecognized segment name `{name}`"));
        let (prefix, rest) = if let Some(r) = name.strip_prefix("block") {
            ("block", r)
        } else if let Some(r) = name.strip_prefix("head") {
            ("head", r)
        } else {
            return Err(bad());
        };
        let (idx, role) = rest.split_once('.').ok_or_else(bad)?;
        let index: usize = idx.parse().map_err(|_| bad())?;
        let role = match (prefix, role) {
            ("block", "weight") => Role::BlockWeight,
            ("block", "bias") => Role::BlockBias,
            ("head", "weight") => Role::HeadWeight,
            ("head", "bias") => Role::HeadBias,
            _ => return Err(bad()),
        };
        Ok(SegmentId { role, index })
    }
}

/// One named tensor: shape `[out, in]` for weights, `[out]` for biases,
/// stored row-major as a flat f64 array.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub id: SegmentId,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Segment {
    pub fn zeros(id: SegmentId, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Segment {
            id,
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Ordered collection of segments plus the round at which it was created.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    /// Server round at which this set was produced (provenance only).
    pub created_round: u64,
    segments: Vec<Segment>,
}

impl ParamSet {
    pub fn from_segments(segments: Vec<Segment>) -> Self {
        ParamSet {
            created_round: 0,
            segments,
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segments_mut(&mut self) -> &mut [Segment] {
        &mut self.segments
    }

    pub fn segment(&self, id: SegmentId) -> Option<&Segment> {
        self.segments.iter().find(|s| s.id == id)
    }

    pub fn segment_mut(&mut self, id: SegmentId) -> Option<&mut Segment> {
        self.segments.iter_mut().find(|s| s.id == id)
    }

    /// Number of scalar parameters.
    pub fn num_params(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }

    /// (number of blocks, number of heads) as described by the segmentation.
    pub fn layout(&self) -> (usize, usize) {
        let mut blocks = 0;
        let mut heads = 0;
        for s in &self.segments {
            if s.id.role.is_block() {
                blocks = blocks.max(s.id.index);
            } else {
                heads = heads.max(s.id.index);
            }
        }
        (blocks, heads)
    }

    pub fn same_segmentation(&self, other: &ParamSet) -> bool {
        self.segments.len() == other.segments.len()
            && self
                .segments
                .iter()
                .zip(&other.segments)
                .all(|(a, b)| a.id == b.id && a.shape == b.shape)
    }

    fn check_segmentation(&self, other: &ParamSet) -> Result<()> {
        if self.same_segmentation(other) {
            Ok(())
        } else {
            Err(Error::Model("parameter segmentation mismatch".into()))
        }
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            created_round: self.created_round,
            segments: self
                .segments
                .iter()
                .map(|s| Segment::zeros(s.id, s.shape.clone()))
                .collect(),
        }
    }

    /// self += alpha * other
    pub fn add_scaled(&mut self, other: &ParamSet, alpha: f64) -> Result<()> {
        self.check_segmentation(other)?;
        for (a, b) in self.segments.iter_mut().zip(&other.segments) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += alpha * y;
            }
        }
        Ok(())
    }

    /// self - other, element-wise.
    pub fn sub(&self, other: &ParamSet) -> Result<ParamSet> {
        self.check_segmentation(other)?;
        let mut out = self.clone();
        for (a, b) in out.segments.iter_mut().zip(&other.segments) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x -= y;
            }
        }
        Ok(out)
    }

    pub fn scale(&mut self, alpha: f64) {
        for s in &mut self.segments {
            for x in &mut s.data {
                *x *= alpha;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.segments
            .iter()
            .all(|s| s.data.iter().all(|x| x.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.segments
            .iter()
            .flat_map(|s| s.data.iter())
            .fold(0.0, |m, &x| m.max(x.abs()))
    }

    /// Largest absolute element-wise difference. Errors on mismatched
    /// segmentation.
    pub fn max_abs_diff(&self, other: &ParamSet) -> Result<f64> {
        self.check_segmentation(other)?;
        let mut m = 0.0f64;
        for (a, b) in self.segments.iter().zip(&other.segments) {
            for (x, y) in a.data.iter().zip(&b.data) {
                m = m.max((x - y).abs());
            }
        }
        Ok(m)
    }

    /// Set the segments of blocks 1..=prefix to exactly zero.
    pub fn zero_block_prefix(&mut self, prefix: usize) {
        for s in &mut self.segments {
            if s.id.role.is_block() && s.id.index <= prefix {
                s.data.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }
}
