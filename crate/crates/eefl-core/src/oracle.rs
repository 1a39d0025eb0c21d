//! Independent reference implementations used to cross-check the fast paths.
//!
//! Nothing here shares code with the implementations it validates: the CTC
//! oracle enumerates alignments instead of running the forward-backward
//! recursion, and the gradient oracle uses central finite differences
//! instead of backpropagation.

use crate::model::FrameSeq;
use crate::params::ParamSet;

/// CTC path collapse: merge adjacent repeats, then drop blanks (index 0).
pub fn collapse_path(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev {
            if p != 0 {
                out.push(p);
            }
            prev = Some(p);
        }
    }
    out
}

/// Brute-force CTC loss: enumerate all V^T frame-label paths, keep those
/// that collapse to the target, and log-sum their log-probabilities.
/// Returns `-log P`; +inf when no path matches.
pub fn ctc_loss_bruteforce(log_probs: &FrameSeq, targets: &[usize]) -> f64 {
    let frames = log_probs.len();
    let vocab = log_probs[0].len();
    let mut path = vec![0usize; frames];
    let mut total = f64::NEG_INFINITY;
    loop {
        let collapsed = collapse_path(&path);
        if collapsed == targets {
            let lp: f64 = path.iter().enumerate().map(|(t, &v)| log_probs[t][v]).sum();
            // Streaming log-sum-exp of two terms.
            let (a, b) = if total > lp { (total, lp) } else { (lp, total) };
            total = if b == f64::NEG_INFINITY {
                a
            } else {
                a + (b - a).exp().ln_1p()
            };
        }
        // Advance the odometer.
        let mut i = 0;
        loop {
            if i == frames {
                return -total;
            }
            path[i] += 1;
            if path[i] < vocab {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

/// Central finite-difference gradient of `f` over every coordinate of
/// `params`, with step `h`.
pub fn finite_diff_grad<F>(params: &ParamSet, h: f64, mut f: F) -> ParamSet
where
    F: FnMut(&ParamSet) -> f64,
{
    let mut grad = params.zeros_like();
    let mut work = params.clone();
    for si in 0..params.segments().len() {
        for i in 0..params.segments()[si].data.len() {
            let orig = params.segments()[si].data[i];
            work.segments_mut()[si].data[i] = orig + h;
            let up = f(&work);
            work.segments_mut()[si].data[i] = orig - h;
            let down = f(&work);
            work.segments_mut()[si].data[i] = orig;
            grad.segments_mut()[si].data[i] = (up - down) / (2.0 * h);
        }
    }
    grad
}
