//! Task losses and the compound multi-exit objective.
//!
//! Conventions: the CTC blank is index 0; per-sample losses are averaged
//! (not summed) over a batch so magnitudes do not depend on batch size; all
//! CTC arithmetic runs in log space.

use crate::error::{Error, Result};
use crate::model::{FrameSeq, Target};

/// log(sum(exp(xs))) that is exact for empty/-inf inputs.
fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let lse = logsumexp(row);
    row.iter().map(|&x| x - lse).collect()
}

fn softmax(row: &[f64]) -> Vec<f64> {
    log_softmax(row).iter().map(|&x| x.exp()).collect()
}

/// Softmax cross-entropy against a single class, averaged over frames.
///
/// Returns the loss in nats and its gradient with respect to the (raw)
/// logits: `(softmax - one_hot) / T` per frame.
pub fn cross_entropy(logits: &FrameSeq, target: usize) -> Result<(f64, FrameSeq)> {
    if logits.is_empty() {
        return Err(Error::Loss("cross_entropy: no frames".into()));
    }
    let vocab = logits[0].len();
    if vocab < 2 {
        return Err(Error::Loss(
            "cross_entropy: vocabulary must have >= 2 classes".into(),
        ));
    }
    if target >= vocab {
        return Err(Error::Loss(format!(
            "cross_entropy: target {target} out of range for {vocab} classes"
        )));
    }
    let frames = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for row in logits {
        if row.len() != vocab {
            return Err(Error::Loss("cross_entropy: ragged logit rows".into()));
        }
        let lsm = log_softmax(row);
        loss -= lsm[target] / frames;
        let mut g: Vec<f64> = lsm.iter().map(|&x| x.exp() / frames).collect();
        g[target] -= 1.0 / frames;
        grad.push(g);
    }
    Ok((loss, grad))
}

/// Number of adjacent equal pairs in the target, which each require an extra
/// separating blank frame.
fn adjacent_repeats(targets: &[usize]) -> usize {
    targets.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Minimum number of frames that admits a valid CTC alignment.
pub fn ctc_min_frames(targets: &[usize]) -> usize {
    targets.len() + adjacent_repeats(targets)
}

/// CTC loss over `log_probs` (shape T x V, blank at index 0) for a target
/// token sequence, via the forward-backward recursion over the
/// blank-augmented label sequence.
///
/// Returns `-log P(target | log_probs)` and the gradient with respect to the
/// log-probability entries (treated as free variables):
/// `d loss / d lp[t][k] = -sum of posterior occupancy of states labeled k`.
pub fn ctc_loss(log_probs: &FrameSeq, targets: &[usize]) -> Result<(f64, FrameSeq)> {
    if log_probs.is_empty() {
        return Err(Error::Loss("ctc_loss: no frames".into()));
    }
    let frames = log_probs.len();
    let vocab = log_probs[0].len();
    if log_probs.iter().any(|row| row.len() != vocab) {
        return Err(Error::Loss("ctc_loss: ragged log_prob rows".into()));
    }
    if vocab < 2 && !targets.is_empty() {
        return Err(Error::Loss(
            "ctc_loss: vocabulary has no non-blank tokens".into(),
        ));
    }
    for &u in targets {
        if u == 0 {
            return Err(Error::Loss(
                "ctc_loss: target contains the blank token".into(),
            ));
        }
        if u >= vocab {
            return Err(Error::Loss(format!(
                "ctc_loss: token {u} out of range for vocabulary {vocab}"
            )));
        }
    }
    let required = ctc_min_frames(targets);
    if frames < required {
        return Err(Error::CtcInfeasible {
            frames,
            target_len: targets.len(),
            repeats: adjacent_repeats(targets),
            required,
        });
    }

    // Blank-augmented label sequence: blank, u1, blank, u2, ..., uU, blank.
    let states = 2 * targets.len() + 1;
    let label = |s: usize| -> usize {
        if s.is_multiple_of(2) {
            0
        } else {
            targets[s / 2]
        }
    };

    let ninf = f64::NEG_INFINITY;
    let mut alpha = vec![vec![ninf; states]; frames];
    alpha[0][0] = log_probs[0][label(0)];
    if states > 1 {
        alpha[0][1] = log_probs[0][label(1)];
    }
    for t in 1..frames {
        for s in 0..states {
            let mut terms = [ninf; 3];
            terms[0] = alpha[t - 1][s];
            if s >= 1 {
                terms[1] = alpha[t - 1][s - 1];
            }
            if s >= 2 && label(s) != 0 && label(s) != label(s - 2) {
                terms[2] = alpha[t - 1][s - 2];
            }
            let m = logsumexp(&terms);
            alpha[t][s] = if m == ninf {
                ninf
            } else {
                m + log_probs[t][label(s)]
            };
        }
    }

    let log_p = if states > 1 {
        logsumexp(&[alpha[frames - 1][states - 1], alpha[frames - 1][states - 2]])
    } else {
        alpha[frames - 1][states - 1]
    };
    if !log_p.is_finite() {
        return Err(Error::Loss(
            "ctc_loss: no alignment has finite probability".into(),
        ));
    }

    // Beta excludes frame t: beta[t][s] sums suffix paths over frames t+1..T.
    let mut beta = vec![vec![ninf; states]; frames];
    beta[frames - 1][states - 1] = 0.0;
    if states > 1 {
        beta[frames - 1][states - 2] = 0.0;
    }
    for t in (0..frames - 1).rev() {
        for s in 0..states {
            let mut terms = [ninf; 3];
            terms[0] = beta[t + 1][s] + log_probs[t + 1][label(s)];
            if s + 1 < states {
                terms[1] = beta[t + 1][s + 1] + log_probs[t + 1][label(s + 1)];
            }
            if s + 2 < states && label(s + 2) != 0 && label(s + 2) != label(s) {
                terms[2] = beta[t + 1][s + 2] + log_probs[t + 1][label(s + 2)];
            }
            beta[t][s] = logsumexp(&terms);
        }
    }

    let mut grad = vec![vec![0.0; vocab]; frames];
    for t in 0..frames {
        for s in 0..states {
            let occupancy = alpha[t][s] + beta[t][s] - log_p;
            if occupancy > ninf {
                grad[t][label(s)] -= occupancy.exp();
            }
        }
    }

    Ok((-log_p, grad))
}

/// Per-exit losses and their weighted compound value.
#[derive(Clone, Debug, PartialEq)]
pub struct ExitLossReport {
    /// Unweighted per-exit losses, in nats.
    pub per_exit: Vec<f64>,
    /// Weighted sum of the per-exit losses.
    pub compound: f64,
    /// The per-exit weights that were applied.
    pub weights: Vec<f64>,
}

/// Dispatch one sample's task loss on its target kind, returning loss and
/// gradient with respect to the raw logits.
fn task_loss(logits: &FrameSeq, target: &Target) -> Result<(f64, FrameSeq)> {
    match target {
        Target::Class(c) => cross_entropy(logits, *c),
        Target::Tokens(toks) => {
            let log_probs: FrameSeq = logits.iter().map(|row| log_softmax(row)).collect();
            let (loss, grad_lp) = ctc_loss(&log_probs, toks)?;
            // Chain through log_softmax: d/dlogit_j = g_j - p_j * sum_k g_k.
            let grad = logits
                .iter()
                .zip(&grad_lp)
                .map(|(row, g)| {
                    let p = softmax(row);
                    let gsum: f64 = g.iter().sum();
                    g.iter().zip(&p).map(|(&gj, &pj)| gj - pj * gsum).collect()
                })
                .collect();
            Ok((loss, grad))
        }
    }
}

/// Compound early-exit objective over a batch: for each active exit `m`,
/// `L_m` is the mean task loss over samples, and the compound loss is
/// `sum_m xi_m * L_m`. Logit gradients come back scaled by `xi_m / n`.
///
/// `weights` defaults to all ones (the unweighted joint objective).
pub fn compound_ee_loss(
    per_exit_logits: &[Vec<FrameSeq>],
    targets: &[Target],
    weights: Option<&[f64]>,
) -> Result<(ExitLossReport, Vec<Vec<FrameSeq>>)> {
    let exits = per_exit_logits.len();
    if exits == 0 {
        return Err(Error::Loss("compound_ee_loss: no exits".into()));
    }
    let weights: Vec<f64> = match weights {
        Some(w) => {
            if w.len() != exits {
                return Err(Error::Loss(format!(
                    "compound_ee_loss: {} weights for {} exits",
                    w.len(),
                    exits
                )));
            }
            w.to_vec()
        }
        None => vec![1.0; exits],
    };
    let n = targets.len();
    if n == 0 {
        return Err(Error::Loss("compound_ee_loss: empty batch".into()));
    }

    let mut per_exit = Vec::with_capacity(exits);
    let mut grads: Vec<Vec<FrameSeq>> = Vec::with_capacity(exits);
    for (m, exit_logits) in per_exit_logits.iter().enumerate() {
        if exit_logits.len() != n {
            return Err(Error::Loss(format!(
                "compound_ee_loss: exit {} has {} logit sequences for {} targets",
                m + 1,
                exit_logits.len(),
                n
            )));
        }
        let scale = weights[m] / n as f64;
        let mut loss_m = 0.0;
        let mut exit_grads = Vec::with_capacity(n);
        for (logits, target) in exit_logits.iter().zip(targets) {
            let (loss, mut grad) = task_loss(logits, target)?;
            loss_m += loss / n as f64;
            for row in &mut grad {
                for g in row {
                    *g *= scale;
                }
            }
            exit_grads.push(grad);
        }
        per_exit.push(loss_m);
        grads.push(exit_grads);
    }

    let compound = per_exit.iter().zip(&weights).map(|(l, w)| l * w).sum();

    Ok((
        ExitLossReport {
            per_exit,
            compound,
            weights,
        },
        grads,
    ))
}
