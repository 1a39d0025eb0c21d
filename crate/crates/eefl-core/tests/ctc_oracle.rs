//! Exhaustive CTC equivalence: the forward-backward recursion must agree
//! with brute-force alignment enumeration on every feasible instance with
//! T <= 6, U <= 3, V <= 4, and reject every infeasible one.

use eefl_core::losses::{ctc_loss, ctc_min_frames, log_softmax};
use eefl_core::model::FrameSeq;
use eefl_core::oracle::ctc_loss_bruteforce;
use eefl_core::rng::StreamKey;
use eefl_core::Error;

/// All token sequences of length `len` over the alphabet 1..vocab.
fn token_sequences(vocab: usize, len: usize) -> Vec<Vec<usize>> {
    if len == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for shorter in token_sequences(vocab, len - 1) {
        for tok in 1..vocab {
            let mut seq = shorter.clone();
            seq.push(tok);
            out.push(seq);
        }
    }
    out
}

fn random_log_probs(frames: usize, vocab: usize, seed: u64) -> FrameSeq {
    let mut rng = StreamKey::root(seed).stream();
    (0..frames)
        .map(|_| {
            let logits: Vec<f64> = (0..vocab).map(|_| rng.uniform(-2.0, 2.0)).collect();
            log_softmax(&logits)
        })
        .collect()
}

#[test]
fn matches_bruteforce_on_all_small_instances() {
    let mut feasible = 0;
    let mut infeasible = 0;
    let mut instance = 0u64;
    for vocab in 2..=4usize {
        for target_len in 0..=3usize {
            for targets in token_sequences(vocab, target_len) {
                for frames in 1..=6usize {
                    instance += 1;
                    let log_probs = random_log_probs(frames, vocab, 1000 + instance);
                    let result = ctc_loss(&log_probs, &targets);
                    if frames >= ctc_min_frames(&targets) {
                        feasible += 1;
                        let (loss, _) = result.unwrap_or_else(|e| {
                            panic!("T={frames} V={vocab} target={targets:?}: unexpected {e}")
                        });
                        let reference = ctc_loss_bruteforce(&log_probs, &targets);
                        assert!(
                            (loss - reference).abs() <= 1e-10,
                            "T={frames} V={vocab} target={targets:?}: \
                             dp {loss} vs brute force {reference}"
                        );
                    } else {
                        infeasible += 1;
                        assert!(
                            matches!(result, Err(Error::CtcInfeasible { .. })),
                            "T={frames} V={vocab} target={targets:?}: expected infeasibility"
                        );
                    }
                }
            }
        }
    }
    // 59 target sequences x 6 frame counts.
    assert_eq!(feasible + infeasible, 354);
    assert!(infeasible > 0);
}

#[test]
fn dp_and_bruteforce_agree_on_skewed_distributions() {
    // Highly non-uniform rows exercise the log-space path.
    let mut rng = StreamKey::root(99).stream();
    for case in 0..50 {
        let frames = 1 + rng.index(6);
        let vocab = 2 + rng.index(3);
        let max_len = 3.min(frames);
        let target_len = rng.index(max_len + 1);
        let targets: Vec<usize> = (0..target_len).map(|_| 1 + rng.index(vocab - 1)).collect();
        if frames < ctc_min_frames(&targets) {
            continue;
        }
        let log_probs: FrameSeq = (0..frames)
            .map(|_| {
                let logits: Vec<f64> = (0..vocab).map(|_| rng.uniform(-12.0, 12.0)).collect();
                log_softmax(&logits)
            })
            .collect();
        let (loss, _) = ctc_loss(&log_probs, &targets).unwrap();
        let reference = ctc_loss_bruteforce(&log_probs, &targets);
        assert!(
            (loss - reference).abs() <= 1e-10,
            "case {case}: dp {loss} vs brute force {reference}"
        );
    }
}
