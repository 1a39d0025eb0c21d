//! Regenerates the pinned-scenario regression artifacts under
//! `configs/pinned/`:
//!
//! - `thresholds.toml`: per-exit loss thresholds derived from a centralized
//!   training oracle. The oracle fine-tunes the same pre-trained model on
//!   the pooled client shards (the best any federation of these clients
//!   could do), and each threshold is set a quarter of the way from that
//!   oracle loss back up to the round-0 loss:
//!   `threshold_m = oracle_m + 0.25 * (round0_m - oracle_m)`.
//! - `reference_metrics.csv`: the metrics of one single-threaded run of the
//!   pinned scenario, which re-runs must reproduce bit-for-bit (modulo the
//!   wall-clock column).
//!
//! Run manually after any intentional change to the scenario:
//! `cargo test -p eefl-harness --test threshold_oracle -- --ignored --nocapture`

use std::fmt::Write as _;
use std::path::PathBuf;

use eefl_core::evaluate;
use eefl_core::model::SubNetSpec;
use eefl_harness::config::ExperimentConfig;
use eefl_harness::experiment::{central_train, prepare_initial_params, run_experiment, synth_spec};
use eefl_harness::metrics::metrics_to_csv;
use eefl_harness::synth::generate;

fn repo_configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
#[ignore]
fn regenerate_pinned_artifacts() {
    let configs = repo_configs();
    let cfg = ExperimentConfig::from_path(&configs.join("pinned.toml")).unwrap();
    let model = cfg.model_config();
    let full = SubNetSpec::full(&model);
    let exits = model.num_exits();

    let corpora = generate(&synth_spec(&cfg), cfg.seed);
    let (pretrained, _) = prepare_initial_params(&cfg, &corpora).unwrap();
    let round0 = evaluate(&pretrained, &model, &corpora.target_eval, full).unwrap();

    let pooled = corpora.pooled_shards();
    let (oracle, _) = central_train(
        pretrained,
        &model,
        &pooled,
        60,
        0.02,
        16,
        &vec![1.0; exits],
        cfg.seed ^ 0x0AC1E,
    )
    .unwrap();
    let oracle_eval = evaluate(&oracle, &model, &corpora.target_eval, full).unwrap();

    let mut thresholds = String::from(
        "# Per-exit loss thresholds for the pinned scenario. Regenerate with\n\
         # `cargo test -p eefl-harness --test threshold_oracle -- --ignored`.\n\
         # Rule: threshold_m = oracle_m + 0.25 * (round0_m - oracle_m), where\n\
         # the oracle is centralized fine-tuning on the pooled client shards.\n\
         [loss_thresholds]\n",
    );
    for m in 0..exits {
        let thr = oracle_eval[m].loss + 0.25 * (round0[m].loss - oracle_eval[m].loss);
        writeln!(thresholds, "exit{} = {}", m + 1, thr).unwrap();
        println!(
            "exit {}: round0 {:.6} oracle {:.6} -> threshold {:.6}",
            m + 1,
            round0[m].loss,
            oracle_eval[m].loss,
            thr
        );
    }
    let pinned_dir = configs.join("pinned");
    std::fs::create_dir_all(&pinned_dir).unwrap();
    std::fs::write(pinned_dir.join("thresholds.toml"), thresholds).unwrap();

    let output = run_experiment(&cfg, 1).unwrap();
    std::fs::write(
        pinned_dir.join("reference_metrics.csv"),
        metrics_to_csv(&output.metrics),
    )
    .unwrap();
    println!(
        "reference run: {} evaluation rounds, final losses {:?}",
        output.metrics.len(),
        output.metrics.last().unwrap().per_exit_loss
    );
}
