//! End-to-end CLI tests driving the `eefl` binary.

use std::path::Path;
use std::process::Command;

fn eefl() -> Command {
    Command::new(env!("CARGO_BIN_EXE_eefl"))
}

const SMALL: &str = r#"
seed = 5

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
eval_samples = 32

[population]
clients = 8
sample_fraction = 0.5

[heterogeneity]
profile = "uniform"

[server]
optimizer = "fedadam"

[local]
epochs = 2
batch_size = 4

[run]
rounds = 4
eval_every = 2

[pretrain]
epochs = 3
"#;

#[test]
fn validate_reports_ok_for_repo_configs() {
    for name in ["pinned.toml", "hetero_m6.toml", "ctc_small.toml"] {
        let path = Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../configs")
            .join(name);
        let out = eefl()
            .args(["validate", "--config"])
            .arg(&path)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{name}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(String::from_utf8_lossy(&out.stdout).contains("OK"));
    }
}

#[test]
fn validate_rejects_broken_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, SMALL.replace("exit_every = 2", "exit_every = 3")).unwrap();
    let out = eefl()
        .args(["validate", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("multiple"));
}

#[test]
fn run_report_and_pretrain_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();

    // run
    let out_dir = dir.path().join("out");
    let out = eefl()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(&out_dir)
        .args(["--parallel", "2"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for file in ["metrics.csv", "xi.csv", "final.eefl1"] {
        assert!(out_dir.join(file).exists(), "missing {file}");
    }

    // report + compare + plots
    let plots = dir.path().join("plots");
    let metrics = out_dir.join("metrics.csv");
    let out = eefl()
        .arg("report")
        .arg(&metrics)
        .arg("--compare")
        .arg(&metrics)
        .arg("--plots")
        .arg(&plots)
        .args(["--threshold", "10.0"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("final_loss"));
    assert!(text.contains("comparison"));
    assert!(plots.join("loss.svg").exists());
    assert!(plots.join("token_err.svg").exists());

    // pretrain to a checkpoint, then run starting from it
    let ckpt = dir.path().join("pre.eefl1");
    let out = eefl()
        .args(["pretrain", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&ckpt)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(ckpt.exists());

    let cfg2 = dir.path().join("from_ckpt.toml");
    std::fs::write(
        &cfg2,
        SMALL.replace(
            "[pretrain]\nepochs = 3",
            "[pretrain]\ncheckpoint = \"pre.eefl1\"",
        ),
    )
    .unwrap();
    let out = eefl()
        .args(["run", "--config"])
        .arg(&cfg2)
        .arg("--out")
        .arg(dir.path().join("out2"))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn run_with_seed_override_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let mut outputs = Vec::new();
    for (seed, name) in [("5", "a"), ("6", "b")] {
        let out_dir = dir.path().join(name);
        let out = eefl()
            .args(["run", "--config"])
            .arg(&cfg)
            .args(["--seed", seed, "--out"])
            .arg(&out_dir)
            .output()
            .unwrap();
        assert!(out.status.success());
        outputs.push(std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap());
    }
    assert_ne!(outputs[0], outputs[1]);
}
