//! Black-box tests of the `detour` binary.

use std::path::Path;
use std::process::Command;

fn detour() -> Command {
    Command::new(env!("CARGO_BIN_EXE_detour"))
}

const MINI_SPEC: &str = r#"
kind = "detour_vs_baseline"
seeds = [1, 2]
seed_noise_seed = 99
data_seed = 7

[model]
n_layers = 2
hidden_dim = 16
n_heads = 2
vocab_size = 512
max_seq_len = 64
rope_base = 10000.0
dropout_rate = 0.1
init_std = 0.02
mask_token_id = 2

[data]
window = 32
general_shift = 0.0
domain_shift = 0.5
eval_texts = 24
cka_sample = 16

[budgets]
base_tokens = 2048
phase1_tokens = 4096
decay_ratio = 0.125
batch_sequences = 8
metrics_every = 4

[probe]
layer = 1
seeds = [1, 2]
texts_per_class = 10

[freeze]
low = [0, 0]
mid = [1, 1]

[needle]
lengths = [32, 48]
pairs_per_cell = 14
probe_hidden = 16
probe_dropout = 0.1
probe_epochs = 2
probe_lr = 0.001
probe_batch = 8
"#;

fn write_spec(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("spec.toml");
    std::fs::write(&path, MINI_SPEC).unwrap();
    path
}

#[test]
fn experiment_subcommand_runs_and_respects_resume_contract() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path());
    let out = dir.path().join("out");

    let status = detour()
        .args(["experiment", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("manifest.json").exists());
    assert!(out.join("reports/summary.txt").exists());
    assert!(out.join("reports/divergence_ratio.csv").exists());

    // prior outputs without --resume: nonzero exit
    let status = detour()
        .args(["experiment", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(!status.success());

    // with --resume: reuses runs, exits 0
    let status = detour()
        .args(["experiment", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(&out)
        .arg("--resume")
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn data_train_and_analysis_subcommands_compose() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path());
    let data_dir = dir.path().join("data");
    let run_dir = dir.path().join("work");

    let ok = detour()
        .args(["gen-data", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(&data_dir)
        .status()
        .unwrap();
    assert!(ok.success());
    for f in ["general.txt", "domain.txt", "eval.txt", "vocab.tsv"] {
        assert!(data_dir.join(f).exists(), "{} missing", f);
    }

    // two pipelines, shared base
    for (pipeline, seed) in [("detour", "1"), ("baseline", "1"), ("baseline", "2")] {
        let ok = detour()
            .args(["train", "--spec"])
            .arg(&spec)
            .arg("--out")
            .arg(&run_dir)
            .args(["--pipeline", pipeline, "--run-seed", seed, "--resume"])
            .status()
            .unwrap();
        assert!(ok.success(), "train {} s{} failed", pipeline, seed);
    }
    let detour_ckpt = run_dir.join("runs/detour_s1/phase1.ckpt");
    let baseline_ckpt = run_dir.join("runs/baseline_s1/phase1.ckpt");
    let baseline2_ckpt = run_dir.join("runs/baseline_s2/phase1.ckpt");
    assert!(detour_ckpt.exists() && baseline_ckpt.exists() && baseline2_ckpt.exists());

    // CKA divergence between the two models
    let cka_csv = dir.path().join("cka.csv");
    let ok = detour()
        .args(["analyze-cka", "--model-a"])
        .arg(&detour_ckpt)
        .arg("--model-b")
        .arg(&baseline_ckpt)
        .arg("--corpus")
        .arg(data_dir.join("eval.txt"))
        .arg("--out")
        .arg(&cka_csv)
        .args(["--sample", "16"])
        .status()
        .unwrap();
    assert!(ok.success());
    let csv = std::fs::read_to_string(&cka_csv).unwrap();
    assert!(csv.starts_with("layer,d_mean,d_ci95"));
    assert_eq!(csv.lines().count(), 3); // header + 2 layers

    // ratio needs a seed-noise pair
    let ratio_csv = dir.path().join("ratio.csv");
    let ok = detour()
        .args(["analyze-ratio", "--clm"])
        .arg(&detour_ckpt)
        .arg("--mlm-s1")
        .arg(&baseline_ckpt)
        .arg("--mlm-s2")
        .arg(&baseline2_ckpt)
        .arg("--corpus")
        .arg(data_dir.join("eval.txt"))
        .arg("--out")
        .arg(&ratio_csv)
        .status()
        .unwrap();
    assert!(ok.success());
    assert!(std::fs::read_to_string(&ratio_csv)
        .unwrap()
        .starts_with("layer,r,numerator,denominator"));

    // transplant MLP blocks of layer 1
    let hybrid = dir.path().join("hybrid.ckpt");
    let ok = detour()
        .args(["transplant", "--target"])
        .arg(&baseline_ckpt)
        .arg("--source")
        .arg(&detour_ckpt)
        .args(["--lo", "1", "--hi", "1", "--components", "mlp"])
        .arg("--out")
        .arg(&hybrid)
        .status()
        .unwrap();
    assert!(ok.success() && hybrid.exists());

    // probe general vs domain
    let probe_csv = dir.path().join("probe.csv");
    let ok = detour()
        .args(["probe", "--model"])
        .arg(&detour_ckpt)
        .arg("--corpus-a")
        .arg(data_dir.join("general.txt"))
        .arg("--corpus-b")
        .arg(data_dir.join("domain.txt"))
        .args(["--layer", "1", "--seeds", "1,2"])
        .arg("--out")
        .arg(&probe_csv)
        .status()
        .unwrap();
    assert!(ok.success());
    assert!(std::fs::read_to_string(&probe_csv).unwrap().contains("mean"));

    // needle dataset + evaluation grid
    let needle_dir = dir.path().join("needle");
    let ok = detour()
        .args(["needle-gen", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(&needle_dir)
        .status()
        .unwrap();
    assert!(ok.success());
    let grid_csv = dir.path().join("grid.csv");
    let ok = detour()
        .args(["needle-eval", "--model"])
        .arg(&detour_ckpt)
        .arg("--data")
        .arg(&needle_dir)
        .arg("--out")
        .arg(&grid_csv)
        .args(["--epochs", "2", "--hidden", "16"])
        .status()
        .unwrap();
    assert!(ok.success());
    let grid = std::fs::read_to_string(&grid_csv).unwrap();
    assert!(grid.starts_with("length,start,middle,end"));
    assert!(grid.contains("overall,"));
}

#[test]
fn bad_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    // malformed spec
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "kind = \"nope\"").unwrap();
    let status = detour()
        .args(["experiment", "--spec"])
        .arg(&bad)
        .arg("--out")
        .arg(dir.path().join("x"))
        .status()
        .unwrap();
    assert!(!status.success());
    // missing checkpoint
    let status = detour()
        .args(["analyze-cka", "--model-a", "/nonexistent.ckpt", "--model-b", "/nonexistent.ckpt"])
        .args(["--corpus", "/nonexistent.txt"])
        .arg("--out")
        .arg(dir.path().join("y.csv"))
        .status()
        .unwrap();
    assert!(!status.success());
}
