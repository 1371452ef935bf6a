use std::fs;
use std::path::Path;

use mminforec::cli::{dispatch, RunConfig, OUT_ENV};

fn run(args: &[&str]) -> i32 {
    dispatch(std::iter::once("mminforec").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small synthetic corpus under `dir/synth`.
fn synth(dir: &Path) -> std::path::PathBuf {
    let out = dir.join("synth");
    assert_eq!(run(&["synth", "--out", p(&out), "--users", "150", "--items", "30", "--attrs", "3", "--seed", "5"]), 0);
    out
}

const TINY: [&str; 8] = ["--d", "8", "--memory-slots", "5", "--epochs", "2", "--batch-size", "64"];

#[test]
fn train_evaluate_inspect_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path()).join("dataset");
    let run_dir = dir.path().join("run");
    let mut args = vec!["train", "--data", p(&data), "--out", p(&run_dir)];
    args.extend(TINY);
    assert_eq!(run(&args), 0);
    for f in ["config.resolved.json", "train_log.csv", "memory_norms.csv", "metrics_valid.json", "metrics_test.json"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    assert!(run_dir.join("checkpoint/manifest.json").exists());
    let log = fs::read_to_string(run_dir.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.starts_with("epoch,loss,hr5,ndcg5,hr10,ndcg10\n"));

    let eval_dir = dir.path().join("eval");
    let resolved = run_dir.join("config.resolved.json");
    assert_eq!(
        run(&["evaluate", "--config", p(&resolved), "--checkpoint", p(&run_dir.join("checkpoint")), "--out", p(&eval_dir)]),
        0
    );
    for f in ["metrics_valid.json", "metrics_test.json", "ranks_test.csv"] {
        assert_eq!(fs::read(run_dir.join(f)).unwrap(), fs::read(eval_dir.join(f)).unwrap(), "{f}");
    }

    let inspect_dir = dir.path().join("inspect");
    assert_eq!(run(&["inspect", "--checkpoint", p(&run_dir.join("checkpoint")), "--out", p(&inspect_dir)]), 0);
    let norms = fs::read_to_string(inspect_dir.join("memory_norms.csv")).unwrap();
    assert_eq!(norms.lines().count(), 1 + 5);
}

#[test]
fn identical_runs_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path()).join("dataset");
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let mut args = vec!["train", "--data", p(&data), "--out", p(&out), "--seed", "11"];
        args.extend(TINY);
        assert_eq!(run(&args), 0);
    }
    for f in ["train_log.csv", "checkpoint/params.bin", "checkpoint/manifest.json"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn preprocess_matches_synth_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let s = synth(dir.path());
    let out = dir.path().join("pre");
    let (inter, attrs) = (s.join("interactions.tsv"), s.join("attributes.tsv"));
    let args = ["preprocess", "--interactions", p(&inter), "--attributes", p(&attrs)];
    let mut with_out = args.to_vec();
    with_out.extend(["--out", p(&out)]);
    assert_eq!(run(&with_out), 0);
    for f in ["sequences.tsv", "attributes.tsv", "idmaps.json", "stats.json"] {
        assert_eq!(fs::read(s.join("dataset").join(f)).unwrap(), fs::read(out.join(f)).unwrap(), "{f}");
    }
    with_out.extend(["--reference", "beauty"]);
    assert_eq!(run(&with_out), 1);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(run(&["gradcheck", "--dims", "8", "--batch", "4"]), 0);
    assert_eq!(run(&["train", "--tau", "-1", "--out", p(&out), "--data", p(dir.path())]), 1);
    assert_eq!(run(&["train", "--lr", "0.002", "--strict-grids", "--out", p(&out), "--data", p(dir.path())]), 1);
    assert_eq!(run(&["ablate", "--variants", "cpc,bogus", "--out", p(&out), "--data", p(dir.path())]), 1);
    // a directory without dataset files is a runtime failure
    assert_eq!(run(&["train", "--out", p(&out), "--data", p(&dir.path().join("missing"))]), 2);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"d": 8, "learning_rate": 0.1}"#).unwrap();
    assert_eq!(run(&["train", "--config", p(&bad), "--out", p(&out)]), 1);
    fs::write(&bad, "{not json").unwrap();
    assert_eq!(run(&["train", "--config", p(&bad), "--out", p(&out)]), 1);
    assert_eq!(run(&["explode"]), 1);
}

#[test]
fn flags_override_file_and_env_sets_out() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"lr": 0.001, "gradcheck_dims": 4}"#).unwrap();
    let env_out = dir.path().join("from_env");
    std::env::set_var(OUT_ENV, &env_out);
    let code = run(&["gradcheck", "--config", p(&cfg), "--lr", "0.003", "--batch", "3"]);
    std::env::remove_var(OUT_ENV);
    assert_eq!(code, 0);
    let resolved: RunConfig =
        serde_json::from_str(&fs::read_to_string(env_out.join("config.resolved.json")).unwrap()).unwrap();
    assert_eq!(resolved.lr, 0.003);
    assert_eq!((resolved.gradcheck_dims, resolved.gradcheck_batch), (4, 3));
    assert!(env_out.join("gradcheck.json").exists());
}
