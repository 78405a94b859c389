use std::path::Path;
use std::process::{Command, Output};

fn iam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iam")).args(args).env("IAM_THREADS", "1").output().expect("run iam")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_data(dir: &Path) {
    let out = iam(&["gen-data", "--out", p(dir), "--frames", "300", "--val-frames", "150"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn train_args<'a>(dir: &'a Path, ckpt: &'a Path) -> Vec<String> {
    let mut v: Vec<String> = ["train", "--features"].map(String::from).to_vec();
    v.push(p(&dir.join("train.iamf")).into());
    v.push("--annotations".into());
    v.push(p(&dir.join("train.csv")).into());
    v.push("--ckpt-out".into());
    v.push(p(ckpt).into());
    for kv in ["d=16", "S=4", "heads=2", "window=8"] {
        v.push("--set".into());
        v.push(kv.into());
    }
    v
}

fn run(args: &[String]) -> Output {
    iam(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

#[test]
fn gen_data_writes_both_splits_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    small_data(dir.path());
    for f in ["train.iamf", "train.csv", "val.iamf", "val.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("oracle_memoryless_top1=0.25"), "{manifest}");
    assert!(manifest.contains("oracle_history_top1=1"), "{manifest}");
}

#[test]
fn later_config_sources_override_earlier_ones() {
    let dir = tempfile::tempdir().unwrap();
    small_data(dir.path());
    let file = dir.path().join("train.cfg");
    std::fs::write(&file, "# base\nlr = 0.1\nepochs = 1\nbatch_size = 4\nseed = 9\n").unwrap();
    let ckpt = dir.path().join("m.iamc");
    let mut args = train_args(dir.path(), &ckpt);
    args.extend(["--config", p(&file), "--set", "lr=0.01", "--set", "seed=4", "--lr", "0.002"].map(String::from));
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let resolved = std::fs::read_to_string(dir.path().join("m.iamc.config")).unwrap();
    let lines: Vec<&str> = resolved.lines().collect();
    for want in ["lr=0.002", "seed=4", "epochs=1", "batch_size=4", "d=16"] {
        assert!(lines.contains(&want), "{want} missing from:\n{resolved}");
    }
    assert!(String::from_utf8_lossy(&out.stderr).contains("lr=0.002"));
    let metrics = std::fs::read_to_string(dir.path().join("m.iamc.metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3, "{metrics}");
    assert!(dir.path().join("m.iamc.best").exists());
}

#[test]
fn eval_and_inspect_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    small_data(dir.path());
    let ckpt = dir.path().join("m.iamc");
    let mut args = train_args(dir.path(), &ckpt);
    args.extend(["--epochs", "1", "--tau-a", "6"].map(String::from));
    assert!(run(&args).status.success());

    let subset = dir.path().join("many.txt");
    std::fs::write(&subset, "0\n2\n").unwrap();
    let out = iam(&[
        "eval", "--ckpt", p(&ckpt), "--features", p(&dir.path().join("val.iamf")), "--annotations", p(&dir.path().join("val.csv")), "--subset",
        &format!("many={}", p(&subset)),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(dir.path().join("m.iamc.eval.csv")).unwrap();
    for metric in ["action_top1,", "action_top5,", "action_mt5r,", "action_mt5r_many,"] {
        assert!(report.contains(metric), "{metric} missing from:\n{report}");
    }

    let traces = dir.path().join("traces.csv");
    let out = iam(&["inspect", "--ckpt", p(&ckpt), "--features", p(&dir.path().join("val.iamf")), "--trace-out", p(&traces)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&traces).unwrap();
    assert!(text.lines().any(|l| l.starts_with("attn,")));
    assert!(text.lines().any(|l| l.starts_with("gate,")));
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(iam(&["train", "--bogus"]).status.code(), Some(2));

    small_data(dir.path());
    let ckpt = dir.path().join("m.iamc");
    let mut bad_set = train_args(dir.path(), &ckpt);
    bad_set.extend(["--set", "no_such_key=1"].map(String::from));
    assert_eq!(run(&bad_set).status.code(), Some(2));

    let mut no_equals = train_args(dir.path(), &ckpt);
    no_equals.extend(["--set", "lr"].map(String::from));
    assert_eq!(run(&no_equals).status.code(), Some(2));

    let missing = iam(&["eval", "--ckpt", p(&dir.path().join("absent.iamc")), "--features", "x", "--annotations", "y"]);
    assert_eq!(missing.status.code(), Some(3));

    let mut diverge = train_args(dir.path(), &ckpt);
    diverge.extend(["--epochs", "2", "--lr", "1e30"].map(String::from));
    assert_eq!(run(&diverge).status.code(), Some(4));

    let strict = iam(&["grad-check", "--tolerance", "1e-300"]);
    assert_eq!(strict.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&strict.stdout).starts_with("FAIL"));
    assert_eq!(iam(&["grad-check"]).status.code(), Some(0));
}
