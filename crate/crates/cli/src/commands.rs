use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use iam_core::cell::load_checkpoint;
use iam_core::datagen::{
    bayes_oracle, gen_split, read_annotations, read_feature_file, write_annotations, write_feature_file, GrammarConfig,
};
use iam_core::eval::{evaluate, window_config, write_traces, ClassSubset, EvalOptions, FactorMap};
use iam_core::numerics::GradCheckConfig;
use iam_core::stream::run_stream;
use iam_core::training::{check_training_gradient, parse_key_values, GradCheckSetup, StreamData, TrainConfig, TrainOutputs};
use iam_core::{Error, Result};

use crate::{exit, EvalArgs, GenDataArgs, GradCheckArgs, InspectArgs, StreamArgs, TrainArgs};

fn echo<K: Display, V: Display>(title: &str, pairs: impl IntoIterator<Item = (K, V)>) {
    eprintln!("# {title}");
    for (k, v) in pairs {
        eprintln!("{k}={v}");
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn usage(msg: impl Display) -> Result<u8> {
    eprintln!("usage error: {msg}");
    Ok(exit::USAGE)
}

pub fn gen_data(a: &GenDataArgs) -> Result<u8> {
    let mut cfg = GrammarConfig::new(a.contexts, a.segment_frames, a.gap_frames, a.noise, a.features, a.frames, a.seed);
    cfg.fps = a.fps;
    let oracle = bayes_oracle(&cfg)?;
    let table: Vec<String> = cfg.table.iter().map(ToString::to_string).collect();
    let mut manifest = vec![
        ("contexts", cfg.contexts.to_string()),
        ("classes", cfg.classes.to_string()),
        ("segment_frames", cfg.segment_frames.to_string()),
        ("gap_frames", cfg.gap_frames.to_string()),
        ("noise", cfg.noise.to_string()),
        ("features", cfg.features.to_string()),
        ("frames", cfg.frames.to_string()),
        ("val_frames", a.val_frames.to_string()),
        ("fps", cfg.fps.to_string()),
        ("seed", cfg.seed.to_string()),
        ("table", table.join(" ")),
        ("tau_a", cfg.gap_seconds().to_string()),
        ("oracle_memoryless_top1", oracle.memoryless.to_string()),
        ("oracle_history_top1", oracle.history.to_string()),
    ];
    echo("gen-data", manifest.iter().map(|(k, v)| (k, v)));

    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut splits = vec![("train", cfg.frames)];
    if a.val_frames > 0 {
        splits.push(("val", a.val_frames));
    }
    for (i, (name, frames)) in splits.into_iter().enumerate() {
        let split_cfg = GrammarConfig { frames, ..cfg.clone() };
        let s = gen_split(&split_cfg, i as u64)?;
        write_feature_file(&a.out.join(format!("{name}.iamf")), &s.features)?;
        write_annotations(&a.out.join(format!("{name}.csv")), &s.annotations)?;
        let contexts: Vec<String> = s.contexts.iter().map(|(x, y)| format!("{x}:{y}")).collect();
        manifest.push((if i == 0 { "train_segments" } else { "val_segments" }, s.annotations.len().to_string()));
        manifest.push((if i == 0 { "train_contexts" } else { "val_contexts" }, contexts.join(" ")));
    }
    let text: String = manifest.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    write_text(&a.out.join("manifest.txt"), &text)?;
    println!(
        "wrote {} (oracle top-1: memoryless {}, history {})",
        a.out.display(),
        oracle.memoryless,
        oracle.history
    );
    Ok(0)
}

/// Defaults, then the config file, then `--set`, then dedicated flags.
fn resolve_train_config(a: &TrainArgs) -> Result<std::result::Result<TrainConfig, String>> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (k, v) in parse_key_values(&text, &path.display().to_string())? {
            cfg.set(&k, &v)?;
        }
    }
    for kv in &a.set {
        let Some((k, v)) = kv.split_once('=') else {
            return Ok(Err(format!("--set expects KEY=VALUE, got {kv:?}")));
        };
        if let Err(e) = cfg.set(k.trim(), v.trim()) {
            return Ok(Err(e.to_string()));
        }
    }
    if a.jitter {
        cfg.jitter = true;
    }
    if a.inverse_count_weights {
        cfg.inverse_count_weights = true;
    }
    if let Some(q) = &a.query {
        cfg.set("query", q)?;
    }
    cfg.smoothing = a.smoothing.unwrap_or(cfg.smoothing);
    cfg.window_seconds = a.window_seconds.or(cfg.window_seconds);
    cfg.tau_a = a.tau_a.unwrap_or(cfg.tau_a);
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
    cfg.lr = a.lr.unwrap_or(cfg.lr);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    Ok(Ok(cfg))
}

pub fn train(a: &TrainArgs) -> Result<u8> {
    let cfg = match resolve_train_config(a)? {
        Ok(c) => c,
        Err(msg) => return usage(msg),
    };
    cfg.validate()?;
    echo("train", cfg.to_pairs());
    let resolved: String = cfg.to_pairs().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    write_text(&with_suffix(&a.ckpt_out, ".config"), &resolved)?;

    let features = read_feature_file(&a.features)?;
    let annotations = read_annotations(&a.annotations)?;
    let val = match (&a.val_features, &a.val_annotations) {
        (Some(f), Some(ann)) => Some((read_feature_file(f)?, read_annotations(ann)?)),
        (Some(_), None) => return usage("--val-features needs --val-annotations"),
        _ => None,
    };
    let outputs = TrainOutputs {
        checkpoint: a.ckpt_out.clone(),
        best: Some(a.best_out.clone().unwrap_or_else(|| with_suffix(&a.ckpt_out, ".best"))),
        metrics: Some(a.metrics_out.clone().unwrap_or_else(|| with_suffix(&a.ckpt_out, ".metrics.csv"))),
    };
    let start = Instant::now();
    let result = iam_core::training::train(
        &cfg,
        StreamData {
            features: &features,
            annotations: &annotations,
        },
        val.as_ref().map(|(f, ann)| StreamData {
            features: f,
            annotations: ann,
        }),
        Some(&outputs),
    )?;
    for row in &result.history {
        eprintln!("{}", row.csv_row());
    }
    println!(
        "trained {} steps in {:.1}s; best epoch {}; checkpoint {}",
        result.steps,
        start.elapsed().as_secs_f64(),
        result.best_epoch,
        a.ckpt_out.display()
    );
    Ok(0)
}

pub fn eval(a: &EvalArgs) -> Result<u8> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let classes = ckpt.model.config().classes;
    let mut opts = EvalOptions {
        tau_a: a.tau_a,
        ks: a.topk.clone(),
        ..EvalOptions::default()
    };
    if opts.ks.iter().any(|k| *k == 0) {
        return usage("--topk values must be at least 1");
    }
    for arg in &a.subset {
        let Some((name, file)) = arg.split_once('=') else {
            return usage(format!("--subset expects NAME=FILE, got {arg:?}"));
        };
        opts.subsets.push(ClassSubset::read(name, Path::new(file), classes)?);
    }
    if let Some(p) = &a.verb_map {
        opts.factors.push(FactorMap::read("verb", p, classes)?);
    }
    if let Some(p) = &a.noun_map {
        opts.factors.push(FactorMap::read("noun", p, classes)?);
    }
    let mut window = window_config(&ckpt)?;
    window.tau_a = a.tau_a.unwrap_or(window.tau_a);
    let ks: Vec<String> = opts.ks.iter().map(ToString::to_string).collect();
    let subsets: Vec<String> = opts.subsets.iter().map(|s| s.name.clone()).collect();
    echo(
        "eval",
        [
            ("ckpt", a.ckpt.display().to_string()),
            ("tau_a", window.tau_a.to_string()),
            ("fps", window.fps.to_string()),
            ("window", window.window_frames().to_string()),
            ("topk", ks.join(",")),
            ("subsets", subsets.join(",")),
        ],
    );

    let features = read_feature_file(&a.features)?;
    let annotations = read_annotations(&a.annotations)?;
    let report = evaluate(&ckpt, &features, &annotations, &opts)?;
    let prefix = a.out.clone().unwrap_or_else(|| with_suffix(&a.ckpt, ".eval"));
    write_text(&with_suffix(&prefix, ".csv"), &report.to_csv())?;
    write_text(&with_suffix(&prefix, ".per_class.csv"), &report.per_class_csv())?;
    print!("{}", report.summary());
    Ok(0)
}

pub fn stream(a: &StreamArgs) -> Result<u8> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    echo("stream", ckpt.model.config().to_pairs());
    let stdin = std::io::stdin().lock();
    let stdout = std::io::stdout().lock();
    let stats = run_stream(&ckpt.model, stdin, stdout)?;
    eprintln!(
        "frames={} peak_state_bytes={} state_bound_bytes={}",
        stats.frames, stats.peak_state_bytes, stats.state_bound_bytes
    );
    Ok(0)
}

pub fn inspect(a: &InspectArgs) -> Result<u8> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    echo(
        "inspect",
        [
            ("ckpt", a.ckpt.display().to_string()),
            ("features", a.features.display().to_string()),
            ("trace_out", a.trace_out.display().to_string()),
        ],
    );
    let features = read_feature_file(&a.features)?;
    let rows = write_traces(&ckpt.model, &features, &a.trace_out)?;
    println!("wrote {rows} trace rows to {}", a.trace_out.display());
    Ok(0)
}

pub fn grad_check(a: &GradCheckArgs) -> Result<u8> {
    let setup = GradCheckSetup {
        hidden: a.d,
        classes: a.classes,
        memory: a.memory,
        features: a.features,
        steps: a.steps,
        heads: a.heads,
        seed: a.seed,
    };
    let check = GradCheckConfig {
        step: a.step,
        tolerance: a.tolerance,
        ..GradCheckConfig::default()
    };
    echo(
        "grad-check",
        [
            ("seed", a.seed.to_string()),
            ("d", a.d.to_string()),
            ("C", a.classes.to_string()),
            ("S", a.memory.to_string()),
            ("F", a.features.to_string()),
            ("T", a.steps.to_string()),
            ("heads", a.heads.to_string()),
            ("h", a.step.to_string()),
            ("tolerance", a.tolerance.to_string()),
            ("precision", "f64".to_string()),
        ],
    );
    let start = Instant::now();
    let report = check_training_gradient(&setup, &check)?;
    let worst = report
        .worst
        .as_ref()
        .map_or("none".to_string(), |w| format!("{}[{}] analytic {} numeric {}", w.param, w.index, w.analytic, w.numeric));
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    println!(
        "{verdict} worst_rel_err={:e} checked={} refined={} kinks={} at {worst} ({:.2}s)",
        report.worst_rel_err(),
        report.checked,
        report.refined,
        report.kinks,
        start.elapsed().as_secs_f64()
    );
    std::io::stdout().flush()?;
    Ok(if report.passed() { 0 } else { exit::GRAD_CHECK })
}
