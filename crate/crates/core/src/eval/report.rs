use std::fmt::Write as _;

use rayon::prelude::*;

use super::metrics::{mean_recall, per_class_recall, topk_accuracy, ClassRecall, ClassSubset};
use crate::cell::{Checkpoint, IamModel};
use crate::datagen::{make_windows, FeatureFile, SegmentAnnotation};
use crate::error::{ensure, Error, Result};
use crate::numerics::Rng;
use crate::training::{LabeledWindow, TrainConfig};

/// k used for mean top-k recall.
pub const RECALL_K: usize = 5;

/// Maps each action id to a factor id (verb or noun).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FactorMap {
    pub name: String,
    /// `targets[action]`.
    pub targets: Vec<usize>,
}

impl FactorMap {
    /// Lines of `action_id,factor_id`; every action in `0..num_actions` must
    /// appear exactly once. Blank lines and `#` comments are skipped.
    pub fn parse(name: &str, text: &str, source: &str, num_actions: usize) -> Result<Self> {
        let mut targets = vec![None; num_actions];
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::parse(source, i as u64 + 1, msg);
            let (a, f) = line
                .split_once(',')
                .ok_or_else(|| err(format!("expected action_id,{name}_id, got {line:?}")))?;
            let a: usize = a.trim().parse().map_err(|_| err(format!("bad action id {a:?}")))?;
            let f: usize = f.trim().parse().map_err(|_| err(format!("bad {name} id {f:?}")))?;
            if a >= num_actions {
                return Err(err(format!("action {a} out of range for {num_actions} classes")));
            }
            if targets[a].replace(f).is_some() {
                return Err(err(format!("action {a} mapped twice")));
            }
        }
        let targets = targets
            .into_iter()
            .enumerate()
            .map(|(a, t)| t.ok_or_else(|| Error::parse(source, 0, format!("action {a} has no {name}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            name: name.to_string(),
            targets,
        })
    }

    pub fn read(name: &str, path: &std::path::Path, num_actions: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(name, &text, &path.display().to_string(), num_actions)
    }

    pub fn classes(&self) -> usize {
        self.targets.iter().max().map_or(0, |m| m + 1)
    }

    /// Sums action probabilities per factor id.
    pub fn marginalize(&self, probs: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0; self.classes()];
        for (p, &t) in probs.iter().zip(&self.targets) {
            out[t] += p;
        }
        out
    }
}

/// Accuracy and recall for one label space (actions, verbs or nouns).
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSummary {
    pub name: String,
    /// `(k, accuracy)`; k is clamped to the class count.
    pub topk: Vec<(usize, f64)>,
    pub mean_top5_recall: Option<f64>,
}

impl ScoreSummary {
    fn compute(name: &str, preds: &[Vec<f32>], labels: &[usize], ks: &[usize]) -> Result<(Self, Vec<ClassRecall>)> {
        let classes = preds.first().map_or(1, Vec::len);
        let topk = ks
            .iter()
            .map(|&k| Ok((k, topk_accuracy(preds, labels, k.min(classes))?)))
            .collect::<Result<Vec<_>>>()?;
        let recalls = per_class_recall(preds, labels, RECALL_K.min(classes))?;
        Ok((
            Self {
                name: name.to_string(),
                topk,
                mean_top5_recall: mean_recall(&recalls, None),
            },
            recalls,
        ))
    }

    pub fn top(&self, k: usize) -> Option<f64> {
        self.topk.iter().find(|(kk, _)| *kk == k).map(|(_, v)| *v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub samples: usize,
    pub action: ScoreSummary,
    /// Mean top-5 action recall per subset; `None` when no subset class
    /// occurs in the data.
    pub subsets: Vec<(String, Option<f64>)>,
    /// Classes with at least one instance.
    pub per_class: Vec<ClassRecall>,
    /// Verb and noun scores from marginalized action probabilities.
    pub factors: Vec<ScoreSummary>,
}

impl EvalReport {
    /// Builds a report from the scored predictions of every window.
    pub fn from_scores(
        preds: &[Vec<f32>],
        labels: &[usize],
        ks: &[usize],
        subsets: &[ClassSubset],
        factors: &[FactorMap],
    ) -> Result<Self> {
        ensure!(!labels.is_empty(), "nothing to evaluate");
        ensure!(ks.iter().all(|k| *k >= 1), "k must be at least 1");
        let (action, per_class) = ScoreSummary::compute("action", preds, labels, ks)?;
        let subsets = subsets
            .iter()
            .map(|s| (s.name.clone(), mean_recall(&per_class, Some(s))))
            .collect();
        let factors = factors
            .iter()
            .map(|m| {
                ensure!(m.targets.len() == preds[0].len(), "{} map covers {} actions, model has {}", m.name, m.targets.len(), preds[0].len());
                let fp: Vec<Vec<f32>> = preds.iter().map(|p| m.marginalize(p)).collect();
                let fl: Vec<usize> = labels.iter().map(|&l| m.targets[l]).collect();
                Ok(ScoreSummary::compute(&m.name, &fp, &fl, ks)?.0)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            samples: labels.len(),
            action,
            subsets,
            per_class,
            factors,
        })
    }

    pub fn top1(&self) -> Option<f64> {
        self.action.top(1)
    }

    pub fn top5(&self) -> Option<f64> {
        self.action.top(5)
    }

    /// `metric,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let _ = writeln!(out, "samples,{}", self.samples);
        for s in std::iter::once(&self.action).chain(&self.factors) {
            for (k, v) in &s.topk {
                let _ = writeln!(out, "{}_top{k},{v}", s.name);
            }
            if let Some(r) = s.mean_top5_recall {
                let _ = writeln!(out, "{}_mt5r,{r}", s.name);
            }
        }
        for (name, r) in &self.subsets {
            let _ = writeln!(out, "action_mt5r_{name},{}", r.map_or("NA".to_string(), |v| v.to_string()));
        }
        out
    }

    /// `class,instances,hits,recall` rows.
    pub fn per_class_csv(&self) -> String {
        let mut out = String::from("class,instances,hits,recall\n");
        for r in &self.per_class {
            let _ = writeln!(out, "{},{},{},{}", r.class, r.instances, r.hits, r.recall());
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = format!("{} samples\n", self.samples);
        for s in std::iter::once(&self.action).chain(&self.factors) {
            let _ = write!(out, "{:<7}", s.name);
            for (k, v) in &s.topk {
                let _ = write!(out, " top{k} {:6.2}%", 100.0 * v);
            }
            if let Some(r) = s.mean_top5_recall {
                let _ = write!(out, "  mt5r {:6.2}%", 100.0 * r);
            }
            out.push('\n');
        }
        for (name, r) in &self.subsets {
            match r {
                Some(v) => {
                    let _ = writeln!(out, "mt5r[{name}] {:6.2}%", 100.0 * v);
                }
                None => {
                    let _ = writeln!(out, "mt5r[{name}] absent (no instances)");
                }
            }
        }
        out
    }
}

/// Inference-mode prediction at each window's last unmasked step, paired
/// with its label, in window order.
pub fn score_windows(model: &IamModel<f32>, windows: &[LabeledWindow]) -> Result<(Vec<Vec<f32>>, Vec<usize>)> {
    let scored = windows
        .par_iter()
        .map(|w| {
            let t = w.score_step().ok_or_else(|| Error::contract("window has no unmasked step"))?;
            let mut state = model.new_state();
            // inference draws no randomness
            let mut rng = Rng::seed(0);
            let mut probs = Vec::new();
            for frame in &w.features[..=t] {
                probs = model.step(&mut state, frame, &mut rng, false)?.prediction.probs().to_vec();
            }
            Ok((probs, w.labels[t].expect("score step is unmasked")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(scored.into_iter().unzip())
}

/// Evaluation settings not stored in the checkpoint.
#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    /// Overrides the checkpoint's anticipation time.
    pub tau_a: Option<f64>,
    pub ks: Vec<usize>,
    pub subsets: Vec<ClassSubset>,
    pub factors: Vec<FactorMap>,
}

/// Window settings recorded in a checkpoint's metadata, as a
/// jitter-free [`TrainConfig`].
pub fn window_config(ckpt: &Checkpoint) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for key in ["tau_a", "fps", "window", "window_seconds"] {
        if let Some(v) = ckpt.meta(key) {
            cfg.set(key, v)?;
        }
    }
    cfg.jitter = false;
    Ok(cfg)
}

pub fn evaluate(ckpt: &Checkpoint, features: &FeatureFile, annotations: &[SegmentAnnotation], opts: &EvalOptions) -> Result<EvalReport> {
    let model_f = ckpt.model.config().features;
    if features.features != model_f {
        return Err(Error::Config(format!(
            "feature dimension mismatch: checkpoint expects F={model_f}, file has F={}",
            features.features
        )));
    }
    let classes = ckpt.model.config().classes;
    if let Some(a) = annotations.iter().find(|a| a.action >= classes) {
        return Err(Error::Config(format!("annotation action {} out of range for {classes} classes", a.action)));
    }
    let mut cfg = window_config(ckpt)?;
    if let Some(t) = opts.tau_a {
        cfg.tau_a = t;
    }
    let windows = make_windows(features, annotations, &cfg, None)?;
    ensure!(!windows.is_empty(), "no evaluation window has a labeled step");
    let (preds, labels) = score_windows(&ckpt.model, &windows)?;
    let ks = if opts.ks.is_empty() { vec![1, 5] } else { opts.ks.clone() };
    EvalReport::from_scores(&preds, &labels, &ks, &opts.subsets, &opts.factors)
}
