use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{adamw_step, class_weights, cosine_lr, window_loss, LabeledWindow, LossConfig, OptimizerState, TrainConfig};
use crate::cell::{save_checkpoint, IamModel, KeySource};
use crate::datagen::{make_windows, FeatureFile, SegmentAnnotation};
use crate::error::{ensure, Error, Result};
use crate::eval::{mean_topk_recall, topk_accuracy, RECALL_K};
use crate::numerics::{GradBuffer, Rng};

pub const METRICS_HEADER: &str = "epoch,split,loss,top1,top5,mt5r,lr";

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "IAM_THREADS";

/// One feature stream with its annotations.
#[derive(Clone, Copy, Debug)]
pub struct StreamData<'a> {
    pub features: &'a FeatureFile,
    pub annotations: &'a [SegmentAnnotation],
}

/// One row of the metrics log, scored at each window's last unmasked step.
///
/// Validation rows and the epoch-0 training row run in inference mode.
/// Later training rows summarize the epoch's own training passes (dropout
/// on, parameters changing across batches).
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
    pub top1: f64,
    pub top5: f64,
    pub mt5r: f64,
    /// Learning rate at the end of the epoch.
    pub lr: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch, self.split, self.loss, self.top1, self.top5, self.mt5r, self.lr
        )
    }
}

/// Where [`train`] writes its artifacts.
#[derive(Clone, Debug)]
pub struct TrainOutputs {
    /// Final checkpoint.
    pub checkpoint: PathBuf,
    /// Best checkpoint: highest validation top-1, or lowest training loss
    /// without a validation stream.
    pub best: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub model: IamModel<f32>,
    pub best: IamModel<f32>,
    pub best_epoch: usize,
    pub history: Vec<EpochMetrics>,
    pub steps: u64,
}

/// Class count: `cfg.classes`, or one past the largest annotated action.
pub fn infer_classes(cfg: &TrainConfig, streams: &[StreamData<'_>]) -> Result<usize> {
    let seen = streams
        .iter()
        .flat_map(|s| s.annotations.iter().map(|a| a.action + 1))
        .max()
        .unwrap_or(0);
    match cfg.classes {
        Some(c) if c < seen => Err(Error::Config(format!("C={c} but annotations use action {}", seen - 1))),
        Some(c) => Ok(c),
        None if seen == 0 => Err(Error::Config("no annotated segments".into())),
        None => Ok(seen),
    }
}

/// Segments per class, the counts behind inverse-count weighting.
pub fn segment_counts(annotations: &[SegmentAnnotation], classes: usize) -> Vec<usize> {
    let mut counts = vec![0; classes];
    for a in annotations {
        counts[a.action] += 1;
    }
    counts
}

/// Thread pool sized by `IAM_THREADS`, or rayon's default when unset.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker threads: {e}")))
}

/// Inference-mode loss and scores over `windows`.
pub fn evaluate_split(model: &IamModel<f32>, windows: &[LabeledWindow], loss: &LossConfig) -> Result<(f64, f64, f64, f64)> {
    ensure!(!windows.is_empty(), "no windows to evaluate");
    let per_window = windows
        .par_iter()
        .map(|w| {
            let unroll = model.unroll(&w.frames(), &mut Rng::seed(0), false, KeySource::Detached)?;
            let l = window_loss(&unroll, w, loss)? as f64;
            let t = w.score_step().expect("window has a labeled step");
            Ok((l, unroll.prediction(t).to_vec(), w.labels[t].expect("labeled")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_loss = per_window.iter().map(|r| r.0).sum::<f64>() / per_window.len() as f64;
    let (preds, labels): (Vec<Vec<f32>>, Vec<usize>) = per_window.into_iter().map(|(_, p, l)| (p, l)).unzip();
    split_scores(mean_loss, &preds, &labels)
}

fn split_scores(loss: f64, preds: &[Vec<f32>], labels: &[usize]) -> Result<(f64, f64, f64, f64)> {
    let c = preds[0].len();
    Ok((
        loss,
        topk_accuracy(preds, labels, 1)?,
        topk_accuracy(preds, labels, 5.min(c))?,
        mean_topk_recall(preds, labels, RECALL_K.min(c), None)?.unwrap_or(0.0),
    ))
}

struct MetricsLog {
    out: Option<(BufWriter<File>, PathBuf)>,
    rows: Vec<EpochMetrics>,
}

impl MetricsLog {
    fn open(path: Option<&Path>) -> Result<Self> {
        let out = match path {
            Some(p) => {
                let f = File::create(p).map_err(|e| Error::io(p, e))?;
                let mut w = BufWriter::new(f);
                writeln!(w, "{METRICS_HEADER}").map_err(|e| Error::io(p, e))?;
                Some((w, p.to_path_buf()))
            }
            None => None,
        };
        Ok(Self { out, rows: Vec::new() })
    }

    fn push(&mut self, row: EpochMetrics) -> Result<()> {
        if let Some((w, p)) = &mut self.out {
            writeln!(w, "{}", row.csv_row())
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(p.as_path(), e))?;
        }
        self.rows.push(row);
        Ok(())
    }
}

fn metrics_row(epoch: usize, split: &'static str, lr: f64, m: (f64, f64, f64, f64)) -> EpochMetrics {
    EpochMetrics {
        epoch,
        split,
        loss: m.0,
        top1: m.1,
        top5: m.2,
        mt5r: m.3,
        lr,
    }
}

/// Checkpoint metadata: the resolved training config.
pub fn checkpoint_meta(cfg: &TrainConfig) -> Vec<(String, String)> {
    cfg.to_pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Trains a fresh model on `train`.
///
/// Each epoch shuffles the windows with a seed-derived permutation and
/// splits them into batches. Items of a batch run in parallel, each with
/// its own state, gradient buffer and dropout stream derived from
/// `(seed, epoch, batch, item)`; buffers are summed in item order, so
/// results do not depend on the thread count. The learning rate follows
/// [`cosine_lr`] at fractional epochs. An epoch-0 row records the
/// untrained model.
pub fn train(cfg: &TrainConfig, train: StreamData<'_>, val: Option<StreamData<'_>>, outputs: Option<&TrainOutputs>) -> Result<TrainResult> {
    cfg.validate()?;
    let streams: Vec<StreamData<'_>> = std::iter::once(train).chain(val).collect();
    let classes = infer_classes(cfg, &streams)?;
    let features = train.features.features;
    if let Some(v) = val {
        ensure!(v.features.features == features, "validation stream has F={}, training stream F={features}", v.features.features);
    }
    let cell = cfg.cell_config(features, classes)?;
    let loss = LossConfig {
        smoothing: cfg.smoothing,
        weights: cfg
            .inverse_count_weights
            .then(|| class_weights(&segment_counts(train.annotations, classes)))
            .transpose()?,
    };

    let plain = TrainConfig { jitter: false, ..cfg.clone() };
    let base_windows = make_windows(train.features, train.annotations, &plain, None)?;
    ensure!(!base_windows.is_empty(), "training stream yields no labeled window");
    let val_windows = match val {
        Some(v) => {
            let w = make_windows(v.features, v.annotations, &plain, None)?;
            ensure!(!w.is_empty(), "validation stream yields no labeled window");
            Some(w)
        }
        None => None,
    };

    let pool = thread_pool()?;
    let mut model = IamModel::<f32>::new(cell, &mut Rng::derive(cfg.seed, &[0]))?;
    let mut opt = OptimizerState::new(model.params());
    let mut log = MetricsLog::open(outputs.and_then(|o| o.metrics.as_deref()))?;
    let meta = checkpoint_meta(cfg);

    let score = |model: &IamModel<f32>, log: &mut MetricsLog, epoch: usize, lr: f64, train_row: Option<(f64, f64, f64, f64)>| -> Result<f64> {
        let tr = match train_row {
            Some(row) => row,
            None => pool.install(|| evaluate_split(model, &base_windows, &loss))?,
        };
        log.push(metrics_row(epoch, "train", lr, tr))?;
        match &val_windows {
            Some(vw) => {
                let v = pool.install(|| evaluate_split(model, vw, &loss))?;
                log.push(metrics_row(epoch, "val", lr, v))?;
                Ok(v.1)
            }
            None => Ok(-tr.0),
        }
    };

    let mut best_score = score(&model, &mut log, 0, cosine_lr(0.0, cfg.epochs as f64, cfg.lr), None)?;
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut steps = 0;

    for epoch in 1..=cfg.epochs {
        let windows = if cfg.jitter {
            make_windows(train.features, train.annotations, cfg, Some(&mut Rng::derive(cfg.seed, &[2, epoch as u64])))?
        } else {
            base_windows.clone()
        };
        ensure!(!windows.is_empty(), "epoch {epoch} has no labeled window");
        let mut order: Vec<usize> = (0..windows.len()).collect();
        Rng::derive(cfg.seed, &[3, epoch as u64]).shuffle(&mut order);
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        let mut lr = cfg.lr;
        let mut epoch_loss = 0.0f64;
        let mut scored: Vec<(Vec<f32>, usize)> = Vec::with_capacity(windows.len());
        for (b, batch) in batches.iter().enumerate() {
            lr = cosine_lr((epoch - 1) as f64 + b as f64 / batches.len() as f64, cfg.epochs as f64, cfg.lr);
            let results = pool.install(|| {
                batch
                    .par_iter()
                    .enumerate()
                    .map(|(i, &w)| {
                        let mut rng = Rng::derive(cfg.seed, &[1, epoch as u64, b as u64, i as u64]);
                        let mut grads = GradBuffer::for_store(model.params());
                        let window = &windows[w];
                        let (l, unroll) = super::sequence_loss_and_grad(&model, window, &loss, &mut rng, true, &mut grads)?;
                        let t = window.score_step().expect("kept windows have a labeled step");
                        Ok((l, grads, unroll.prediction(t).to_vec(), window.labels[t].expect("labeled")))
                    })
                    .collect::<Result<Vec<_>>>()
            });
            let results = results.map_err(|e| match e {
                Error::NonFinite(stage) => Error::Divergence {
                    epoch,
                    batch: b,
                    detail: format!("non-finite value in {stage}"),
                },
                other => other,
            })?;
            let mut total = GradBuffer::for_store(model.params());
            let mut batch_loss = 0.0f64;
            for (l, g, _, _) in &results {
                batch_loss += *l as f64;
                total.add(g);
            }
            epoch_loss += batch_loss;
            scored.extend(results.into_iter().map(|(_, _, p, l)| (p, l)));
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    detail: format!("loss is {batch_loss}"),
                });
            }
            total.scale(1.0 / batch.len() as f32);
            let params = model.params_mut();
            params.zero_grads();
            params.accumulate(&total);
            adamw_step(params, &mut opt, lr, cfg.weight_decay)?;
            steps += 1;
        }
        let (preds, labels): (Vec<Vec<f32>>, Vec<usize>) = scored.into_iter().unzip();
        let running = split_scores(epoch_loss / windows.len() as f64, &preds, &labels)?;
        let s = score(&model, &mut log, epoch, lr, Some(running))?;
        if s > best_score {
            best_score = s;
            best = model.clone();
            best_epoch = epoch;
            if let Some(p) = outputs.and_then(|o| o.best.as_deref()) {
                save_checkpoint(p, &best, &meta)?;
            }
        }
    }

    if let Some(o) = outputs {
        save_checkpoint(&o.checkpoint, &model, &meta)?;
        if let (Some(p), 0) = (o.best.as_deref(), best_epoch) {
            save_checkpoint(p, &best, &meta)?;
        }
    }
    Ok(TrainResult {
        model,
        best,
        best_epoch,
        history: log.rows,
        steps,
    })
}
