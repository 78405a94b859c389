//! Synthetic activity grammar.
//!
//! The stream repeats cycles of four blocks:
//! `context a (L frames) | context b (L) | gap (G) | action T[a][b] (L)`.
//! Context and action frames are a fixed per-symbol embedding plus
//! N(0, σ²) noise; gap frames are pure noise. Only action blocks are
//! annotated, so with τ_a equal to the gap duration every labeled frame is
//! a gap frame whose content says nothing about its label.

use super::{FeatureFile, SegmentAnnotation};
use crate::error::{ensure, Result};
use crate::numerics::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct GrammarConfig {
    /// Context symbol count K.
    pub contexts: usize,
    /// Action class count C.
    pub classes: usize,
    /// Frames per context and action block (L).
    pub segment_frames: usize,
    /// Filler frames between the second context and the action (G).
    pub gap_frames: usize,
    /// Noise standard deviation σ.
    pub noise: f64,
    /// Feature dimension F.
    pub features: usize,
    /// Total stream length in frames.
    pub frames: usize,
    pub fps: f32,
    /// `table[a * K + b]` is the action following contexts `a` then `b`.
    pub table: Vec<usize>,
    pub seed: u64,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        Self::new(4, 3, 6, 0.5, 16, 3000, 0)
    }
}

impl GrammarConfig {
    /// `C = K` with the table `T[a][b] = (a + b) mod K`, a bijection in `b`
    /// for every fixed `a`.
    pub fn new(contexts: usize, segment_frames: usize, gap_frames: usize, noise: f64, features: usize, frames: usize, seed: u64) -> Self {
        Self {
            contexts,
            classes: contexts,
            segment_frames,
            gap_frames,
            noise,
            features,
            frames,
            fps: 1.0,
            table: Self::modular_table(contexts, contexts),
            seed,
        }
    }

    pub fn modular_table(contexts: usize, classes: usize) -> Vec<usize> {
        (0..contexts * contexts)
            .map(|i| (i / contexts + i % contexts) % classes)
            .collect()
    }

    pub fn cycle_frames(&self) -> usize {
        3 * self.segment_frames + self.gap_frames
    }

    /// Anticipation time that makes exactly the gap frames labeled.
    pub fn gap_seconds(&self) -> f64 {
        self.gap_frames as f64 / self.fps as f64
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.contexts >= 2, "need at least 2 context symbols, got {}", self.contexts);
        ensure!(self.classes >= 1, "need at least one action class");
        ensure!(self.segment_frames >= 1 && self.gap_frames >= 1, "segment and gap lengths must be positive");
        ensure!(self.noise >= 0.0 && self.noise.is_finite(), "noise must be non-negative");
        ensure!(self.features >= 1, "feature dimension must be positive");
        ensure!(self.fps > 0.0, "fps must be positive");
        ensure!(
            self.table.len() == self.contexts * self.contexts,
            "transition table needs {} entries, has {}",
            self.contexts * self.contexts,
            self.table.len()
        );
        ensure!(self.table.iter().all(|c| *c < self.classes), "transition table names an unknown class");
        ensure!(
            self.frames >= self.cycle_frames(),
            "{} frames cannot hold one {}-frame cycle",
            self.frames,
            self.cycle_frames()
        );
        Ok(())
    }

    /// `(context embeddings, action embeddings)`, K × F and C × F, fixed by
    /// the seed.
    pub fn embeddings(&self) -> (Vec<Vec<f32>>, Vec<Vec<f32>>) {
        let mut rng = Rng::derive(self.seed, &[0]);
        let mut draw = |n: usize| -> Vec<Vec<f32>> {
            (0..n)
                .map(|_| (0..self.features).map(|_| rng.normal() as f32).collect())
                .collect()
        };
        let ctx = draw(self.contexts);
        let act = draw(self.classes);
        (ctx, act)
    }
}

/// A generated stream with the hidden context sequence that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedStream {
    pub features: FeatureFile,
    pub annotations: Vec<SegmentAnnotation>,
    /// `(a, b)` per cycle, aligned with `annotations`.
    pub contexts: Vec<(usize, usize)>,
}

/// Split 0 of [`gen_split`].
pub fn gen_stream(cfg: &GrammarConfig) -> Result<GeneratedStream> {
    gen_split(cfg, 0)
}

/// An independent stream of the grammar. All splits share the symbol
/// embeddings; contexts and noise differ per split.
pub fn gen_split(cfg: &GrammarConfig, split: u64) -> Result<GeneratedStream> {
    cfg.validate()?;
    let (ctx_emb, act_emb) = cfg.embeddings();
    let mut rng = Rng::derive(cfg.seed, &[1, split]);
    let f = cfg.features;
    let l = cfg.segment_frames;
    let mut data = Vec::with_capacity(cfg.frames * f);
    let mut push = |rng: &mut Rng, base: Option<&[f32]>| {
        for j in 0..f {
            let noise = (cfg.noise * rng.normal()) as f32;
            data.push(base.map_or(0.0, |b| b[j]) + noise);
        }
    };
    let mut annotations = Vec::new();
    let mut contexts = Vec::new();
    let mut pos = 0;
    while pos + cfg.cycle_frames() <= cfg.frames {
        let a = rng.below(cfg.contexts);
        let b = rng.below(cfg.contexts);
        let action = cfg.table[a * cfg.contexts + b];
        for _ in 0..l {
            push(&mut rng, Some(&ctx_emb[a]));
        }
        for _ in 0..l {
            push(&mut rng, Some(&ctx_emb[b]));
        }
        for _ in 0..cfg.gap_frames {
            push(&mut rng, None);
        }
        for _ in 0..l {
            push(&mut rng, Some(&act_emb[action]));
        }
        let start = (pos + 2 * l + cfg.gap_frames) as f64 / cfg.fps as f64;
        annotations.push(SegmentAnnotation::new(start, start + l as f64 / cfg.fps as f64, action));
        contexts.push((a, b));
        pos += cfg.cycle_frames();
    }
    while pos < cfg.frames {
        push(&mut rng, None);
        pos += 1;
    }
    Ok(GeneratedStream {
        features: FeatureFile::new(f, cfg.fps, data)?,
        annotations,
        contexts,
    })
}

/// Best achievable top-1 accuracy on labeled gap frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleCeilings {
    /// Using only the current (gap) frame.
    pub memoryless: f64,
    /// Using the full past, with context symbols identified.
    pub history: f64,
}

/// Exact enumeration over the K² equiprobable context pairs.
///
/// A gap frame's distribution does not depend on the pair, so a memoryless
/// predictor can do no better than the most frequent action. With the past
/// available the pair, and hence the action, is known.
pub fn bayes_oracle(cfg: &GrammarConfig) -> Result<OracleCeilings> {
    cfg.validate()?;
    ensure!(cfg.contexts <= 8, "oracle enumeration is limited to K <= 8");
    let k = cfg.contexts;
    let p_pair = 1.0 / (k * k) as f64;
    let mut marginal = vec![0.0; cfg.classes];
    let mut history = 0.0;
    for a in 0..k {
        for b in 0..k {
            let c = cfg.table[a * k + b];
            marginal[c] += p_pair;
            // P(c | a, b) is 1 for the table entry
            history += p_pair;
        }
    }
    let memoryless = marginal.iter().cloned().fold(0.0, f64::max);
    Ok(OracleCeilings { memoryless, history })
}
