use std::fmt::Display;
use std::str::FromStr;

use crate::cell::{CellConfig, GateMode, QueryMode};
use crate::error::{Error, Result};

/// Everything a training run needs besides data: model shape and recipe.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Anticipation time τ_a in seconds.
    pub tau_a: f64,
    /// Frame rate the model is trained at.
    pub fps: f64,
    /// Frames per training window, unless `window_seconds` is set.
    pub window: usize,
    /// Window length in seconds; overrides `window` at any fps.
    pub window_seconds: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub smoothing: f64,
    pub inverse_count_weights: bool,
    pub jitter: bool,
    pub seed: u64,
    pub hidden: usize,
    pub memory: usize,
    pub heads: usize,
    pub dropout: f64,
    pub query: QueryMode,
    pub gate: GateMode,
    /// Class count; inferred from the annotations when `None`.
    pub classes: Option<usize>,
}

impl Default for TrainConfig {
    /// The published large-scale recipe.
    fn default() -> Self {
        Self {
            tau_a: 1.0,
            fps: 1.0,
            window: 30,
            window_seconds: None,
            epochs: 50,
            batch_size: 128,
            lr: 2e-4,
            weight_decay: 1e-2,
            smoothing: 0.0,
            inverse_count_weights: false,
            jitter: false,
            seed: 0,
            hidden: 2048,
            memory: 30,
            heads: 8,
            dropout: 0.6,
            query: QueryMode::Prediction,
            gate: GateMode::Elementwise,
            classes: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

impl TrainConfig {
    /// Recognized keys, in the order [`TrainConfig::to_pairs`] emits them.
    pub const KEYS: [&'static str; 19] = [
        "tau_a",
        "fps",
        "window",
        "window_seconds",
        "epochs",
        "batch_size",
        "lr",
        "weight_decay",
        "smoothing",
        "inverse_count_weights",
        "jitter",
        "seed",
        "d",
        "S",
        "heads",
        "dropout",
        "query",
        "gate",
        "C",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "tau_a" => self.tau_a = parse(key, value)?,
            "fps" => self.fps = parse(key, value)?,
            "window" => self.window = parse(key, value)?,
            "window_seconds" => self.window_seconds = Some(parse(key, value)?),
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "smoothing" => self.smoothing = parse(key, value)?,
            "inverse_count_weights" => self.inverse_count_weights = parse_bool(key, value)?,
            "jitter" => self.jitter = parse_bool(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "d" => self.hidden = parse(key, value)?,
            "S" => self.memory = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "query" => self.query = value.parse()?,
            "gate" => self.gate = value.parse()?,
            "C" => self.classes = Some(parse(key, value)?),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.tau_a > 0.0) {
            return bad("tau_a must be positive");
        }
        if !(self.fps > 0.0) {
            return bad("fps must be positive");
        }
        if self.window_frames() < 2 {
            return bad("window must be at least 2 frames");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return bad("smoothing must be in [0, 1)");
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        fn s(v: impl Display) -> String {
            v.to_string()
        }
        let mut out = vec![
            ("tau_a", s(self.tau_a)),
            ("fps", s(self.fps)),
            ("window", s(self.window_frames())),
            ("epochs", s(self.epochs)),
            ("batch_size", s(self.batch_size)),
            ("lr", s(self.lr)),
            ("weight_decay", s(self.weight_decay)),
            ("smoothing", s(self.smoothing)),
            ("inverse_count_weights", s(self.inverse_count_weights)),
            ("jitter", s(self.jitter)),
            ("seed", s(self.seed)),
            ("d", s(self.hidden)),
            ("S", s(self.memory)),
            ("heads", s(self.heads)),
            ("dropout", s(self.dropout)),
            ("query", s(self.query)),
            ("gate", s(self.gate)),
        ];
        if let Some(w) = self.window_seconds {
            out.push(("window_seconds", s(w)));
        }
        if let Some(c) = self.classes {
            out.push(("C", s(c)));
        }
        out
    }

    /// Effective window length in frames.
    pub fn window_frames(&self) -> usize {
        self.window_seconds
            .map_or(self.window, |secs| (secs * self.fps).round() as usize)
    }

    /// Cell shape for data with `features` inputs and `classes` outputs.
    pub fn cell_config(&self, features: usize, classes: usize) -> Result<CellConfig> {
        let cfg = CellConfig {
            hidden: self.hidden,
            classes,
            features,
            memory: self.memory,
            heads: self.heads,
            dropout: self.dropout,
            query: self.query,
            gate: self.gate,
            ..CellConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `key=value` lines. Blank lines and lines starting with `#` are
/// skipped; errors carry 1-based line numbers.
pub fn parse_key_values(text: &str, source: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(source, i as u64 + 1, format!("expected key=value, got {line:?}")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
