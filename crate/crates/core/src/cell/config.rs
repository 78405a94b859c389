use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// What the attention query is built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum QueryMode {
    /// The previous prediction ŷ_{t-1}, encoded to d/4.
    #[default]
    Prediction,
    /// The current input frame x_t, encoded to d/4 (ablation control).
    Frame,
}

/// Width of the fusion gate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GateMode {
    /// One gate value per hidden unit.
    #[default]
    Elementwise,
    /// A single gate value shared by all hidden units.
    Scalar,
}

impl fmt::Display for QueryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueryMode::Prediction => "prediction",
            QueryMode::Frame => "frame",
        })
    }
}

impl FromStr for QueryMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prediction" => Ok(QueryMode::Prediction),
            "frame" => Ok(QueryMode::Frame),
            other => Err(Error::Config(format!(
                "query must be 'prediction' or 'frame', got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for GateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GateMode::Elementwise => "elementwise",
            GateMode::Scalar => "scalar",
        })
    }
}

impl FromStr for GateMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "elementwise" => Ok(GateMode::Elementwise),
            "scalar" => Ok(GateMode::Scalar),
            other => Err(Error::Config(format!(
                "gate must be 'elementwise' or 'scalar', got {other:?}"
            ))),
        }
    }
}

/// Shape and regularization settings of one IAM cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellConfig {
    /// Hidden size d.
    pub hidden: usize,
    /// Number of action classes C.
    pub classes: usize,
    /// Input feature dimension F.
    pub features: usize,
    /// Memory capacity S (the model order).
    pub memory: usize,
    pub heads: usize,
    pub dropout: f64,
    pub query: QueryMode,
    pub gate: GateMode,
    pub norm_eps: f64,
}

impl Default for CellConfig {
    /// Full-scale cell: d = 2048, one IAM layer, dropout 0.6.
    fn default() -> Self {
        Self {
            hidden: 2048,
            classes: 3806,
            features: 1024,
            memory: 30,
            heads: 8,
            dropout: 0.6,
            query: QueryMode::Prediction,
            gate: GateMode::Elementwise,
            norm_eps: 1e-5,
        }
    }
}

impl CellConfig {
    pub fn small(hidden: usize, classes: usize, features: usize, memory: usize, heads: usize) -> Self {
        Self {
            hidden,
            classes,
            features,
            memory,
            heads,
            dropout: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.hidden == 0 || self.hidden % 4 != 0 {
            return bad(format!("hidden size d={} must be a positive multiple of 4", self.hidden));
        }
        if self.heads == 0 {
            return bad("heads must be positive".into());
        }
        if self.key_dim() % self.heads != 0 {
            return bad(format!(
                "key dim d/4={} must be divisible by heads={}",
                self.key_dim(),
                self.heads
            ));
        }
        if self.hidden % self.heads != 0 {
            return bad(format!("d={} must be divisible by heads={}", self.hidden, self.heads));
        }
        if self.memory == 0 {
            return bad("memory capacity S must be at least 1".into());
        }
        if self.classes == 0 || self.features == 0 {
            return bad("classes and features must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(self.norm_eps > 0.0) {
            return bad("norm_eps must be positive".into());
        }
        Ok(())
    }

    /// d/4: width of queries and keys.
    pub fn key_dim(&self) -> usize {
        self.hidden / 4
    }

    /// Per-head width of projected queries and keys.
    pub fn qk_head_dim(&self) -> usize {
        self.key_dim() / self.heads
    }

    /// Per-head width of projected values.
    pub fn v_head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn gate_width(&self) -> usize {
        match self.gate {
            GateMode::Elementwise => self.hidden,
            GateMode::Scalar => 1,
        }
    }

    /// `key=value` pairs in a fixed order, as stored in checkpoints.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("d", self.hidden.to_string()),
            ("C", self.classes.to_string()),
            ("F", self.features.to_string()),
            ("S", self.memory.to_string()),
            ("heads", self.heads.to_string()),
            ("dropout", self.dropout.to_string()),
            ("query", self.query.to_string()),
            ("gate", self.gate.to_string()),
            ("norm_eps", self.norm_eps.to_string()),
        ]
    }

    /// Inverse of [`CellConfig::to_pairs`]; unknown keys are rejected.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = CellConfig::default();
        let mut seen = [false; 5];
        for (k, v) in pairs {
            let num = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| Error::Config(format!("{k}: expected an integer, got {v:?}")))
            };
            match k {
                "d" => {
                    cfg.hidden = num(v)?;
                    seen[0] = true;
                }
                "C" => {
                    cfg.classes = num(v)?;
                    seen[1] = true;
                }
                "F" => {
                    cfg.features = num(v)?;
                    seen[2] = true;
                }
                "S" => {
                    cfg.memory = num(v)?;
                    seen[3] = true;
                }
                "heads" => {
                    cfg.heads = num(v)?;
                    seen[4] = true;
                }
                "dropout" => {
                    cfg.dropout = v
                        .parse()
                        .map_err(|_| Error::Config(format!("dropout: bad number {v:?}")))?
                }
                "norm_eps" => {
                    cfg.norm_eps = v
                        .parse()
                        .map_err(|_| Error::Config(format!("norm_eps: bad number {v:?}")))?
                }
                "query" => cfg.query = v.parse()?,
                "gate" => cfg.gate = v.parse()?,
                other => return Err(Error::Config(format!("unknown cell config key {other:?}"))),
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Config("cell config must set d, C, F, S and heads".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
