//! Streaming action anticipation with an inductive attention recurrent cell.
//!
//! The cell keeps a bounded FIFO memory of `(key, value)` pairs, where keys
//! encode the model's own past predictions and values are past hidden
//! states, and queries it with its latest prediction. Around the cell this
//! crate provides training (anticipation labels, losses, AdamW), synthetic
//! activity streams with exact accuracy ceilings, evaluation metrics, and
//! the binary file formats used by the `iam` command-line tool.

pub mod cell;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod numerics;
pub mod stream;
pub mod training;

pub use error::{Error, Result};
