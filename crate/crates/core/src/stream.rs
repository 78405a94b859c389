//! Frame-by-frame inference over an IAMF byte stream.

use std::io::{Read, Write};

use crate::cell::{memory_footprint_bytes, IamModel};
use crate::datagen::FeatureReader;
use crate::error::{Error, Result};
use crate::eval::top_k_ids;
use crate::numerics::Rng;

/// Classes listed per output line.
pub const STREAM_TOP_K: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamStats {
    pub frames: usize,
    /// Largest memory size observed after any step, in bytes.
    pub peak_state_bytes: usize,
    /// `(d/4 + d) · S · 4`, the size of a full memory.
    pub state_bound_bytes: usize,
}

/// CSV header matching the lines written by [`run_stream`].
pub fn stream_header(classes: usize) -> String {
    let mut cols = vec!["t".to_string()];
    for i in 1..=STREAM_TOP_K.min(classes) {
        cols.push(format!("top{i}_id"));
        cols.push(format!("top{i}_p"));
    }
    cols.join(",")
}

/// Reads frames from `input` one at a time and writes
/// `t,top1_id,top1_p,...` for each before reading the next. Output is
/// flushed per line. Only the cell state is kept between frames.
pub fn run_stream<R: Read, W: Write>(model: &IamModel<f32>, input: R, mut output: W) -> Result<StreamStats> {
    let mut reader = FeatureReader::new(input, "<stdin>")?;
    let cfg = model.config();
    let header = reader.header();
    if header.features != cfg.features {
        return Err(Error::Config(format!(
            "feature dimension mismatch: checkpoint expects F={}, stream has F={}",
            cfg.features, header.features
        )));
    }
    let k = STREAM_TOP_K.min(cfg.classes);
    let mut state = model.new_state();
    let mut rng = Rng::seed(0);
    let mut frame = vec![0.0f32; cfg.features];
    let mut stats = StreamStats {
        frames: 0,
        peak_state_bytes: 0,
        state_bound_bytes: memory_footprint_bytes(cfg, 4),
    };
    writeln!(output, "{}", stream_header(cfg.classes))?;
    output.flush()?;
    while reader.next_frame(&mut frame)? {
        let out = model.step(&mut state, &frame, &mut rng, false)?;
        let probs = out.prediction.probs();
        let mut line = stats.frames.to_string();
        for id in top_k_ids(probs, k) {
            line.push_str(&format!(",{id},{}", probs[id]));
        }
        writeln!(output, "{line}")?;
        output.flush()?;
        stats.frames += 1;
        stats.peak_state_bytes = stats.peak_state_bytes.max(state.resident_bytes());
    }
    Ok(stats)
}
