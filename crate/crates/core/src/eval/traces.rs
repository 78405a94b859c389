use std::io::Write;
use std::path::Path;

use crate::cell::IamModel;
use crate::datagen::FeatureFile;
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Streams `features` through `model` in inference mode and writes one
/// `attn,t,head,slot_age,weight` row per head and memory slot plus one
/// `gate,t,mean,min,max` row per step. `slot_age` 1 is the newest entry.
/// Returns the number of rows written.
pub fn dump_traces<W: Write>(model: &IamModel<f32>, features: &FeatureFile, out: &mut W) -> Result<usize> {
    if features.features != model.config().features {
        return Err(Error::Config(format!(
            "feature dimension mismatch: checkpoint expects F={}, file has F={}",
            model.config().features,
            features.features
        )));
    }
    let mut state = model.new_state();
    let mut rng = Rng::seed(0);
    let mut rows = 0;
    for (t, frame) in features.iter().enumerate() {
        let step = model.step(&mut state, frame, &mut rng, false)?;
        if let Some(att) = &step.trace.attention {
            let slots = att.cols();
            for head in 0..att.rows() {
                for (j, w) in att.row(head).iter().enumerate() {
                    writeln!(out, "attn,{t},{head},{},{w}", slots - j)?;
                    rows += 1;
                }
            }
        }
        let g = &step.trace.gate;
        let mean = g.iter().map(|v| *v as f64).sum::<f64>() / g.len() as f64;
        let min = g.iter().cloned().fold(f32::INFINITY, f32::min);
        let max = g.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        writeln!(out, "gate,{t},{mean},{min},{max}")?;
        rows += 1;
    }
    out.flush()?;
    Ok(rows)
}

pub fn write_traces(model: &IamModel<f32>, features: &FeatureFile, path: &Path) -> Result<usize> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    dump_traces(model, features, &mut w).map_err(|e| match e {
        Error::Stream(io) => Error::io(path, io),
        other => other,
    })
}
