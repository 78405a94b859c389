use super::{jitter_indices, FeatureFile, SegmentAnnotation};
use crate::error::{ensure, Result};
use crate::numerics::Rng;
use crate::training::{anticipation_labels, LabeledWindow, TrainConfig};

/// Source frames per training frame; must be a whole number.
pub fn frame_stride(source_fps: f64, train_fps: f64) -> Result<usize> {
    ensure!(source_fps > 0.0 && train_fps > 0.0, "frame rates must be positive");
    let ratio = source_fps / train_fps;
    let stride = ratio.round();
    ensure!(
        stride >= 1.0 && (ratio - stride).abs() < 1e-6,
        "source fps {source_fps} is not a whole multiple of training fps {train_fps}"
    );
    Ok(stride as usize)
}

/// One window per annotated segment, ending at the last source frame at or
/// before `start - tau_a`.
///
/// Window frames are spaced `source_fps / cfg.fps` source frames apart.
/// Steps that would fall before the stream are padded with frame 0 and
/// masked. Labels follow [`anticipation_labels`] at the grid times; windows
/// with no labeled step are dropped, as are segments whose window end would
/// precede the stream. With `jitter` set (and `cfg.jitter` on) each grid
/// step reads its features from a source frame resampled by
/// [`jitter_indices`]; labels stay on the grid.
pub fn make_windows(
    features: &FeatureFile,
    annotations: &[SegmentAnnotation],
    cfg: &TrainConfig,
    jitter: Option<&mut Rng>,
) -> Result<Vec<LabeledWindow>> {
    let source_fps = features.fps as f64;
    let stride = frame_stride(source_fps, cfg.fps)?;
    let len = cfg.window_frames();
    ensure!(len >= 1, "window must hold at least one frame");
    let mut jitter = jitter.filter(|_| cfg.jitter);
    let mut order: Vec<&SegmentAnnotation> = annotations.iter().collect();
    order.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));

    let mut out = Vec::new();
    for seg in order {
        let end_s = seg.start_s - cfg.tau_a;
        if end_s < 0.0 {
            continue;
        }
        // tolerance absorbs float error in start_s * fps
        let end = ((end_s * source_fps) + 1e-6).floor() as usize;
        if end >= features.frames() {
            continue;
        }
        let pad = (len - 1).saturating_sub(end / stride);
        let grid: Vec<usize> = (pad..len).map(|k| end - (len - 1 - k) * stride).collect();
        let times: Vec<f64> = grid.iter().map(|&i| i as f64 / source_fps).collect();
        let mut labels = vec![None; pad];
        labels.extend(anticipation_labels(annotations, &times, cfg.tau_a)?);
        if labels.iter().all(Option::is_none) {
            continue;
        }
        let sources = match jitter.as_deref_mut() {
            Some(rng) => jitter_indices(&grid, stride, 1, rng)?,
            None => grid,
        };
        let mut frames = vec![features.frame(0).to_vec(); pad];
        frames.extend(sources.iter().map(|&i| features.frame(i).to_vec()));
        out.push(LabeledWindow { features: frames, labels });
    }
    Ok(out)
}
