use crate::datagen::SegmentAnnotation;
use crate::error::{ensure, Result};

/// Per-frame anticipation targets.
///
/// `labels[t]` is the action of the first segment whose start lies in
/// `(frame_times[t], frame_times[t] + tau_a]`, or `None` (masked) when no
/// segment starts in that interval.
pub fn anticipation_labels(segments: &[SegmentAnnotation], frame_times: &[f64], tau_a: f64) -> Result<Vec<Option<usize>>> {
    ensure!(tau_a > 0.0, "anticipation time must be positive, got {tau_a}");
    ensure!(
        frame_times.windows(2).all(|w| w[0] < w[1]),
        "frame times must be strictly increasing"
    );
    let mut order: Vec<&SegmentAnnotation> = segments.iter().collect();
    order.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    for w in order.windows(2) {
        ensure!(
            w[0].stop_s <= w[1].start_s,
            "segments [{}, {}) and [{}, {}) overlap",
            w[0].start_s,
            w[0].stop_s,
            w[1].start_s,
            w[1].stop_s
        );
    }
    let starts: Vec<f64> = order.iter().map(|s| s.start_s).collect();
    Ok(frame_times
        .iter()
        .map(|&t| {
            let first = starts.partition_point(|&s| s <= t);
            (first < starts.len() && starts[first] <= t + tau_a).then(|| order[first].action)
        })
        .collect())
}

/// [`anticipation_labels`] at every frame of a stream sampled at `fps`.
pub fn frame_labels(segments: &[SegmentAnnotation], frames: usize, fps: f64, tau_a: f64) -> Result<Vec<Option<usize>>> {
    ensure!(fps > 0.0, "fps must be positive");
    let times: Vec<f64> = (0..frames).map(|i| i as f64 / fps).collect();
    anticipation_labels(segments, &times, tau_a)
}
