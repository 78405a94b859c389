use crate::error::{ensure, Result};
use crate::numerics::Rng;

/// Resamples frame indices backward within the sampling interval.
///
/// `out[0] = base[0]`; for `t >= 1`, `out[t] = base[t] + δ_t` with `δ_t`
/// uniform over the integers in `[-(f_device - f_train), 0]`. Requires
/// consecutive base indices to be more than `f_device - f_train` apart so
/// the output stays strictly increasing.
pub fn jitter_indices(base: &[usize], f_device: usize, f_train: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    ensure!(f_train >= 1 && f_device >= f_train, "need f_device >= f_train >= 1");
    let reach = f_device - f_train;
    for w in base.windows(2) {
        ensure!(
            w[1] > w[0] && w[1] - w[0] > reach,
            "base indices {} and {} are too close for offsets down to -{reach}",
            w[0],
            w[1]
        );
    }
    Ok(base
        .iter()
        .enumerate()
        .map(|(t, &b)| {
            if t == 0 || reach == 0 {
                b
            } else {
                b - rng.int_inclusive(0, reach as i64) as usize
            }
        })
        .collect())
}
