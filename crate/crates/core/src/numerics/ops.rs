//! Forward and backward kernels.
//!
//! The checked entry points (`affine`, `softmax`, `layer_norm`, `dropout`)
//! validate shapes and return contract errors. The `*_into` / `*_backward`
//! kernels assume the caller already validated shapes and are the ones used
//! on the hot path.
//!
//! GELU uses the exact Gaussian-CDF form `0.5 x (1 + erf(x / sqrt 2))` in
//! both directions.

use super::{Real, Rng, Tensor};
use crate::error::{ensure, Result};

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
// 1 / sqrt(2 pi)
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Returns `xᵀW + b` for `W` of shape `n × m`.
pub fn affine<T: Real>(x: &[T], w: &Tensor<T>, b: &[T]) -> Result<Vec<T>> {
    ensure!(w.rank() == 2, "affine weight must be a matrix, got {:?}", w.shape());
    let (n, m) = (w.rows(), w.cols());
    ensure!(x.len() == n, "affine input has {} elements, weight expects {n}", x.len());
    ensure!(b.len() == m, "affine bias has {} elements, weight expects {m}", b.len());
    let mut out = vec![T::ZERO; m];
    affine_into(x, w.data(), b, &mut out);
    Ok(out)
}

/// `out = xᵀW + b` with `W` row-major `x.len() × out.len()`.
#[inline]
pub fn affine_into<T: Real>(x: &[T], w: &[T], b: &[T], out: &mut [T]) {
    let m = out.len();
    debug_assert_eq!(w.len(), x.len() * m);
    out.copy_from_slice(b);
    for (xi, row) in x.iter().zip(w.chunks_exact(m)) {
        if *xi == T::ZERO {
            continue;
        }
        for (o, wij) in out.iter_mut().zip(row) {
            *o += *xi * *wij;
        }
    }
}

/// Accumulates the gradients of `y = xᵀW + b` given `dy`.
///
/// `dx` is overwritten-by-addition when present; `dw` and `db` accumulate.
#[inline]
pub fn affine_backward<T: Real>(
    x: &[T],
    w: &[T],
    dy: &[T],
    dx: Option<&mut [T]>,
    dw: &mut [T],
    db: &mut [T],
) {
    let m = dy.len();
    for (d, g) in db.iter_mut().zip(dy) {
        *d += *g;
    }
    for (xi, drow) in x.iter().zip(dw.chunks_exact_mut(m)) {
        if *xi == T::ZERO {
            continue;
        }
        for (d, g) in drow.iter_mut().zip(dy) {
            *d += *xi * *g;
        }
    }
    if let Some(dx) = dx {
        for (dxi, row) in dx.iter_mut().zip(w.chunks_exact(m)) {
            *dxi += dot(row, dy);
        }
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::ZERO, |acc, (x, y)| acc + *x * *y)
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

pub fn softmax<T: Real>(z: &[T]) -> Result<Vec<T>> {
    ensure!(!z.is_empty(), "softmax of an empty vector");
    let mut out = z.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// Max-subtracted softmax, in place.
pub fn softmax_in_place<T: Real>(z: &mut [T]) {
    let max = z.iter().copied().fold(z[0], T::max);
    let mut sum = T::ZERO;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Gradient w.r.t. the logits given the softmax output `y` and `dy`.
pub fn softmax_backward<T: Real>(y: &[T], dy: &[T], dz: &mut [T]) {
    let inner = dot(y, dy);
    for ((d, yi), gi) in dz.iter_mut().zip(y).zip(dy) {
        *d = *yi * (*gi - inner);
    }
}

#[inline]
pub fn relu<T: Real>(x: T) -> T {
    x.max(T::ZERO)
}

pub fn relu_in_place<T: Real>(x: &mut [T]) {
    x.iter_mut().for_each(|v| *v = relu(*v));
}

/// Zeroes `grad` wherever the ReLU output was not positive.
pub fn relu_backward<T: Real>(out: &[T], grad: &mut [T]) {
    for (g, o) in grad.iter_mut().zip(out) {
        if *o <= T::ZERO {
            *g = T::ZERO;
        }
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    T::from_f64(0.5) * x * (T::ONE + (x * T::from_f64(FRAC_1_SQRT_2)).erf())
}

/// d gelu / dx = Φ(x) + x φ(x)
#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let cdf = T::from_f64(0.5) * (T::ONE + (x * T::from_f64(FRAC_1_SQRT_2)).erf());
    let pdf = T::from_f64(INV_SQRT_2PI) * (T::from_f64(-0.5) * x * x).exp();
    cdf + x * pdf
}

/// Saved statistics of one layer-norm evaluation.
#[derive(Clone, Debug, Default)]
pub struct NormCache<T> {
    pub normalized: Vec<T>,
    pub rstd: T,
}

pub fn layer_norm<T: Real>(x: &[T], gain: &[T], bias: &[T], eps: T) -> Result<Vec<T>> {
    ensure!(x.len() >= 2, "layer norm needs at least 2 elements, got {}", x.len());
    ensure!(
        gain.len() == x.len() && bias.len() == x.len(),
        "layer norm gain/bias must match input length {}",
        x.len()
    );
    let mut out = vec![T::ZERO; x.len()];
    layer_norm_into(x, gain, bias, eps, &mut out);
    Ok(out)
}

/// Layer normalization with population variance. Returns the cache needed
/// by [`layer_norm_backward`].
pub fn layer_norm_into<T: Real>(x: &[T], gain: &[T], bias: &[T], eps: T, out: &mut [T]) -> NormCache<T> {
    let n = T::from_usize(x.len());
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n;
    let rstd = T::ONE / (var + eps).sqrt();
    let normalized: Vec<T> = x.iter().map(|v| (*v - mean) * rstd).collect();
    for i in 0..x.len() {
        out[i] = normalized[i] * gain[i] + bias[i];
    }
    NormCache { normalized, rstd }
}

pub fn layer_norm_backward<T: Real>(
    cache: &NormCache<T>,
    gain: &[T],
    dy: &[T],
    dx: &mut [T],
    dgain: &mut [T],
    dbias: &mut [T],
) {
    let n = dy.len();
    let nt = T::from_usize(n);
    let mut sum_d = T::ZERO;
    let mut sum_dx = T::ZERO;
    let mut dxhat = vec![T::ZERO; n];
    for i in 0..n {
        let xh = cache.normalized[i];
        dgain[i] += dy[i] * xh;
        dbias[i] += dy[i];
        dxhat[i] = dy[i] * gain[i];
        sum_d += dxhat[i];
        sum_dx += dxhat[i] * xh;
    }
    let scale = cache.rstd / nt;
    for i in 0..n {
        dx[i] += scale * (nt * dxhat[i] - sum_d - cache.normalized[i] * sum_dx);
    }
}

/// Inverted dropout. In inference mode, or with `rate == 0`, returns `x`.
pub fn dropout<T: Real>(x: &[T], rate: f64, rng: &mut Rng, training: bool) -> Result<Vec<T>> {
    ensure!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1), got {rate}");
    if !training || rate == 0.0 {
        return Ok(x.to_vec());
    }
    let mask = dropout_mask::<T>(x.len(), rate, rng);
    Ok(x.iter().zip(&mask).map(|(v, m)| *v * *m).collect())
}

/// Per-element multipliers: 0 with probability `rate`, else `1 / (1 - rate)`.
pub fn dropout_mask<T: Real>(n: usize, rate: f64, rng: &mut Rng) -> Vec<T> {
    let keep = T::from_f64(1.0 / (1.0 - rate));
    (0..n)
        .map(|_| if rng.uniform() < rate { T::ZERO } else { keep })
        .collect()
}
