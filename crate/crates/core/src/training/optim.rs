use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Real};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// AdamW moments, one pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
    exempt: Vec<String>,
}

impl OptimizerState {
    pub fn new<T: Real>(params: &ParamStore<T>) -> Self {
        Self {
            m: params.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect(),
            v: params.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect(),
            step: 0,
            exempt: params
                .iter()
                .filter(|(_, p)| p.kind.decay_exempt())
                .map(|(n, _)| n.to_string())
                .collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Names of tensors excluded from weight decay.
    pub fn exempt(&self) -> &[String] {
        &self.exempt
    }
}

/// One AdamW update from the gradients accumulated in `params`.
///
/// Decoupled decay `p ← p·(1 - lr·wd)` touches only non-exempt tensors and
/// precedes the bias-corrected Adam step. Moments are kept in f64.
pub fn adamw_step<T: Real>(params: &mut ParamStore<T>, state: &mut OptimizerState, lr: f64, weight_decay: f64) -> Result<()> {
    for (name, p) in params.iter() {
        if p.grad.data().iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (i, (_, p)) in params.iter_mut().enumerate() {
        let decay = !p.kind.decay_exempt() && weight_decay != 0.0;
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let grads = p.grad.data().to_vec();
        for (j, w) in p.value.data_mut().iter_mut().enumerate() {
            let g = grads[j].to_f64();
            let mut x = w.to_f64();
            if decay {
                x *= 1.0 - lr * weight_decay;
            }
            m[j] = BETA1 * m[j] + (1.0 - BETA1) * g;
            v[j] = BETA2 * v[j] + (1.0 - BETA2) * g * g;
            x -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + ADAM_EPS);
            *w = T::from_f64(x);
        }
    }
    Ok(())
}

/// Cosine decay from `lr_base` at epoch 0 to 0 at `epochs`; `epoch` may be
/// fractional.
pub fn cosine_lr(epoch: f64, epochs: f64, lr_base: f64) -> f64 {
    let x = (epoch / epochs).clamp(0.0, 1.0);
    lr_base * 0.5 * (1.0 + (std::f64::consts::PI * x).cos())
}
