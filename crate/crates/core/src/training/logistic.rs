//! Memoryless control: multinomial logistic regression on the current frame.

use crate::error::{ensure, Result};
use crate::numerics::ops::softmax_in_place;
use crate::numerics::{ParamKind, ParamStore, Rng, Tensor};
use crate::training::{adamw_step, OptimizerState};

#[derive(Clone, Debug)]
pub struct LogisticBaseline {
    params: ParamStore<f64>,
    features: usize,
    classes: usize,
}

/// Full-batch Adam settings for [`LogisticBaseline::fit`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogisticFit {
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for LogisticFit {
    fn default() -> Self {
        Self {
            steps: 300,
            lr: 0.05,
            weight_decay: 1e-2,
        }
    }
}

impl LogisticBaseline {
    pub fn new(features: usize, classes: usize) -> Result<Self> {
        ensure!(features > 0 && classes > 0, "logistic dimensions must be positive");
        let mut params = ParamStore::new();
        params.insert("logit.weight", ParamKind::Weight, Tensor::zeros(&[features, classes]))?;
        params.insert("logit.bias", ParamKind::Bias, Tensor::zeros(&[classes]))?;
        Ok(Self { params, features, classes })
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn predict(&self, x: &[f32]) -> Vec<f64> {
        let w = self.params.get("logit.weight").expect("weight").value.data();
        let mut z = self.params.get("logit.bias").expect("bias").value.data().to_vec();
        for (i, xi) in x.iter().enumerate() {
            let row = &w[i * self.classes..(i + 1) * self.classes];
            z.iter_mut().zip(row).for_each(|(zc, wc)| *zc += *xi as f64 * wc);
        }
        softmax_in_place(&mut z);
        z
    }

    /// Mean cross-entropy over `samples`, minimized by full-batch AdamW.
    /// Initial weights are small Gaussians drawn from `seed`.
    pub fn fit(samples: &[(&[f32], usize)], features: usize, classes: usize, fit: LogisticFit, seed: u64) -> Result<Self> {
        ensure!(!samples.is_empty(), "no training samples");
        let mut model = Self::new(features, classes)?;
        let mut rng = Rng::derive(seed, &[7]);
        for (name, p) in model.params.iter_mut() {
            if name == "logit.weight" {
                p.value.data_mut().iter_mut().for_each(|w| *w = 0.01 * rng.normal());
            }
        }
        for (x, label) in samples {
            ensure!(x.len() == features, "sample has {} features, expected {features}", x.len());
            ensure!(*label < classes, "label {label} out of range");
        }
        let mut opt = OptimizerState::new(&model.params);
        let n = samples.len() as f64;
        for _ in 0..fit.steps {
            let mut dw = vec![0.0; features * classes];
            let mut db = vec![0.0; classes];
            for (x, label) in samples {
                let mut g = model.predict(x);
                g[*label] -= 1.0;
                for (i, xi) in x.iter().enumerate() {
                    let row = &mut dw[i * classes..(i + 1) * classes];
                    row.iter_mut().zip(&g).for_each(|(d, gc)| *d += *xi as f64 * gc / n);
                }
                db.iter_mut().zip(&g).for_each(|(d, gc)| *d += gc / n);
            }
            for (name, p) in model.params.iter_mut() {
                let src = if name == "logit.weight" { &dw } else { &db };
                p.grad.data_mut().copy_from_slice(src);
            }
            adamw_step(&mut model.params, &mut opt, fit.lr, fit.weight_decay)?;
        }
        Ok(model)
    }
}
