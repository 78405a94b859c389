use crate::cell::{IamModel, KeySource, Unroll};
use crate::error::{ensure, Error, Result};
use crate::numerics::{GradBuffer, Objective, ParamStore, Real, Rng};

/// Added inside the logarithm of the cross-entropy.
pub const CE_EPS: f64 = 1e-12;

/// A training sequence with per-step anticipation targets.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledWindow {
    /// T × F frames.
    pub features: Vec<Vec<f32>>,
    /// Target per step; `None` is masked out of the loss.
    pub labels: Vec<Option<usize>>,
}

impl LabeledWindow {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn mask(&self) -> Vec<bool> {
        self.labels.iter().map(Option::is_some).collect()
    }

    pub fn unmasked(&self) -> usize {
        self.labels.iter().flatten().count()
    }

    /// Index of the last unmasked step, the one a window is scored on.
    pub fn score_step(&self) -> Option<usize> {
        self.labels.iter().rposition(Option::is_some)
    }

    pub fn frames<T: Real>(&self) -> Vec<Vec<T>> {
        self.features
            .iter()
            .map(|f| f.iter().map(|v| T::from_f64(*v as f64)).collect())
            .collect()
    }
}

/// Inverse-count class weights normalized to mean 1; a zero count is
/// treated as one.
pub fn class_weights(counts: &[usize]) -> Result<Vec<f64>> {
    ensure!(!counts.is_empty(), "no classes");
    ensure!(counts.iter().any(|c| *c > 0), "all class counts are zero");
    let inv: Vec<f64> = counts.iter().map(|c| 1.0 / (*c).max(1) as f64).collect();
    let mean = inv.iter().sum::<f64>() / inv.len() as f64;
    Ok(inv.iter().map(|w| w / mean).collect())
}

/// Loss settings shared by every window.
#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub smoothing: f64,
    /// Per-class weights; `None` weighs every class 1.
    pub weights: Option<Vec<f64>>,
}

impl LossConfig {
    pub fn plain() -> Self {
        Self {
            smoothing: 0.0,
            weights: None,
        }
    }

    fn weight(&self, label: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[label])
    }
}

/// `-w_label · Σ_c target_c · ln(ŷ_c + ε)` with
/// `target = (1 - smoothing)·onehot(label) + smoothing / C`.
pub fn smoothed_weighted_ce<T: Real>(probs: &[T], label: Option<usize>, weight: f64, smoothing: f64) -> Result<T> {
    let label = label.ok_or_else(|| Error::contract("cross-entropy on a masked step"))?;
    let c = probs.len();
    ensure!(label < c, "label {label} out of range for {c} classes");
    ensure!((0.0..1.0).contains(&smoothing), "smoothing must be in [0, 1), got {smoothing}");
    let eps = T::from_f64(CE_EPS);
    let off = T::from_f64(smoothing / c as f64);
    let on = T::from_f64(1.0 - smoothing) + off;
    let mut sum = T::ZERO;
    for (i, p) in probs.iter().enumerate() {
        let target = if i == label { on } else { off };
        if target != T::ZERO {
            sum += target * (*p + eps).ln();
        }
    }
    Ok(-T::from_f64(weight) * sum)
}

/// ∂CE/∂ŷ for [`smoothed_weighted_ce`], scaled by `scale`, added into `out`.
fn ce_grad<T: Real>(probs: &[T], label: usize, weight: f64, smoothing: f64, scale: T, out: &mut [T]) {
    let c = probs.len();
    let eps = T::from_f64(CE_EPS);
    let off = T::from_f64(smoothing / c as f64);
    let on = T::from_f64(1.0 - smoothing) + off;
    let w = T::from_f64(weight) * scale;
    for (i, (p, o)) in probs.iter().zip(out.iter_mut()).enumerate() {
        let target = if i == label { on } else { off };
        *o -= w * target / (*p + eps);
    }
}

/// Mean loss over the unmasked steps of an unrolled window.
pub fn window_loss<T: Real>(unroll: &Unroll<T>, window: &LabeledWindow, loss: &LossConfig) -> Result<T> {
    let n = window.unmasked();
    ensure!(n > 0, "window has no unmasked step");
    let mut total = T::ZERO;
    for (t, label) in window.labels.iter().enumerate() {
        if let Some(l) = *label {
            total += smoothed_weighted_ce(unroll.prediction(t), Some(l), loss.weight(l), loss.smoothing)?;
        }
    }
    Ok(total / T::from_usize(n))
}

/// Runs `model` over `window` from an empty memory and returns the mean
/// cross-entropy over unmasked steps.
pub fn sequence_loss<T: Real>(model: &IamModel<T>, window: &LabeledWindow, loss: &LossConfig, rng: &mut Rng, training: bool) -> Result<T> {
    ensure!(window.unmasked() > 0, "window has no unmasked step");
    let unroll = model.unroll(&window.frames(), rng, training, KeySource::Detached)?;
    window_loss(&unroll, window, loss)
}

/// Loss, gradient (added into `grads`) and the unroll of one window.
pub fn sequence_loss_and_grad<T: Real>(
    model: &IamModel<T>,
    window: &LabeledWindow,
    loss: &LossConfig,
    rng: &mut Rng,
    training: bool,
    grads: &mut GradBuffer<T>,
) -> Result<(T, Unroll<T>)> {
    ensure!(window.unmasked() > 0, "window has no unmasked step");
    let unroll = model.unroll(&window.frames(), rng, training, KeySource::Detached)?;
    let value = window_loss(&unroll, window, loss)?;
    let scale = T::ONE / T::from_usize(window.unmasked());
    let dprobs: Vec<Vec<T>> = window
        .labels
        .iter()
        .enumerate()
        .map(|(t, label)| {
            let probs = unroll.prediction(t);
            let mut g = vec![T::ZERO; probs.len()];
            if let Some(l) = *label {
                ce_grad(probs, l, loss.weight(l), loss.smoothing, scale, &mut g);
            }
            g
        })
        .collect();
    model.backward(&unroll, &dprobs, KeySource::Detached, grads)?;
    Ok((value, unroll))
}

/// Window loss as a function of the parameters, for gradient checking.
///
/// The analytic gradient treats memory keys as stop-gradient, so the
/// finite-difference side evaluates the loss with key-encoder inputs held
/// at the predictions recorded at `base`.
pub struct WindowObjective {
    model: IamModel<f64>,
    window: LabeledWindow,
    loss: LossConfig,
    recorded_keys: Vec<Vec<f64>>,
    dropout_seed: u64,
}

impl WindowObjective {
    pub fn new(model: IamModel<f64>, window: LabeledWindow, loss: LossConfig, dropout_seed: u64) -> Result<Self> {
        ensure!(window.unmasked() > 0, "window has no unmasked step");
        let training = model.config().dropout > 0.0;
        let unroll = model.unroll(&window.frames(), &mut Rng::seed(dropout_seed), training, KeySource::Detached)?;
        Ok(Self {
            recorded_keys: unroll.predictions(),
            model,
            window,
            loss,
            dropout_seed,
        })
    }

    pub fn params(&self) -> &ParamStore<f64> {
        self.model.params()
    }

    fn with(&self, params: &ParamStore<f64>) -> Result<IamModel<f64>> {
        IamModel::from_parts(self.model.config().clone(), params.clone())
    }

    fn training(&self) -> bool {
        self.model.config().dropout > 0.0
    }
}

impl Objective<f64> for WindowObjective {
    fn loss(&self, params: &ParamStore<f64>) -> Result<f64> {
        Ok(self.loss_and_pattern(params)?.0)
    }

    fn loss_and_grad(&self, params: &ParamStore<f64>, grads: &mut GradBuffer<f64>) -> Result<f64> {
        let model = self.with(params)?;
        let mut rng = Rng::seed(self.dropout_seed);
        Ok(sequence_loss_and_grad(&model, &self.window, &self.loss, &mut rng, self.training(), grads)?.0)
    }

    fn loss_and_pattern(&self, params: &ParamStore<f64>) -> Result<(f64, Vec<bool>)> {
        let model = self.with(params)?;
        let mut rng = Rng::seed(self.dropout_seed);
        let keys = KeySource::Recorded(&self.recorded_keys);
        let unroll = model.unroll(&self.window.frames(), &mut rng, self.training(), keys)?;
        Ok((window_loss(&unroll, &self.window, &self.loss)?, unroll.relu_pattern()))
    }
}
