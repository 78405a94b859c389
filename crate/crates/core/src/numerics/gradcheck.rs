use super::{check_finite, GradBuffer, ParamStore, Real, Rng};
use crate::error::{ensure, Error, Result};

/// A deterministic scalar function of a parameter store together with its
/// analytic gradient.
pub trait Objective<T: Real> {
    fn loss(&self, params: &ParamStore<T>) -> Result<T>;

    /// Returns the loss and adds ∂loss/∂param into `grads`.
    fn loss_and_grad(&self, params: &ParamStore<T>, grads: &mut GradBuffer<T>) -> Result<T>;

    /// The loss together with the on/off pattern of every piecewise-linear
    /// unit it passes through. Two parameter points with equal patterns lie
    /// in the same smooth piece of the loss.
    fn loss_and_pattern(&self, params: &ParamStore<T>) -> Result<(T, Vec<bool>)> {
        Ok((self.loss(params)?, Vec::new()))
    }
}

/// Replaces every gradient accumulator in `params` with ∂loss/∂param.
pub fn gradient_of<T: Real, O: Objective<T> + ?Sized>(
    objective: &O,
    params: &mut ParamStore<T>,
) -> Result<T> {
    let mut buf = GradBuffer::for_store(params);
    let loss = objective.loss_and_grad(params, &mut buf)?;
    if !loss.is_finite() {
        let culprit = params
            .iter()
            .find(|(_, p)| p.value.data().iter().any(|v| !v.is_finite()))
            .map(|(name, _)| format!("loss (parameter {name} is non-finite)"));
        return Err(Error::NonFinite(culprit.unwrap_or_else(|| "loss".into())));
    }
    for (i, g) in buf.grads.iter().enumerate() {
        check_finite(&format!("gradient of {}", params.name(super::ParamId(i))), g)?;
    }
    params.zero_grads();
    params.accumulate(&buf);
    Ok(loss)
}

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Check at most this many seeded-random elements per tensor (≥ 25);
    /// `None` checks every element.
    pub max_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            tolerance: 1e-5,
            max_per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Offender {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Elements skipped because `p - h` and `p + h` fall on different
    /// smooth pieces at every tried step, where the central difference
    /// estimates no derivative.
    pub kinks: usize,
    /// Elements whose stencil straddled a kink at the configured step and
    /// were compared at a smaller one.
    pub refined: usize,
    pub tolerance: f64,
    pub worst: Option<Offender>,
}

impl GradCheckReport {
    pub fn worst_rel_err(&self) -> f64 {
        self.worst.as_ref().map_or(0.0, |w| w.rel_err)
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.worst_rel_err() < self.tolerance
    }
}

/// Step reductions (by 10 each) tried before an element is skipped as a
/// kink.
pub const KINK_RETRIES: usize = 2;

/// Compares analytic gradients against central differences
/// `(f(p+h) - f(p-h)) / 2h` using `|a - n| / max(1, |a|, |n|)`.
pub fn grad_check<O: Objective<f64> + ?Sized>(
    objective: &O,
    params: &mut ParamStore<f64>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    ensure!(cfg.step > 0.0, "finite-difference step must be positive");
    if let Some(k) = cfg.max_per_tensor {
        ensure!(k >= 25, "subsample must cover at least 25 elements per tensor, got {k}");
    }
    gradient_of(objective, params)?;
    let mut rng = Rng::seed(cfg.seed);
    let mut report = GradCheckReport {
        checked: 0,
        kinks: 0,
        refined: 0,
        tolerance: cfg.tolerance,
        worst: None,
    };

    let ids: Vec<_> = (0..params.len()).map(super::ParamId).collect();
    for id in ids {
        let n = params.param(id).value.len();
        let indices: Vec<usize> = match cfg.max_per_tensor {
            Some(k) if k < n => {
                let mut all: Vec<usize> = (0..n).collect();
                rng.shuffle(&mut all);
                all.truncate(k);
                all.sort_unstable();
                all
            }
            _ => (0..n).collect(),
        };
        for i in indices {
            let analytic = params.grad(id)[i];
            let orig = params.value(id)[i];
            let mut numeric = None;
            let mut h = cfg.step;
            for attempt in 0..=KINK_RETRIES {
                params.value_mut(id)[i] = orig + h;
                let (plus, plus_pattern) = objective.loss_and_pattern(params)?;
                params.value_mut(id)[i] = orig - h;
                let (minus, minus_pattern) = objective.loss_and_pattern(params)?;
                params.value_mut(id)[i] = orig;
                if plus_pattern == minus_pattern {
                    report.refined += (attempt > 0) as usize;
                    numeric = Some((plus - minus) / (2.0 * h));
                    break;
                }
                h /= 10.0;
            }
            let Some(numeric) = numeric else {
                report.kinks += 1;
                continue;
            };
            let rel_err = (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs());
            report.checked += 1;
            if report.worst.as_ref().is_none_or(|w| rel_err > w.rel_err) {
                report.worst = Some(Offender {
                    param: params.name(id).to_string(),
                    index: i,
                    analytic,
                    numeric,
                    rel_err,
                });
            }
        }
    }
    Ok(report)
}
