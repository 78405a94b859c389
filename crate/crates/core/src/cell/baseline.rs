//! First-order recurrent control: `h_t = tanh(W_f (W_x x_t + tanh(W_g h_{t-1})))`.
//!
//! No memory and no attention; `h_{-1} = 0`.

use super::layers::Dense;
use super::model::Prediction;
use crate::error::{ensure, Result};
use crate::numerics::ops::{softmax_backward, softmax_in_place};
use crate::numerics::{GradBuffer, ParamStore, Real, Rng};

#[derive(Clone, Debug)]
pub struct FirstOrderBaseline<T> {
    params: ParamStore<T>,
    input: Dense,
    recur: Dense,
    mix: Dense,
    classifier: Dense,
    hidden: usize,
    features: usize,
}

#[derive(Clone, Debug)]
struct BaselineStep<T> {
    x: Vec<T>,
    h_prev: Vec<T>,
    r: Vec<T>,
    u: Vec<T>,
    h: Vec<T>,
    probs: Vec<T>,
}

/// Forward record of a baseline unroll.
#[derive(Clone, Debug)]
pub struct BaselineUnroll<T> {
    steps: Vec<BaselineStep<T>>,
}

impl<T: Real> BaselineUnroll<T> {
    pub fn prediction(&self, t: usize) -> &[T] {
        &self.steps[t].probs
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

fn tanh_all<T: Real>(v: &mut [T]) {
    v.iter_mut().for_each(|x| *x = x.tanh());
}

impl<T: Real> FirstOrderBaseline<T> {
    pub fn new(features: usize, hidden: usize, classes: usize, rng: &mut Rng) -> Result<Self> {
        ensure!(features > 0 && hidden > 0 && classes > 0, "baseline dimensions must be positive");
        let mut params = ParamStore::new();
        let input = Dense::register(&mut params, "base.input", features, hidden, rng)?;
        let recur = Dense::register(&mut params, "base.recur", hidden, hidden, rng)?;
        let mix = Dense::register(&mut params, "base.mix", hidden, hidden, rng)?;
        let classifier = Dense::register(&mut params, "base.classifier", hidden, classes, rng)?;
        Ok(Self {
            params,
            input,
            recur,
            mix,
            classifier,
            hidden,
            features,
        })
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn cast<U: Real>(&self) -> FirstOrderBaseline<U> {
        FirstOrderBaseline {
            params: self.params.cast(),
            input: self.input,
            recur: self.recur,
            mix: self.mix,
            classifier: self.classifier,
            hidden: self.hidden,
            features: self.features,
        }
    }

    fn forward(&self, h_prev: &[T], x: &[T]) -> BaselineStep<T> {
        let p = &self.params;
        let mut r = self.recur.forward(p, h_prev);
        tanh_all(&mut r);
        let mut u = self.input.forward(p, x);
        u.iter_mut().zip(&r).for_each(|(a, b)| *a += *b);
        let mut h = self.mix.forward(p, &u);
        tanh_all(&mut h);
        let mut probs = self.classifier.forward(p, &h);
        softmax_in_place(&mut probs);
        BaselineStep {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            r,
            u,
            h,
            probs,
        }
    }

    /// One step from `h_prev` (`None` before the first frame).
    pub fn step(&self, h_prev: Option<&[T]>, x: &[T]) -> Result<(Prediction<T>, Vec<T>)> {
        ensure!(x.len() == self.features, "frame has {} features, baseline expects {}", x.len(), self.features);
        let zero = vec![T::ZERO; self.hidden];
        let s = self.forward(h_prev.unwrap_or(&zero), x);
        crate::numerics::check_finite("baseline prediction", &s.probs)?;
        Ok((Prediction::new(s.probs)?, s.h))
    }

    pub fn unroll(&self, frames: &[Vec<T>]) -> Result<BaselineUnroll<T>> {
        let mut h = vec![T::ZERO; self.hidden];
        let mut steps = Vec::with_capacity(frames.len());
        for x in frames {
            ensure!(x.len() == self.features, "frame has {} features, baseline expects {}", x.len(), self.features);
            let s = self.forward(&h, x);
            crate::numerics::check_finite("baseline prediction", &s.probs)?;
            h = s.h.clone();
            steps.push(s);
        }
        Ok(BaselineUnroll { steps })
    }

    /// BPTT given `dprobs[t] = ∂loss/∂ŷ_t`.
    pub fn backward(&self, unroll: &BaselineUnroll<T>, dprobs: &[Vec<T>], grads: &mut GradBuffer<T>) -> Result<()> {
        ensure!(dprobs.len() == unroll.steps.len(), "need one loss gradient per step");
        let p = &self.params;
        let d = self.hidden;
        let mut dh_next = vec![T::ZERO; d];
        for (s, dp) in unroll.steps.iter().zip(dprobs).rev() {
            let mut dlogits = vec![T::ZERO; s.probs.len()];
            softmax_backward(&s.probs, dp, &mut dlogits);
            let mut dh = std::mem::replace(&mut dh_next, vec![T::ZERO; d]);
            self.classifier.backward(p, &s.h, &dlogits, Some(&mut dh), grads);
            let dpre: Vec<T> = dh.iter().zip(&s.h).map(|(g, h)| *g * (T::ONE - *h * *h)).collect();
            let mut du = vec![T::ZERO; d];
            self.mix.backward(p, &s.u, &dpre, Some(&mut du), grads);
            self.input.backward(p, &s.x, &du, None, grads);
            let dr: Vec<T> = du.iter().zip(&s.r).map(|(g, r)| *g * (T::ONE - *r * *r)).collect();
            self.recur.backward(p, &s.h_prev, &dr, Some(&mut dh_next), grads);
        }
        Ok(())
    }
}
