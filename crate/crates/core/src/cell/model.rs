use super::layers::{
    encode, encode_backward, ffn_backward, ffn_forward, gate_backward, gate_forward, mha_backward,
    mha_forward, mix, mix_backward, FfnCache, GateCache, LayerIds, MhaCache,
};
use super::memory::{IndexedMemory, MemoryEntry};
use super::{CellConfig, QueryMode};
use crate::error::{ensure, Error, Result};
use crate::numerics::ops::{dropout_mask, softmax_backward, softmax_in_place};
use crate::numerics::{check_finite, GradBuffer, ParamStore, Real, Rng, Tensor};

/// A probability vector over the action classes.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<T>(Vec<T>);

impl<T: Real> Prediction<T> {
    /// Validates non-negativity and unit sum (within 1e-5).
    pub fn new(probs: Vec<T>) -> Result<Self> {
        ensure!(!probs.is_empty(), "prediction over zero classes");
        ensure!(
            probs.iter().all(|p| p.is_finite() && *p >= T::ZERO),
            "prediction has negative or non-finite entries"
        );
        let sum: f64 = probs.iter().map(|p| p.to_f64()).sum();
        ensure!((sum - 1.0).abs() <= 1e-5, "prediction sums to {sum}, not 1");
        Ok(Self(probs))
    }

    pub fn uniform(classes: usize) -> Self {
        Self(vec![T::ONE / T::from_usize(classes); classes])
    }

    pub fn probs(&self) -> &[T] {
        &self.0
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    /// Class ids of the `k` largest probabilities, best first; ties go to
    /// the lower class id.
    pub fn top_k(&self, k: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..self.0.len()).collect();
        ids.sort_by(|&a, &b| {
            self.0[b]
                .partial_cmp(&self.0[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        ids.truncate(k);
        ids
    }

    pub fn argmax(&self) -> usize {
        self.top_k(1)[0]
    }
}

/// Recurrent state of one stream.
#[derive(Clone, Debug)]
pub struct IamState<T> {
    pub memory: IndexedMemory<T>,
    pub last_prediction: Option<Prediction<T>>,
    pub step: usize,
}

impl<T: Real> IamState<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            memory: IndexedMemory::new(capacity),
            last_prediction: None,
            step: 0,
        }
    }

    /// Bytes held by the memory's keys and values.
    pub fn resident_bytes(&self) -> usize {
        self.memory.resident_bytes()
    }
}

/// Per-step quantities exposed for inspection.
#[derive(Clone, Debug)]
pub struct StepTrace<T> {
    /// heads × L attention weights, columns oldest → newest. `None` at t = 0.
    pub attention: Option<Tensor<T>>,
    pub gate: Vec<T>,
    pub attended: Vec<T>,
    pub encoded: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct StepOutput<T> {
    pub prediction: Prediction<T>,
    pub hidden: Vec<T>,
    pub trace: StepTrace<T>,
}

/// How memory keys are formed during a training unroll.
#[derive(Clone, Copy, Debug)]
pub enum KeySource<'a, T> {
    /// `E_K(sg(ŷ_t))`: E_K is trained, ŷ_t receives no gradient via keys.
    Detached,
    /// `E_K(ŷ_t)` with gradient flowing back into ŷ_t.
    Attached,
    /// `E_K(c_t)` for recorded constant vectors `c_t`.
    Recorded(&'a [Vec<T>]),
}

#[derive(Clone, Debug)]
pub(crate) struct AttnCache<T> {
    query_in: Vec<T>,
    query: Vec<T>,
    /// Step indices of the memory slots read, oldest first.
    slots: Vec<usize>,
    mha: MhaCache<T>,
    mha_out_mask: Option<Vec<T>>,
    ffn: FfnCache<T>,
}

#[derive(Clone, Debug)]
pub(crate) struct StepCache<T> {
    x: Vec<T>,
    e: Vec<T>,
    attn: Option<AttnCache<T>>,
    o: Vec<T>,
    gate: GateCache<T>,
    h: Vec<T>,
    probs: Vec<T>,
    key_source: Vec<T>,
    key: Vec<T>,
}

/// Forward record of an unrolled window, consumed by the backward pass.
#[derive(Clone, Debug)]
pub struct Unroll<T> {
    pub(crate) steps: Vec<StepCache<T>>,
}

impl<T: Real> Unroll<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn prediction(&self, t: usize) -> &[T] {
        &self.steps[t].probs
    }

    /// Memory key written at step `t`.
    pub fn key(&self, t: usize) -> &[T] {
        &self.steps[t].key
    }

    pub fn hidden(&self, t: usize) -> &[T] {
        &self.steps[t].h
    }

    /// On/off state of every ReLU unit in the window, in a fixed order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for s in &self.steps {
            let query = s.attn.as_ref().map(|a| a.query.as_slice()).unwrap_or(&[]);
            for v in [s.e.as_slice(), query, &s.key, &s.gate.hidden] {
                out.extend(v.iter().map(|x| *x > T::ZERO));
            }
        }
        out
    }

    pub fn predictions(&self) -> Vec<Vec<T>> {
        self.steps.iter().map(|s| s.probs.clone()).collect()
    }
}

/// The inductive attention cell: configuration plus parameters.
#[derive(Clone, Debug)]
pub struct IamModel<T> {
    config: CellConfig,
    params: ParamStore<T>,
    ids: LayerIds,
}

impl<T: Real> IamModel<T> {
    pub fn new(config: CellConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let ids = LayerIds::init(&config, &mut params, rng)?;
        Ok(Self { config, params, ids })
    }

    /// Wraps a loaded parameter store after checking every shape.
    pub fn from_parts(config: CellConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let ids = LayerIds::resolve(&config, &params)?;
        Ok(Self { config, params, ids })
    }

    pub fn config(&self) -> &CellConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn layers(&self) -> &LayerIds {
        &self.ids
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    pub fn cast<U: Real>(&self) -> IamModel<U> {
        IamModel {
            config: self.config.clone(),
            params: self.params.cast(),
            ids: self.ids,
        }
    }

    pub fn new_state(&self) -> IamState<T> {
        IamState::new(self.config.memory)
    }

    /// Multi-head attention of `query` (d/4) over `keys` (L × d/4) and
    /// `values` (L × d). Returns the d-dim output and heads × L weights.
    pub fn mha(&self, query: &[T], keys: &Tensor<T>, values: &Tensor<T>) -> Result<(Vec<T>, Tensor<T>)> {
        let (d, kd) = (self.config.hidden, self.config.key_dim());
        let l = keys.rows();
        ensure!(l >= 1, "attention over an empty memory");
        ensure!(query.len() == kd, "query has {} elements, expected {kd}", query.len());
        ensure!(
            keys.rank() == 2 && keys.cols() == kd,
            "keys must be L × {kd}, got {:?}",
            keys.shape()
        );
        ensure!(
            values.rank() == 2 && values.cols() == d && values.rows() == l,
            "values must be {l} × {d}, got {:?}",
            values.shape()
        );
        let k: Vec<&[T]> = (0..l).map(|i| keys.row(i)).collect();
        let v: Vec<&[T]> = (0..l).map(|i| values.row(i)).collect();
        let (out, cache) = mha_forward(&self.config, &self.ids, &self.params, query, &k, &v);
        Ok((out, Tensor::matrix(self.config.heads, l, cache.weights)?))
    }

    /// The feed-forward block with residual connection.
    pub fn ffn(&self, x: &[T], rng: &mut Rng, training: bool) -> Result<Vec<T>> {
        ensure!(x.len() == self.config.hidden, "ffn input must have d elements");
        let mask = self.dropout_mask(4 * self.config.hidden, rng, training);
        Ok(ffn_forward(&self.config, &self.ids, &self.params, x, mask).0)
    }

    /// Inference-mode inductive attention: FFN(MHA(E_Q(query_input), keys, values)).
    ///
    /// `query_input` is the previous prediction (prediction query) or the
    /// current frame (frame query).
    pub fn inductive_attention(&self, query_input: &[T], memory: &IndexedMemory<T>) -> Result<(Vec<T>, Tensor<T>)> {
        ensure!(!memory.is_empty(), "inductive attention over an empty memory");
        ensure!(
            query_input.len() == self.query_input_dim(),
            "query input has {} elements, expected {}",
            query_input.len(),
            self.query_input_dim()
        );
        let query = encode(&self.ids.enc_q, &self.params, query_input);
        let keys: Vec<&[T]> = memory.iter().map(|e| e.key.as_slice()).collect();
        let values: Vec<&[T]> = memory.iter().map(|e| e.value.as_slice()).collect();
        let (mha_out, cache) = mha_forward(&self.config, &self.ids, &self.params, &query, &keys, &values);
        let (o, _) = ffn_forward(&self.config, &self.ids, &self.params, &mha_out, None);
        Ok((o, Tensor::matrix(self.config.heads, memory.len(), cache.weights)?))
    }

    /// Fusion gate over `[o; e]`.
    pub fn gate(&self, attended: &[T], encoded: &[T]) -> Result<Vec<T>> {
        let d = self.config.hidden;
        ensure!(attended.len() == d && encoded.len() == d, "gate inputs must have d elements");
        Ok(gate_forward(&self.ids, &self.params, attended, encoded).gate)
    }

    fn query_input_dim(&self) -> usize {
        match self.config.query {
            QueryMode::Prediction => self.config.classes,
            QueryMode::Frame => self.config.features,
        }
    }

    fn dropout_mask(&self, n: usize, rng: &mut Rng, training: bool) -> Option<Vec<T>> {
        (training && self.config.dropout > 0.0).then(|| dropout_mask(n, self.config.dropout, rng))
    }

    /// Advances `state` by one frame and returns the new prediction.
    pub fn step(&self, state: &mut IamState<T>, frame: &[T], rng: &mut Rng, training: bool) -> Result<StepOutput<T>> {
        let (out, _) = self.step_impl(state, frame, rng, training, None, false)?;
        Ok(out)
    }

    fn step_impl(
        &self,
        state: &mut IamState<T>,
        frame: &[T],
        rng: &mut Rng,
        training: bool,
        key_override: Option<&[T]>,
        record: bool,
    ) -> Result<(StepOutput<T>, Option<StepCache<T>>)> {
        let cfg = &self.config;
        let p = &self.params;
        let ids = &self.ids;
        ensure!(
            frame.len() == cfg.features,
            "frame has {} features, model expects {}",
            frame.len(),
            cfg.features
        );
        ensure!(
            state.last_prediction.is_none() == (state.step == 0) && state.memory.is_empty() == (state.step == 0),
            "inconsistent state at step {}",
            state.step
        );

        check_finite("input frame", frame)?;
        let e = encode(&ids.enc_x, p, frame);
        check_finite("frame encoding", &e)?;

        let mut attn_cache = None;
        let mut attention = None;
        let o = if state.step == 0 {
            vec![T::ZERO; cfg.hidden]
        } else {
            let query_in: Vec<T> = match cfg.query {
                QueryMode::Prediction => state
                    .last_prediction
                    .as_ref()
                    .map(|y| y.probs().to_vec())
                    .ok_or_else(|| Error::contract("missing previous prediction"))?,
                QueryMode::Frame => frame.to_vec(),
            };
            let query = encode(&ids.enc_q, p, &query_in);
            let keys: Vec<&[T]> = state.memory.iter().map(|m| m.key.as_slice()).collect();
            let values: Vec<&[T]> = state.memory.iter().map(|m| m.value.as_slice()).collect();
            let (mha_out, mha) = mha_forward(cfg, ids, p, &query, &keys, &values);
            check_finite("attention", &mha_out)?;
            let mha_out_mask = self.dropout_mask(cfg.hidden, rng, training);
            let mut ffn_in = mha_out;
            if let Some(m) = &mha_out_mask {
                ffn_in.iter_mut().zip(m).for_each(|(v, k)| *v *= *k);
            }
            let ffn_mask = self.dropout_mask(4 * cfg.hidden, rng, training);
            let (o, ffn) = ffn_forward(cfg, ids, p, &ffn_in, ffn_mask);
            check_finite("feed-forward", &o)?;
            attention = Some(Tensor::matrix(cfg.heads, state.memory.len(), mha.weights.clone())?);
            if record {
                attn_cache = Some(AttnCache {
                    query_in,
                    query,
                    slots: state.memory.iter().map(|m| m.step).collect(),
                    mha,
                    mha_out_mask,

                    ffn,
                });
            }
            o
        };

        let gate = gate_forward(ids, p, &o, &e);
        let h = mix(&gate.gate, &o, &e);
        check_finite("hidden state", &h)?;
        let mut probs = ids.classifier.forward(p, &h);
        softmax_in_place(&mut probs);
        check_finite("prediction", &probs)?;

        let key_source = match key_override {
            Some(k) => k.to_vec(),
            None => probs.clone(),
        };
        let key = encode(&ids.enc_k, p, &key_source);
        state.memory.push(MemoryEntry {
            key: key.clone(),
            value: h.clone(),
            step: state.step,
        });
        let prediction = Prediction(probs.clone());
        state.last_prediction = Some(prediction.clone());
        state.step += 1;

        let trace = StepTrace {
            attention,
            gate: gate.gate.clone(),
            attended: o.clone(),
            encoded: e.clone(),
        };
        let cache = record.then(|| StepCache {
            x: frame.to_vec(),
            e,
            attn: attn_cache,
            o,
            gate,
            h: h.clone(),
            probs,
            key_source,
            key,
        });
        Ok((
            StepOutput {
                prediction,
                hidden: h,
                trace,
            },
            cache,
        ))
    }

    /// Runs `frames` from an empty memory, recording everything the
    /// backward pass needs.
    pub fn unroll(&self, frames: &[Vec<T>], rng: &mut Rng, training: bool, keys: KeySource<'_, T>) -> Result<Unroll<T>> {
        if let KeySource::Recorded(rec) = keys {
            ensure!(
                rec.len() == frames.len(),
                "recorded keys cover {} steps, sequence has {}",
                rec.len(),
                frames.len()
            );
        }
        let mut state = self.new_state();
        let mut steps = Vec::with_capacity(frames.len());
        for (t, x) in frames.iter().enumerate() {
            let key_override = match keys {
                KeySource::Recorded(rec) => Some(rec[t].as_slice()),
                _ => None,
            };
            let (_, cache) = self.step_impl(&mut state, x, rng, training, key_override, true)?;
            steps.push(cache.expect("recording requested"));
        }
        Ok(Unroll { steps })
    }

    /// Backpropagates through an unrolled window.
    ///
    /// `dprobs[t]` is ∂loss/∂ŷ_t from the per-step losses. Gradients flow
    /// through stored memory values into earlier steps and through the
    /// attention query into ŷ_{t-1}; through keys they reach ŷ_t only for
    /// [`KeySource::Attached`].
    pub fn backward(&self, unroll: &Unroll<T>, dprobs: &[Vec<T>], keys: KeySource<'_, T>, grads: &mut GradBuffer<T>) -> Result<()> {
        let cfg = &self.config;
        let p = &self.params;
        let ids = &self.ids;
        let n = unroll.steps.len();
        ensure!(dprobs.len() == n, "need one loss gradient per step");
        let (d, kd, c) = (cfg.hidden, cfg.key_dim(), cfg.classes);

        let mut dh: Vec<Vec<T>> = vec![vec![T::ZERO; d]; n];
        let mut dkey: Vec<Vec<T>> = vec![vec![T::ZERO; kd]; n];
        let mut dprob: Vec<Vec<T>> = dprobs.to_vec();

        for t in (0..n).rev() {
            let s = &unroll.steps[t];

            // Key encoder: all readers of this key were later steps.
            let mut dk = std::mem::take(&mut dkey[t]);
            if let KeySource::Attached = keys {
                let mut dsrc = vec![T::ZERO; c];
                encode_backward(&ids.enc_k, p, &s.key_source, &s.key, &mut dk, Some(&mut dsrc), grads);
                for (a, b) in dprob[t].iter_mut().zip(&dsrc) {
                    *a += *b;
                }
            } else {
                encode_backward(&ids.enc_k, p, &s.key_source, &s.key, &mut dk, None, grads);
            }

            let mut dlogits = vec![T::ZERO; c];
            softmax_backward(&s.probs, &dprob[t], &mut dlogits);
            ids.classifier.backward(p, &s.h, &dlogits, Some(&mut dh[t]), grads);

            let (mut d_o, mut d_e, dg) = mix_backward(&s.gate.gate, &s.o, &s.e, &dh[t], cfg.gate);
            gate_backward(ids, p, &s.gate, &dg, &mut d_o, &mut d_e, grads);
            encode_backward(&ids.enc_x, p, &s.x, &s.e, &mut d_e, None, grads);

            let Some(a) = &s.attn else { continue };
            let mut dffn_in = vec![T::ZERO; d];
            ffn_backward(ids, p, &a.ffn, &d_o, &mut dffn_in, grads);
            if let Some(m) = &a.mha_out_mask {
                dffn_in.iter_mut().zip(m).for_each(|(g, k)| *g *= *k);
            }
            let l = a.slots.len();
            let keys_l: Vec<&[T]> = a.slots.iter().map(|&i| unroll.steps[i].key.as_slice()).collect();
            let values_l: Vec<&[T]> = a.slots.iter().map(|&i| unroll.steps[i].h.as_slice()).collect();
            let mut dquery = vec![T::ZERO; kd];
            let mut dkeys = vec![T::ZERO; l * kd];
            let mut dvalues = vec![T::ZERO; l * d];
            mha_backward(
                cfg, ids, p, &a.mha, &a.query, &keys_l, &values_l, &dffn_in, &mut dquery, &mut dkeys,
                &mut dvalues, grads,
            );
            for (j, &slot) in a.slots.iter().enumerate() {
                for (g, v) in dkey[slot].iter_mut().zip(&dkeys[j * kd..(j + 1) * kd]) {
                    *g += *v;
                }
                for (g, v) in dh[slot].iter_mut().zip(&dvalues[j * d..(j + 1) * d]) {
                    *g += *v;
                }
            }
            match cfg.query {
                QueryMode::Prediction => {
                    let mut dq_in = vec![T::ZERO; c];
                    encode_backward(&ids.enc_q, p, &a.query_in, &a.query, &mut dquery, Some(&mut dq_in), grads);
                    for (g, v) in dprob[t - 1].iter_mut().zip(&dq_in) {
                        *g += *v;
                    }
                }
                QueryMode::Frame => {
                    encode_backward(&ids.enc_q, p, &a.query_in, &a.query, &mut dquery, None, grads);
                }
            }
        }
        Ok(())
    }
}
