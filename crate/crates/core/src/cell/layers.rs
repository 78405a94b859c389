//! Parameterized layers of the cell, each with a cached forward pass and a
//! hand-derived backward pass.

use super::{CellConfig, GateMode, QueryMode};
use crate::error::Result;
use crate::numerics::ops::{
    affine_backward, affine_into, axpy, dot, gelu, gelu_grad, layer_norm_backward, layer_norm_into,
    relu_backward, relu_in_place, sigmoid, softmax_backward, softmax_in_place, NormCache,
};
use crate::numerics::{GradBuffer, ParamId, ParamKind, ParamStore, Real, Rng, Tensor};

/// Fully connected layer `y = xᵀW + b` backed by two store entries.
#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    /// Weights ~ U(-1/√fan_in, 1/√fan_in), bias zero.
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let bound = 1.0 / (inputs as f64).sqrt();
        let w: Vec<T> = (0..inputs * outputs)
            .map(|_| T::from_f64(rng.uniform_range(-bound, bound)))
            .collect();
        let weight = store.insert(
            &format!("{name}.weight"),
            ParamKind::Weight,
            Tensor::matrix(inputs, outputs, w)?,
        )?;
        let bias = store.insert(&format!("{name}.bias"), ParamKind::Bias, Tensor::zeros(&[outputs]))?;
        Ok(Self {
            weight,
            bias,
            inputs,
            outputs,
        })
    }

    /// Looks up an existing layer and checks its shape.
    pub fn lookup<T: Real>(store: &ParamStore<T>, name: &str, inputs: usize, outputs: usize) -> Result<Self> {
        let weight = store.require(&format!("{name}.weight"))?;
        let bias = store.require(&format!("{name}.bias"))?;
        let ws = store.param(weight).value.shape();
        let bs = store.param(bias).value.shape();
        if ws != [inputs, outputs] || bs != [outputs] {
            return Err(crate::Error::Config(format!(
                "{name}: expected weight [{inputs}, {outputs}] and bias [{outputs}], found {ws:?} and {bs:?}"
            )));
        }
        Ok(Self {
            weight,
            bias,
            inputs,
            outputs,
        })
    }

    #[inline]
    pub fn forward<T: Real>(&self, p: &ParamStore<T>, x: &[T]) -> Vec<T> {
        let mut out = vec![T::ZERO; self.outputs];
        affine_into(x, p.value(self.weight), p.value(self.bias), &mut out);
        out
    }

    #[inline]
    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        x: &[T],
        dy: &[T],
        dx: Option<&mut [T]>,
        grads: &mut GradBuffer<T>,
    ) {
        let (dw, db) = grads.pair_mut(self.weight, self.bias);
        affine_backward(x, p.value(self.weight), dy, dx, dw, db);
    }
}

/// Locations of every learnable tensor of the cell.
#[derive(Clone, Copy, Debug)]
pub struct LayerIds {
    pub enc_x: Dense,
    /// Query encoder: from C (prediction query) or F (frame query).
    pub enc_q: Dense,
    pub enc_k: Dense,
    pub attn_q: Dense,
    pub attn_k: Dense,
    pub attn_v: Dense,
    pub attn_o: Dense,
    pub norm_gain: ParamId,
    pub norm_bias: ParamId,
    pub ffn_up: Dense,
    pub ffn_down: Dense,
    pub gate_down: Dense,
    pub gate_up: Dense,
    pub classifier: Dense,
}

pub(crate) const QUERY_PREDICTION: &str = "enc_q";
pub(crate) const QUERY_FRAME: &str = "enc_q_frame";

fn query_layer(cfg: &CellConfig) -> (&'static str, usize) {
    match cfg.query {
        QueryMode::Prediction => (QUERY_PREDICTION, cfg.classes),
        QueryMode::Frame => (QUERY_FRAME, cfg.features),
    }
}

impl LayerIds {
    /// Registers freshly initialized parameters in a fixed order.
    pub fn init<T: Real>(cfg: &CellConfig, store: &mut ParamStore<T>, rng: &mut Rng) -> Result<Self> {
        let (d, kd, c, f) = (cfg.hidden, cfg.key_dim(), cfg.classes, cfg.features);
        let (q_name, q_in) = query_layer(cfg);
        let enc_x = Dense::register(store, "enc_x", f, d, rng)?;
        let enc_q = Dense::register(store, q_name, q_in, kd, rng)?;
        let enc_k = Dense::register(store, "enc_k", c, kd, rng)?;
        let attn_q = Dense::register(store, "attn.q", kd, kd, rng)?;
        let attn_k = Dense::register(store, "attn.k", kd, kd, rng)?;
        let attn_v = Dense::register(store, "attn.v", d, d, rng)?;
        let attn_o = Dense::register(store, "attn.o", d, d, rng)?;
        let norm_gain = store.insert(
            "ffn.norm.gain",
            ParamKind::NormGain,
            Tensor::vector(vec![T::ONE; d]),
        )?;
        let norm_bias = store.insert("ffn.norm.bias", ParamKind::NormBias, Tensor::zeros(&[d]))?;
        let ffn_up = Dense::register(store, "ffn.up", d, 4 * d, rng)?;
        let ffn_down = Dense::register(store, "ffn.down", 4 * d, d, rng)?;
        let gate_down = Dense::register(store, "gate.down", 2 * d, d / 2, rng)?;
        let gate_up = Dense::register(store, "gate.up", d / 2, cfg.gate_width(), rng)?;
        let classifier = Dense::register(store, "classifier", d, c, rng)?;
        Ok(Self {
            enc_x,
            enc_q,
            enc_k,
            attn_q,
            attn_k,
            attn_v,
            attn_o,
            norm_gain,
            norm_bias,
            ffn_up,
            ffn_down,
            gate_down,
            gate_up,
            classifier,
        })
    }

    /// Resolves and shape-checks the layout inside a loaded store.
    pub fn resolve<T: Real>(cfg: &CellConfig, store: &ParamStore<T>) -> Result<Self> {
        let (d, kd, c, f) = (cfg.hidden, cfg.key_dim(), cfg.classes, cfg.features);
        let (q_name, q_in) = query_layer(cfg);
        let vec_param = |name: &str| -> Result<ParamId> {
            let id = store.require(name)?;
            if store.param(id).value.shape() != [d] {
                return Err(crate::Error::Config(format!("{name}: expected shape [{d}]")));
            }
            Ok(id)
        };
        let ids = Self {
            enc_x: Dense::lookup(store, "enc_x", f, d)?,
            enc_q: Dense::lookup(store, q_name, q_in, kd)?,
            enc_k: Dense::lookup(store, "enc_k", c, kd)?,
            attn_q: Dense::lookup(store, "attn.q", kd, kd)?,
            attn_k: Dense::lookup(store, "attn.k", kd, kd)?,
            attn_v: Dense::lookup(store, "attn.v", d, d)?,
            attn_o: Dense::lookup(store, "attn.o", d, d)?,
            norm_gain: vec_param("ffn.norm.gain")?,
            norm_bias: vec_param("ffn.norm.bias")?,
            ffn_up: Dense::lookup(store, "ffn.up", d, 4 * d)?,
            ffn_down: Dense::lookup(store, "ffn.down", 4 * d, d)?,
            gate_down: Dense::lookup(store, "gate.down", 2 * d, d / 2)?,
            gate_up: Dense::lookup(store, "gate.up", d / 2, cfg.gate_width())?,
            classifier: Dense::lookup(store, "classifier", d, c)?,
        };
        if store.len() != 26 {
            return Err(crate::Error::Config(format!(
                "expected 26 parameter tensors, found {}",
                store.len()
            )));
        }
        Ok(ids)
    }
}

/// `relu(dense(x))`
pub(crate) fn encode<T: Real>(layer: &Dense, p: &ParamStore<T>, x: &[T]) -> Vec<T> {
    let mut y = layer.forward(p, x);
    relu_in_place(&mut y);
    y
}

/// Backward of [`encode`]; `dy` is consumed as scratch.
pub(crate) fn encode_backward<T: Real>(
    layer: &Dense,
    p: &ParamStore<T>,
    x: &[T],
    y: &[T],
    dy: &mut [T],
    dx: Option<&mut [T]>,
    grads: &mut GradBuffer<T>,
) {
    relu_backward(y, dy);
    layer.backward(p, x, dy, dx, grads);
}

#[derive(Clone, Debug)]
pub struct MhaCache<T> {
    /// Projected query, all heads (kd).
    pub qp: Vec<T>,
    /// Projected keys, L × kd.
    pub kp: Vec<T>,
    /// Attention weights, heads × L.
    pub weights: Vec<T>,
    /// Per-head weighted sums of raw values, heads × d.
    pub mixed: Vec<T>,
    /// Concatenated head outputs before the output projection (d).
    pub heads_out: Vec<T>,
}

/// Multi-head attention of one query over `L` key/value rows.
///
/// Per head `h`: weights = softmax((P_Q q)·(P_K k_i) / √head_dim) and
/// out_h = Σ_i w_i P_V v_i. Because P_V is affine and the weights sum to one,
/// out_h is computed as P_V (Σ_i w_i v_i), which needs one projection per
/// head instead of one per memory row.
pub fn mha_forward<T: Real>(
    cfg: &CellConfig,
    ids: &LayerIds,
    p: &ParamStore<T>,
    q: &[T],
    keys: &[&[T]],
    values: &[&[T]],
) -> (Vec<T>, MhaCache<T>) {
    let (d, kd, heads) = (cfg.hidden, cfg.key_dim(), cfg.heads);
    let (hq, hv) = (cfg.qk_head_dim(), cfg.v_head_dim());
    let l = keys.len();
    let scale = T::ONE / T::from_usize(hq).sqrt();

    let qp = ids.attn_q.forward(p, q);
    let mut kp = vec![T::ZERO; l * kd];
    for (i, k) in keys.iter().enumerate() {
        affine_into(k, p.value(ids.attn_k.weight), p.value(ids.attn_k.bias), &mut kp[i * kd..(i + 1) * kd]);
    }

    let mut weights = vec![T::ZERO; heads * l];
    for h in 0..heads {
        let qh = &qp[h * hq..(h + 1) * hq];
        let row = &mut weights[h * l..(h + 1) * l];
        for i in 0..l {
            row[i] = dot(qh, &kp[i * kd + h * hq..i * kd + (h + 1) * hq]) * scale;
        }
        softmax_in_place(row);
    }

    let mut mixed = vec![T::ZERO; heads * d];
    for h in 0..heads {
        let zh = &mut mixed[h * d..(h + 1) * d];
        for i in 0..l {
            axpy(weights[h * l + i], values[i], zh);
        }
    }

    // per-head value projection: columns h*hv..(h+1)*hv of attn.v
    let wv = p.value(ids.attn_v.weight);
    let bv = p.value(ids.attn_v.bias);
    let mut heads_out = bv.to_vec();
    for h in 0..heads {
        let zh = &mixed[h * d..(h + 1) * d];
        let out = &mut heads_out[h * hv..(h + 1) * hv];
        for (j, zj) in zh.iter().enumerate() {
            if *zj == T::ZERO {
                continue;
            }
            axpy(*zj, &wv[j * d + h * hv..j * d + (h + 1) * hv], out);
        }
    }

    let out = ids.attn_o.forward(p, &heads_out);
    (
        out,
        MhaCache {
            qp,
            kp,
            weights,
            mixed,
            heads_out,
        },
    )
}

/// Gradients of [`mha_forward`]. Adds into `dq` (kd), `dkeys` (L × kd) and
/// `dvalues` (L × d).
#[allow(clippy::too_many_arguments)]
pub fn mha_backward<T: Real>(
    cfg: &CellConfig,
    ids: &LayerIds,
    p: &ParamStore<T>,
    cache: &MhaCache<T>,
    q: &[T],
    keys: &[&[T]],
    values: &[&[T]],
    dout: &[T],
    dq: &mut [T],
    dkeys: &mut [T],
    dvalues: &mut [T],
    grads: &mut GradBuffer<T>,
) {
    let (d, kd, heads) = (cfg.hidden, cfg.key_dim(), cfg.heads);
    let (hq, hv) = (cfg.qk_head_dim(), cfg.v_head_dim());
    let l = keys.len();
    let scale = T::ONE / T::from_usize(hq).sqrt();

    let mut dheads = vec![T::ZERO; d];
    ids.attn_o.backward(p, &cache.heads_out, dout, Some(&mut dheads), grads);

    // value projection
    let wv = p.value(ids.attn_v.weight);
    let mut dmixed = vec![T::ZERO; heads * d];
    {
        let (dwv, dbv) = grads.pair_mut(ids.attn_v.weight, ids.attn_v.bias);
        for (db, g) in dbv.iter_mut().zip(&dheads) {
            *db += *g;
        }
        for h in 0..heads {
            let dh = &dheads[h * hv..(h + 1) * hv];
            let zh = &cache.mixed[h * d..(h + 1) * d];
            let dzh = &mut dmixed[h * d..(h + 1) * d];
            for j in 0..d {
                let wrow = &wv[j * d + h * hv..j * d + (h + 1) * hv];
                dzh[j] = dot(wrow, dh);
                if zh[j] != T::ZERO {
                    axpy(zh[j], dh, &mut dwv[j * d + h * hv..j * d + (h + 1) * hv]);
                }
            }
        }
    }

    let mut dqp = vec![T::ZERO; kd];
    let mut dkp = vec![T::ZERO; l * kd];
    let mut dw = vec![T::ZERO; l];
    let mut ds = vec![T::ZERO; l];
    for h in 0..heads {
        let w = &cache.weights[h * l..(h + 1) * l];
        let dzh = &dmixed[h * d..(h + 1) * d];
        for i in 0..l {
            dw[i] = dot(dzh, values[i]);
            axpy(w[i], dzh, &mut dvalues[i * d..(i + 1) * d]);
        }
        softmax_backward(w, &dw, &mut ds);
        let qh = &cache.qp[h * hq..(h + 1) * hq];
        for i in 0..l {
            let g = ds[i] * scale;
            let off = i * kd + h * hq;
            axpy(g, &cache.kp[off..off + hq], &mut dqp[h * hq..(h + 1) * hq]);
            axpy(g, qh, &mut dkp[off..off + hq]);
        }
    }

    ids.attn_q.backward(p, q, &dqp, Some(dq), grads);
    for i in 0..l {
        ids.attn_k.backward(
            p,
            keys[i],
            &dkp[i * kd..(i + 1) * kd],
            Some(&mut dkeys[i * kd..(i + 1) * kd]),
            grads,
        );
    }
}

#[derive(Clone, Debug)]
pub struct FfnCache<T> {
    pub norm: NormCache<T>,
    /// Layer-norm output fed to the expansion layer (d).
    pub normed: Vec<T>,
    /// Pre-activation of the bottleneck (4d).
    pub pre: Vec<T>,
    /// Activation after GELU and dropout (4d).
    pub act: Vec<T>,
    pub mask: Option<Vec<T>>,
}

/// `down(dropout(gelu(up(norm(x))))) + x`
pub fn ffn_forward<T: Real>(
    cfg: &CellConfig,
    ids: &LayerIds,
    p: &ParamStore<T>,
    x: &[T],
    mask: Option<Vec<T>>,
) -> (Vec<T>, FfnCache<T>) {
    let mut normed = vec![T::ZERO; cfg.hidden];
    let norm = layer_norm_into(
        x,
        p.value(ids.norm_gain),
        p.value(ids.norm_bias),
        T::from_f64(cfg.norm_eps),
        &mut normed,
    );
    let pre = ids.ffn_up.forward(p, &normed);
    let mut act: Vec<T> = pre.iter().map(|v| gelu(*v)).collect();
    if let Some(m) = &mask {
        act.iter_mut().zip(m).for_each(|(a, k)| *a *= *k);
    }
    let mut out = ids.ffn_down.forward(p, &act);
    out.iter_mut().zip(x).for_each(|(o, xi)| *o += *xi);
    (
        out,
        FfnCache {
            norm,
            normed,
            pre,
            act,
            mask,
        },
    )
}

/// Adds ∂/∂x into `dx`.
pub fn ffn_backward<T: Real>(
    ids: &LayerIds,
    p: &ParamStore<T>,
    cache: &FfnCache<T>,
    dout: &[T],
    dx: &mut [T],
    grads: &mut GradBuffer<T>,
) {
    let mut dact = vec![T::ZERO; cache.act.len()];
    ids.ffn_down.backward(p, &cache.act, dout, Some(&mut dact), grads);
    if let Some(m) = &cache.mask {
        dact.iter_mut().zip(m).for_each(|(g, k)| *g *= *k);
    }
    for (g, z) in dact.iter_mut().zip(&cache.pre) {
        *g *= gelu_grad(*z);
    }
    let mut dnormed = vec![T::ZERO; cache.normed.len()];
    ids.ffn_up.backward(p, &cache.normed, &dact, Some(&mut dnormed), grads);
    let (dgain, dbias) = grads.pair_mut(ids.norm_gain, ids.norm_bias);
    layer_norm_backward(&cache.norm, p.value(ids.norm_gain), &dnormed, dx, dgain, dbias);
    for (g, d) in dx.iter_mut().zip(dout) {
        *g += *d;
    }
}

#[derive(Clone, Debug)]
pub struct GateCache<T> {
    /// `[o; e]` (2d).
    pub input: Vec<T>,
    /// ReLU output of the down projection (d/2).
    pub hidden: Vec<T>,
    /// Gate values (d, or 1 for a scalar gate).
    pub gate: Vec<T>,
}

/// `sigmoid(up(relu(down([o; e]))))`
pub fn gate_forward<T: Real>(ids: &LayerIds, p: &ParamStore<T>, o: &[T], e: &[T]) -> GateCache<T> {
    let mut input = Vec::with_capacity(o.len() + e.len());
    input.extend_from_slice(o);
    input.extend_from_slice(e);
    let hidden = encode(&ids.gate_down, p, &input);
    let mut gate = ids.gate_up.forward(p, &hidden);
    gate.iter_mut().for_each(|v| *v = sigmoid(*v));
    GateCache { input, hidden, gate }
}

/// `dgate` is ∂loss/∂g (gate width). Adds into `d_o` and `d_e`.
pub fn gate_backward<T: Real>(
    ids: &LayerIds,
    p: &ParamStore<T>,
    cache: &GateCache<T>,
    dgate: &[T],
    d_o: &mut [T],
    d_e: &mut [T],
    grads: &mut GradBuffer<T>,
) {
    let dpre: Vec<T> = dgate
        .iter()
        .zip(&cache.gate)
        .map(|(dg, g)| *dg * *g * (T::ONE - *g))
        .collect();
    let mut dhidden = vec![T::ZERO; cache.hidden.len()];
    ids.gate_up.backward(p, &cache.hidden, &dpre, Some(&mut dhidden), grads);
    let mut dinput = vec![T::ZERO; cache.input.len()];
    encode_backward(&ids.gate_down, p, &cache.input, &cache.hidden, &mut dhidden, Some(&mut dinput), grads);
    let d = d_o.len();
    for i in 0..d {
        d_o[i] += dinput[i];
        d_e[i] += dinput[d + i];
    }
}

/// `h = g ⊙ o + (1 - g) ⊙ e`, broadcasting a scalar gate.
pub fn mix<T: Real>(gate: &[T], o: &[T], e: &[T]) -> Vec<T> {
    let scalar = gate.len() == 1;
    (0..o.len())
        .map(|i| {
            let g = if scalar { gate[0] } else { gate[i] };
            g * o[i] + (T::ONE - g) * e[i]
        })
        .collect()
}

/// Backward of [`mix`]: returns (do, de, dg).
pub fn mix_backward<T: Real>(gate: &[T], o: &[T], e: &[T], dh: &[T], mode: GateMode) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = o.len();
    let mut d_o = vec![T::ZERO; n];
    let mut d_e = vec![T::ZERO; n];
    let mut dg = vec![T::ZERO; gate.len()];
    for i in 0..n {
        let (g, gi) = match mode {
            GateMode::Elementwise => (gate[i], i),
            GateMode::Scalar => (gate[0], 0),
        };
        d_o[i] = g * dh[i];
        d_e[i] = (T::ONE - g) * dh[i];
        dg[gi] += (o[i] - e[i]) * dh[i];
    }
    (d_o, d_e, dg)
}
