use iam_core::cell::layers::mix;
use iam_core::cell::{
    decode_checkpoint, encode_checkpoint, CellConfig, FirstOrderBaseline, GateMode, IamModel, IamState, IndexedMemory,
    KeySource, MemoryEntry, Prediction, QueryMode,
};
use iam_core::numerics::{grad_check, GradBuffer, GradCheckConfig, Objective, ParamStore, Rng, Tensor};
use iam_core::{Error, Result};

fn small() -> CellConfig {
    CellConfig::small(16, 5, 8, 4, 2)
}

fn random_frames(rng: &mut Rng, n: usize, f: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..f).map(|_| rng.normal()).collect()).collect()
}

fn param<'a>(store: &'a ParamStore<f64>, name: &str) -> &'a [f64] {
    store.get(name).unwrap_or_else(|| panic!("no parameter {name}")).value.data()
}

fn set_param(model: &mut IamModel<f64>, name: &str, f: impl Fn(usize) -> f64) {
    let id = model.params().require(name).unwrap();
    for (i, v) in model.params_mut().value_mut(id).iter_mut().enumerate() {
        *v = f(i);
    }
}

/// Schoolbook `xᵀW + b` for a row-major `[n, m]` weight.
fn affine(store: &ParamStore<f64>, layer: &str, x: &[f64]) -> Vec<f64> {
    let w = param(store, &format!("{layer}.weight"));
    let b = param(store, &format!("{layer}.bias"));
    let m = b.len();
    (0..m)
        .map(|j| b[j] + (0..x.len()).map(|i| x[i] * w[i * m + j]).sum::<f64>())
        .collect()
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Attention with every memory row projected separately.
fn mha_oracle(cfg: &CellConfig, p: &ParamStore<f64>, q: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (hq, hv) = (cfg.qk_head_dim(), cfg.v_head_dim());
    let qp = affine(p, "attn.q", q);
    let kp: Vec<Vec<f64>> = keys.iter().map(|k| affine(p, "attn.k", k)).collect();
    let vp: Vec<Vec<f64>> = values.iter().map(|v| affine(p, "attn.v", v)).collect();
    let mut concat = vec![0.0; cfg.hidden];
    let mut all_weights = Vec::new();
    for h in 0..cfg.heads {
        let scores: Vec<f64> = kp
            .iter()
            .map(|k| (0..hq).map(|j| qp[h * hq + j] * k[h * hq + j]).sum::<f64>() / (hq as f64).sqrt())
            .collect();
        let w = softmax(&scores);
        for (i, vi) in vp.iter().enumerate() {
            for j in 0..hv {
                concat[h * hv + j] += w[i] * vi[h * hv + j];
            }
        }
        all_weights.push(w);
    }
    (affine(p, "attn.o", &concat), all_weights)
}

fn ffn_oracle(cfg: &CellConfig, p: &ParamStore<f64>, x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let gain = param(p, "ffn.norm.gain");
    let bias = param(p, "ffn.norm.bias");
    let normed: Vec<f64> = (0..x.len())
        .map(|i| gain[i] * (x[i] - mean) / (var + cfg.norm_eps).sqrt() + bias[i])
        .collect();
    let act: Vec<f64> = affine(p, "ffn.up", &normed)
        .into_iter()
        .map(|v| 0.5 * v * (1.0 + libm::erf(v / 2f64.sqrt())))
        .collect();
    affine(p, "ffn.down", &act).iter().zip(x).map(|(a, b)| a + b).collect()
}

fn gate_oracle(p: &ParamStore<f64>, o: &[f64], e: &[f64]) -> Vec<f64> {
    let input: Vec<f64> = o.iter().chain(e).cloned().collect();
    let hidden = relu(affine(p, "gate.down", &input));
    affine(p, "gate.up", &hidden).into_iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect()
}

#[test]
fn zero_parameters_give_uniform_first_prediction() {
    let mut model = IamModel::<f64>::new(small(), &mut Rng::seed(1)).unwrap();
    for (_, p) in model.params_mut().iter_mut() {
        p.value.fill(0.0);
    }
    let mut state = model.new_state();
    let out = model.step(&mut state, &[0.3; 8], &mut Rng::seed(0), false).unwrap();
    assert!(out.trace.encoded.iter().all(|v| *v == 0.0));
    assert!(out.trace.attended.iter().all(|v| *v == 0.0));
    assert!(out.trace.gate.iter().all(|g| *g == 0.5));
    assert!(out.hidden.iter().all(|v| *v == 0.0));
    assert!(out.prediction.probs().iter().all(|p| (p - 0.2).abs() < 1e-15));
}

#[test]
fn memory_grows_then_stays_at_capacity() {
    let cfg = small();
    let model = IamModel::<f32>::new(cfg.clone(), &mut Rng::seed(2)).unwrap();
    let mut state = model.new_state();
    let mut rng = Rng::seed(3);
    for t in 0..cfg.memory + 3 {
        let x: Vec<f32> = (0..cfg.features).map(|_| rng.normal() as f32).collect();
        model.step(&mut state, &x, &mut rng, false).unwrap();
        assert_eq!(state.memory.len(), (t + 1).min(cfg.memory));
    }
    assert_eq!(state.memory.len(), cfg.memory);
    let steps: Vec<usize> = state.memory.iter().map(|e| e.step).collect();
    assert_eq!(steps, [3, 4, 5, 6]);
}

#[test]
fn equal_branches_pass_through_any_gate() {
    let mut rng = Rng::seed(4);
    let e: Vec<f64> = (0..16).map(|_| rng.normal()).collect();
    for _ in 0..20 {
        let g: Vec<f64> = (0..16).map(|_| rng.uniform()).collect();
        for (h, e) in mix(&g, &e, &e).iter().zip(&e) {
            assert!((h - e).abs() <= 4.0 * f64::EPSILON * e.abs());
        }
    }
}

#[test]
fn first_step_has_zero_attention_output() {
    let cfg = small();
    let model = IamModel::<f64>::new(cfg, &mut Rng::seed(5)).unwrap();
    let mut state = model.new_state();
    let x = random_frames(&mut Rng::seed(6), 1, 8).remove(0);
    let out = model.step(&mut state, &x, &mut Rng::seed(0), false).unwrap();
    assert!(out.trace.attention.is_none());
    assert!(out.trace.attended.iter().all(|v| *v == 0.0));
    for ((h, g), e) in out.hidden.iter().zip(&out.trace.gate).zip(&out.trace.encoded) {
        assert!((h - (1.0 - g) * e).abs() < 1e-6);
    }
}

#[test]
fn attention_rows_normalized_over_long_stream() {
    let mut cfg = CellConfig::small(64, 10, 16, 16, 4);
    cfg.dropout = 0.5;
    let model = IamModel::<f32>::new(cfg.clone(), &mut Rng::seed(7)).unwrap();
    let mut state = model.new_state();
    let mut rng = Rng::seed(8);
    for t in 0..100 {
        let x: Vec<f32> = (0..cfg.features).map(|_| rng.normal() as f32).collect();
        let out = model.step(&mut state, &x, &mut rng, t % 2 == 0).unwrap();
        if let Some(w) = out.trace.attention {
            assert_eq!(w.shape(), &[cfg.heads, t.min(cfg.memory)]);
            for h in 0..cfg.heads {
                let s: f32 = w.row(h).iter().sum();
                assert!((s - 1.0).abs() < 1e-5, "step {t} head {h} sums to {s}");
            }
        } else {
            assert_eq!(t, 0);
        }
    }
}

#[test]
fn saturated_gate_selects_a_branch() {
    let cfg = small();
    let base = IamModel::<f64>::new(cfg.clone(), &mut Rng::seed(9)).unwrap();
    let frames = random_frames(&mut Rng::seed(10), 3, cfg.features);
    for sign in [1.0, -1.0] {
        let mut prev = f64::INFINITY;
        for scale in [1.0, 4.0, 16.0, 64.0] {
            let mut model = base.clone();
            set_param(&mut model, "gate.up.weight", |_| 0.0);
            set_param(&mut model, "gate.up.bias", |_| sign * scale);
            let mut state = model.new_state();
            let mut out = None;
            for x in &frames {
                out = Some(model.step(&mut state, x, &mut Rng::seed(0), false).unwrap());
            }
            let out = out.unwrap();
            let target = if sign > 0.0 { &out.trace.attended } else { &out.trace.encoded };
            let gap = out.hidden.iter().zip(target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(gap <= prev, "distance to selected branch grew at scale {scale}");
            prev = gap;
        }
        assert!(prev < 1e-12, "residual {prev}");
    }
}

#[test]
fn swapping_identical_keys_permutes_weights_only() {
    let cfg = small();
    let model = IamModel::<f64>::new(cfg.clone(), &mut Rng::seed(11)).unwrap();
    let mut rng = Rng::seed(12);
    let key: Vec<f64> = (0..cfg.key_dim()).map(|_| rng.uniform()).collect();
    let mut memory = IndexedMemory::new(3);
    for step in 0..3 {
        let k = if step == 1 { (0..cfg.key_dim()).map(|_| rng.uniform()).collect() } else { key.clone() };
        let value = (0..cfg.hidden).map(|_| rng.normal()).collect();
        memory.push(MemoryEntry { key: k, value, step });
    }
    let query: Vec<f64> = softmax(&(0..cfg.classes).map(|_| rng.normal()).collect::<Vec<_>>());
    let (o1, w1) = model.inductive_attention(&query, &memory).unwrap();
    memory.swap(0, 2);
    let (o2, w2) = model.inductive_attention(&query, &memory).unwrap();
    for h in 0..cfg.heads {
        assert_eq!(w1.row(h)[0], w2.row(h)[2]);
        assert_eq!(w1.row(h)[2], w2.row(h)[0]);
        assert_eq!(w1.row(h)[1], w2.row(h)[1]);
    }
    for (a, b) in o1.iter().zip(&o2) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn mha_single_row_and_duplicate_keys() {
    let cfg = small();
    let model = IamModel::<f64>::new(cfg.clone(), &mut Rng::seed(13)).unwrap();
    let p = model.params();
    let mut rng = Rng::seed(14);
    let q: Vec<f64> = (0..cfg.key_dim()).map(|_| rng.normal()).collect();
    let k0: Vec<f64> = (0..cfg.key_dim()).map(|_| rng.normal()).collect();
    let v0: Vec<f64> = (0..cfg.hidden).map(|_| rng.normal()).collect();
    let v1: Vec<f64> = (0..cfg.hidden).map(|_| rng.normal()).collect();

    let keys = Tensor::matrix(1, cfg.key_dim(), k0.clone()).unwrap();
    let values = Tensor::matrix(1, cfg.hidden, v0.clone()).unwrap();
    let (out, w) = model.mha(&q, &keys, &values).unwrap();
    assert!(w.data().iter().all(|x| *x == 1.0));
    let want = affine(p, "attn.o", &affine(p, "attn.v", &v0));
    for (a, b) in out.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }

    let keys = Tensor::matrix(2, cfg.key_dim(), [k0.clone(), k0].concat()).unwrap();
    let values = Tensor::matrix(2, cfg.hidden, [v0, v1].concat()).unwrap();
    let (_, w) = model.mha(&q, &keys, &values).unwrap();
    assert!(w.data().iter().all(|x| *x == 0.5));

    let empty = Tensor::<f64>::zeros(&[0, cfg.key_dim()]);
    let none = Tensor::<f64>::zeros(&[0, cfg.hidden]);
    assert!(matches!(model.mha(&q, &empty, &none), Err(Error::Contract(_))));
}

#[test]
fn mha_matches_direct_per_row_projection() {
    let cfg = CellConfig::small(32, 6, 8, 4, 4);
    let model = IamModel::<f64>::new(cfg.clone(), &mut Rng::seed(15)).unwrap();
    let mut rng = Rng::seed(16);
    let q: Vec<f64> = (0..cfg.key_dim()).map(|_| rng.normal()).collect();
    let keys: Vec<Vec<f64>> = (0..4).map(|_| (0..cfg.key_dim()).map(|_| 2.0 * rng.normal()).collect()).collect();
    let values: Vec<Vec<f64>> = (0..4).map(|_| (0..cfg.hidden).map(|_| rng.normal()).collect()).collect();
    let (out, w) = model
        .mha(
            &q,
            &Tensor::matrix(4, cfg.key_dim(), keys.concat()).unwrap(),
            &Tensor::matrix(4, cfg.hidden, values.concat()).unwrap(),
        )
        .unwrap();
    let (want, want_w) = mha_oracle(&cfg, model.params(), &q, &keys, &values);
    for (a, b) in out.iter().zip(&want) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
    for h in 0..cfg.heads {
        for i in 0..4 {
            assert!((w.row(h)[i] - want_w[h][i]).abs() < 1e-12);
        }
    }
}

#[test]
fn ffn_residual_and_branch() {
    let cfg = small();
    let mut model = IamModel::<f64>::new(cfg.clone(), &mut Rng::seed(17)).unwrap();
    let mut rng = Rng::seed(18);
    let x: Vec<f64> = (0..cfg.hidden).map(|_| rng.normal()).collect();
    let y = model.ffn(&x, &mut rng, false).unwrap();
    assert_eq!(y.len(), cfg.hidden);
    let want = ffn_oracle(&cfg, model.params(), &x);
    for i in 0..cfg.hidden {
        assert!(((y[i] - x[i]) - (want[i] - x[i])).abs() < 1e-10);
    }
    for name in ["ffn.up.weight", "ffn.up.bias", "ffn.down.weight", "ffn.down.bias"] {
        set_param(&mut model, name, |_| 0.0);
    }
    assert_eq!(model.ffn(&x, &mut rng, false).unwrap(), x);
}

#[test]
fn gate_formula_and_range() {
    let cfg = small();
    let mut model = IamModel::<f64>::new(cfg.clone(), &mut Rng::seed(19)).unwrap();
    let mut rng = Rng::seed(20);
    for _ in 0..20 {
        let o: Vec<f64> = (0..cfg.hidden).map(|_| 5.0 * rng.normal()).collect();
        let e: Vec<f64> = (0..cfg.hidden).map(|_| 5.0 * rng.normal()).collect();
        let g = model.gate(&o, &e).unwrap();
        let want = gate_oracle(model.params(), &o, &e);
        for (a, b) in g.iter().zip(&want) {
            assert!(*a > 0.0 && *a < 1.0);
            assert!((a - b).abs() < 1e-12);
        }
    }
    for name in ["gate.down.weight", "gate.down.bias", "gate.up.weight", "gate.up.bias"] {
        set_param(&mut model, name, |_| 0.0);
    }
    let g = model.gate(&[1.0; 16], &[-2.0; 16]).unwrap();
    assert!(g.iter().all(|v| *v == 0.5));
}

#[test]
fn inductive_attention_matches_composition() {
    let cfg = CellConfig::small(32, 6, 8, 3, 4);
    let model = IamModel::<f64>::new(cfg.clone(), &mut Rng::seed(21)).unwrap();
    let p = model.params();
    let mut rng = Rng::seed(22);
    let mut memory = IndexedMemory::new(3);
    let mut keys = Vec::new();
    let mut values = Vec::new();
    for step in 0..5 {
        let pred = softmax(&(0..cfg.classes).map(|_| 2.0 * rng.normal()).collect::<Vec<_>>());
        let key = relu(affine(p, "enc_k", &pred));
        let value: Vec<f64> = (0..cfg.hidden).map(|_| rng.normal()).collect();
        memory.push(MemoryEntry { key: key.clone(), value: value.clone(), step });
        keys.push(key);
        values.push(value);
    }
    let keys = &keys[2..];
    let values = &values[2..];
    let last = softmax(&(0..cfg.classes).map(|_| rng.normal()).collect::<Vec<_>>());
    let (o, w) = model.inductive_attention(&last, &memory).unwrap();
    let query = relu(affine(p, "enc_q", &last));
    let (attn, want_w) = mha_oracle(&cfg, p, &query, keys, values);
    let want = ffn_oracle(&cfg, p, &attn);
    for (a, b) in o.iter().zip(&want) {
        assert!((a - b).abs() < 1e-10);
    }
    for h in 0..cfg.heads {
        for i in 0..3 {
            assert!((w.row(h)[i] - want_w[h][i]).abs() < 1e-12);
        }
    }
    assert!(model.inductive_attention(&last, &IndexedMemory::new(3)).is_err());

    let mut single = IndexedMemory::new(3);
    single.push(MemoryEntry { key: keys[0].clone(), value: values[0].clone(), step: 0 });
    let (_, w) = model.inductive_attention(&last, &single).unwrap();
    assert!(w.data().iter().all(|x| *x == 1.0));
}

#[test]
fn step_rejects_bad_frames() {
    let model = IamModel::<f32>::new(small(), &mut Rng::seed(23)).unwrap();
    let mut state = model.new_state();
    assert!(matches!(model.step(&mut state, &[0.0; 7], &mut Rng::seed(0), false), Err(Error::Contract(_))));
    let err = model.step(&mut state, &[f32::NAN; 8], &mut Rng::seed(0), false).unwrap_err();
    assert!(matches!(err, Error::NonFinite(ref stage) if stage.contains("input frame")), "{err}");
    assert_eq!(state.step, 0);
    let mut bad: IamState<f32> = model.new_state();
    bad.step = 2;
    assert!(model.step(&mut bad, &[0.0; 8], &mut Rng::seed(0), false).is_err());
}

#[test]
fn top_k_breaks_ties_toward_lower_ids() {
    let p = Prediction::new(vec![0.3, 0.3, 0.4]).unwrap();
    assert_eq!(p.top_k(1), [2]);
    assert_eq!(p.top_k(2), [2, 0]);
    assert_eq!(p.top_k(3), [2, 0, 1]);
    assert!(Prediction::new(vec![0.5, 0.6]).is_err());
    assert!(Prediction::<f64>::new(vec![-0.1, 1.1]).is_err());
}

/// Σ_t r_t · ŷ_t over an unrolled window, with optional dropout.
///
/// With detached keys the analytic gradient is that of the loss whose key
/// inputs are held at their values at the base point, so finite differences
/// run with those inputs frozen.
struct LinearReadout {
    config: CellConfig,
    frames: Vec<Vec<f64>>,
    readout: Vec<Vec<f64>>,
    frozen: Option<Vec<Vec<f64>>>,
    attached: bool,
    training: bool,
}

impl LinearReadout {
    fn new(config: CellConfig, seed: u64, steps: usize) -> Self {
        let mut rng = Rng::seed(seed);
        let frames = random_frames(&mut rng, steps, config.features);
        let readout = random_frames(&mut rng, steps, config.classes);
        Self {
            config,
            frames,
            readout,
            frozen: None,
            attached: false,
            training: false,
        }
    }

    /// Records the key inputs produced at `params`.
    fn freeze_at(&mut self, params: &ParamStore<f64>) {
        let model = self.model(params).unwrap();
        let unroll = model.unroll(&self.frames, &mut Rng::seed(99), self.training, KeySource::Detached).unwrap();
        self.frozen = Some(unroll.predictions());
    }

    fn forward_keys(&self) -> KeySource<'_, f64> {
        match (&self.frozen, self.attached) {
            (_, true) => KeySource::Attached,
            (Some(r), false) => KeySource::Recorded(r),
            (None, false) => KeySource::Detached,
        }
    }

    fn backward_keys(&self) -> KeySource<'_, f64> {
        if self.attached {
            KeySource::Attached
        } else {
            KeySource::Detached
        }
    }

    fn model(&self, params: &ParamStore<f64>) -> Result<IamModel<f64>> {
        IamModel::from_parts(self.config.clone(), params.clone())
    }
}

impl Objective<f64> for LinearReadout {
    fn loss(&self, params: &ParamStore<f64>) -> Result<f64> {
        Ok(self.loss_and_pattern(params)?.0)
    }

    fn loss_and_pattern(&self, params: &ParamStore<f64>) -> Result<(f64, Vec<bool>)> {
        let model = self.model(params)?;
        let unroll = model.unroll(&self.frames, &mut Rng::seed(99), self.training, self.forward_keys())?;
        let loss = (0..unroll.len())
            .map(|t| unroll.prediction(t).iter().zip(&self.readout[t]).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        Ok((loss, unroll.relu_pattern()))
    }

    fn loss_and_grad(&self, params: &ParamStore<f64>, grads: &mut GradBuffer<f64>) -> Result<f64> {
        let model = self.model(params)?;
        let unroll = model.unroll(&self.frames, &mut Rng::seed(99), self.training, self.backward_keys())?;
        model.backward(&unroll, &self.readout, self.backward_keys(), grads)?;
        self.loss(params)
    }
}

fn check(mut obj: LinearReadout, seed: u64) -> f64 {
    let mut params = IamModel::<f64>::new(obj.config.clone(), &mut Rng::seed(seed)).unwrap().into_params();
    obj.freeze_at(&params);
    let report = grad_check(&obj, &mut params, &GradCheckConfig::default()).unwrap();
    assert!(report.checked > 1000);
    assert!(report.kinks * 100 < report.checked, "{} kinks", report.kinks);
    assert!(report.passed(), "worst offender {:?}", report.worst);
    report.worst_rel_err()
}

#[test]
fn sequence_gradient_matches_finite_differences() {
    for seed in 0..5 {
        check(LinearReadout::new(small(), 100 + seed, 6), seed);
    }
}

#[test]
fn gradient_check_covers_variants() {
    let mut dropout = small();
    dropout.dropout = 0.3;
    let mut obj = LinearReadout::new(dropout, 200, 6);
    obj.training = true;
    check(obj, 1);

    let mut frame = small();
    frame.query = QueryMode::Frame;
    check(LinearReadout::new(frame, 201, 6), 2);

    let mut scalar = small();
    scalar.gate = GateMode::Scalar;
    check(LinearReadout::new(scalar, 202, 6), 3);

    let mut attached = LinearReadout::new(small(), 203, 6);
    attached.attached = true;
    check(attached, 4);
}

#[test]
fn detached_keys_equal_recorded_constant_keys() {
    let cfg = small();
    let model = IamModel::<f64>::new(cfg.clone(), &mut Rng::seed(30)).unwrap();
    let obj = LinearReadout::new(cfg.clone(), 31, 6);

    let grads_for = |keys: KeySource<'_, f64>| {
        let unroll = model.unroll(&obj.frames, &mut Rng::seed(0), false, keys).unwrap();
        let mut g = GradBuffer::for_store(model.params());
        model.backward(&unroll, &obj.readout, keys, &mut g).unwrap();
        (unroll, g)
    };
    let (real, detached) = grads_for(KeySource::Detached);
    let recorded = real.predictions();
    let (_, constant) = grads_for(KeySource::Recorded(&recorded));
    let (_, attached) = grads_for(KeySource::Attached);

    for (a, b) in detached.grads.iter().zip(&constant.grads) {
        assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let differing = detached.grads.iter().zip(&attached.grads).filter(|(a, b)| a != b).count();
    assert!(differing >= 1);

    // the recorded keys are genuine constants: finite differences of the
    // constant-key loss reproduce the detached gradient
    let mut frozen = LinearReadout::new(cfg.clone(), 31, 6);
    frozen.frozen = Some(recorded);
    let mut params = model.params().clone();
    let report = grad_check(&frozen, &mut params, &GradCheckConfig::default()).unwrap();
    assert!(report.passed(), "{:?}", report.worst);
    for (i, g) in detached.grads.iter().enumerate() {
        assert_eq!(params.grad(iam_core::numerics::ParamId(i)), g.as_slice());
    }
    // differentiating the live loss, keys included, is what the attached
    // variant computes
    let mut live = LinearReadout::new(cfg, 31, 6);
    live.attached = true;
    let mut params = model.params().clone();
    let report = grad_check(&live, &mut params, &GradCheckConfig::default()).unwrap();
    assert!(report.passed(), "{:?}", report.worst);
}

#[test]
fn key_encoder_still_learns_under_detach() {
    let cfg = small();
    let model = IamModel::<f64>::new(cfg.clone(), &mut Rng::seed(39)).unwrap();
    let obj = LinearReadout::new(cfg, 33, 6);
    let live = model.unroll(&obj.frames, &mut Rng::seed(0), false, KeySource::Detached).unwrap();
    // keys and queries must have active ReLU units for any key gradient to exist
    assert!((0..5).all(|t| live.key(t).iter().any(|k| *k > 0.0)));
    let unroll = model.unroll(&obj.frames, &mut Rng::seed(0), false, KeySource::Detached).unwrap();
    let mut g = GradBuffer::for_store(model.params());
    model.backward(&unroll, &obj.readout, KeySource::Detached, &mut g).unwrap();
    let id = model.params().require("enc_k.weight").unwrap();
    assert!(g.get(id).iter().any(|v| *v != 0.0));
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let mut cfg = CellConfig::small(32, 7, 6, 5, 2);
    cfg.query = QueryMode::Frame;
    cfg.dropout = 0.25;
    let model = IamModel::<f32>::new(cfg.clone(), &mut Rng::seed(40)).unwrap();
    let meta = vec![("tau_a".to_string(), "6".to_string())];
    let bytes = encode_checkpoint(&model, &meta).unwrap();
    let loaded = decode_checkpoint(&bytes, "mem").unwrap();
    assert_eq!(loaded.model.config(), &cfg);
    assert_eq!(loaded.meta("tau_a"), Some("6"));
    assert_eq!(encode_checkpoint(&loaded.model, &meta).unwrap(), bytes);

    let mut rng = Rng::seed(41);
    let (mut s1, mut s2) = (model.new_state(), loaded.model.new_state());
    for _ in 0..12 {
        let x: Vec<f32> = (0..cfg.features).map(|_| rng.normal() as f32).collect();
        let a = model.step(&mut s1, &x, &mut Rng::seed(0), false).unwrap();
        let b = loaded.model.step(&mut s2, &x, &mut Rng::seed(0), false).unwrap();
        assert_eq!(a.prediction, b.prediction);
        assert_eq!(a.hidden, b.hidden);
    }
}

#[test]
fn checkpoint_errors_carry_offsets() {
    let model = IamModel::<f32>::new(small(), &mut Rng::seed(42)).unwrap();
    let bytes = encode_checkpoint(&model, &[]).unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_checkpoint(&bad, "x"), Err(Error::Parse { offset: 0, .. })));
    let cut = &bytes[..bytes.len() - 3];
    let err = decode_checkpoint(cut, "x").unwrap_err();
    assert!(matches!(err, Error::Parse { .. }), "{err}");
    assert!(err.to_string().contains("truncated"), "{err}");
}

#[test]
fn baseline_zero_params_and_gradient() {
    let mut base = FirstOrderBaseline::<f64>::new(8, 12, 5, &mut Rng::seed(50)).unwrap();
    let x = random_frames(&mut Rng::seed(51), 1, 8).remove(0);
    for (_, p) in base.params_mut().iter_mut() {
        p.value.fill(0.0);
    }
    let (pred, _) = base.step(None, &x).unwrap();
    assert!(pred.probs().iter().all(|p| (p - 0.2).abs() < 1e-15));

    struct Obj {
        shape: FirstOrderBaseline<f64>,
        frames: Vec<Vec<f64>>,
        readout: Vec<Vec<f64>>,
    }
    impl Obj {
        fn with(&self, params: &ParamStore<f64>) -> FirstOrderBaseline<f64> {
            let mut m = self.shape.clone();
            *m.params_mut() = params.clone();
            m
        }
    }
    impl Objective<f64> for Obj {
        fn loss(&self, params: &ParamStore<f64>) -> Result<f64> {
            let u = self.with(params).unroll(&self.frames)?;
            Ok((0..u.len()).map(|t| u.prediction(t).iter().zip(&self.readout[t]).map(|(a, b)| a * b).sum::<f64>()).sum())
        }
        fn loss_and_grad(&self, params: &ParamStore<f64>, grads: &mut GradBuffer<f64>) -> Result<f64> {
            let m = self.with(params);
            let u = m.unroll(&self.frames)?;
            m.backward(&u, &self.readout, grads)?;
            self.loss(params)
        }
    }
    let mut rng = Rng::seed(52);
    let shape = FirstOrderBaseline::<f64>::new(8, 12, 5, &mut rng).unwrap();
    let obj = Obj {
        frames: random_frames(&mut rng, 6, 8),
        readout: random_frames(&mut rng, 6, 5),
        shape: shape.clone(),
    };
    let mut params = shape.params().clone();
    let report = grad_check(&obj, &mut params, &GradCheckConfig::default()).unwrap();
    assert!(report.passed(), "{:?}", report.worst);
}






