use iam_core::cell::{encode_checkpoint, CellConfig, IamModel};
use iam_core::datagen::{gen_stream, GrammarConfig, SegmentAnnotation};
use iam_core::numerics::{GradBuffer, GradCheckConfig, ParamKind, ParamStore, Rng, Tensor};
use iam_core::training::{
    adamw_step, anticipation_labels, check_training_gradient, class_weights, cosine_lr, parse_key_values, sequence_loss,
    sequence_loss_and_grad, smoothed_weighted_ce, train, window_loss, GradCheckSetup, LabeledWindow, LossConfig, OptimizerState,
    StreamData, TrainConfig, ADAM_EPS, CE_EPS,
};
use iam_core::Error;

fn seg(start: f64, stop: f64, action: usize) -> SegmentAnnotation {
    SegmentAnnotation::new(start, stop, action)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn labels_follow_first_start_rule() {
    let times: Vec<f64> = (0..10).map(f64::from).collect();
    let labels = anticipation_labels(&[seg(5.0, 8.0, 7)], &times, 1.0).unwrap();
    assert_eq!(labels[4], Some(7));
    assert!(labels[..4].iter().all(Option::is_none));
    assert!(labels[5..].iter().all(Option::is_none));

    assert!(anticipation_labels(&[], &times, 1.0).unwrap().iter().all(Option::is_none));

    let two = [seg(3.0, 3.5, 2), seg(3.5, 4.0, 9)];
    assert_eq!(anticipation_labels(&two, &[2.8], 1.0).unwrap(), vec![Some(2)]);
    // unsorted input gives the same answer
    let rev = [two[1].clone(), two[0].clone()];
    assert_eq!(anticipation_labels(&rev, &[2.8], 1.0).unwrap(), vec![Some(2)]);
}

#[test]
fn overlapping_segments_are_rejected() {
    let err = anticipation_labels(&[seg(1.0, 3.0, 0), seg(2.0, 4.0, 1)], &[0.0], 1.0).unwrap_err();
    assert!(matches!(err, Error::Contract(m) if m.contains("overlap")));
    assert!(anticipation_labels(&[], &[1.0, 1.0], 1.0).is_err());
}

#[test]
fn class_weight_examples() {
    let w = class_weights(&[1, 2, 4]).unwrap();
    for (a, b) in w.iter().zip([12.0 / 7.0, 6.0 / 7.0, 3.0 / 7.0]) {
        assert!(close(*a, b, 1e-12));
    }
    assert_eq!(class_weights(&[3, 3, 3]).unwrap(), vec![1.0; 3]);
    let w = class_weights(&[0, 5]).unwrap();
    assert!(close(w[0], 5.0 / 3.0, 1e-12) && close(w[1], 1.0 / 3.0, 1e-12));
    assert!(class_weights(&[0, 0]).is_err());
}

#[test]
fn cross_entropy_examples() {
    let uniform = vec![0.2f64; 5];
    let l = smoothed_weighted_ce(&uniform, Some(3), 2.5, 0.0).unwrap();
    assert!(close(l, 2.5 * 5f64.ln(), 1e-9));

    let onehot = vec![0.0, 1.0, 0.0];
    let l = smoothed_weighted_ce(&onehot, Some(1), 1.0, 0.0).unwrap();
    assert!(close(l, -(1.0 + CE_EPS).ln(), 1e-15) && l.abs() < 1e-11);

    let err = smoothed_weighted_ce(&onehot, None, 1.0, 0.0).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn smoothed_cross_entropy_matches_direct_formula() {
    let mut rng = Rng::seed(3);
    for _ in 0..50 {
        let raw: Vec<f64> = (0..4).map(|_| rng.uniform() + 0.01).collect();
        let s: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let label = rng.below(4);
        let w = rng.uniform_range(0.1, 3.0);
        let direct = -w
            * (0..4)
                .map(|c| {
                    let target = if c == label { 0.4 + 0.6 / 4.0 } else { 0.6 / 4.0 };
                    target * (p[c] + 1e-12).ln()
                })
                .sum::<f64>();
        let got = smoothed_weighted_ce(&p, Some(label), w, 0.6).unwrap();
        assert!(close(got, direct, 1e-10), "{got} vs {direct}");
    }
}

fn toy_window(seed: u64, steps: usize, features: usize, classes: usize) -> LabeledWindow {
    let mut rng = Rng::seed(seed);
    LabeledWindow {
        features: (0..steps).map(|_| (0..features).map(|_| rng.normal() as f32).collect()).collect(),
        labels: (0..steps)
            .map(|t| (t % 3 != 1).then(|| rng.below(classes)))
            .collect(),
    }
}

#[test]
fn sequence_loss_matches_stepwise_reimplementation() {
    let cfg = CellConfig::small(16, 5, 8, 4, 2);
    let model = IamModel::<f64>::new(cfg, &mut Rng::seed(11)).unwrap();
    let window = toy_window(5, 6, 8, 5);
    let loss = LossConfig {
        smoothing: 0.2,
        weights: Some(vec![0.5, 1.0, 1.5, 2.0, 0.7]),
    };
    let got = sequence_loss(&model, &window, &loss, &mut Rng::seed(0), false).unwrap();

    let mut state = model.new_state();
    let mut total = 0.0;
    let mut n = 0.0;
    for (frame, label) in window.frames::<f64>().iter().zip(&window.labels) {
        let out = model.step(&mut state, frame, &mut Rng::seed(0), false).unwrap();
        if let Some(l) = label {
            let w = loss.weights.as_ref().unwrap()[*l];
            let p = out.prediction.probs();
            total -= w * (0..5)
                .map(|c| {
                    let target = if c == *l { 0.8 + 0.04 } else { 0.04 };
                    target * (p[c] + 1e-12).ln()
                })
                .sum::<f64>();
            n += 1.0;
        }
    }
    assert!(close(got, total / n, 1e-8), "{got} vs {}", total / n);
}

#[test]
fn loss_is_the_mean_over_unmasked_steps() {
    let cfg = CellConfig::small(16, 5, 8, 4, 2);
    let model = IamModel::<f64>::new(cfg, &mut Rng::seed(2)).unwrap();
    let window = toy_window(9, 6, 8, 5);
    let unroll = model.unroll(&window.frames(), &mut Rng::seed(0), false, iam_core::cell::KeySource::Detached).unwrap();
    let per_step: Vec<f64> = window
        .labels
        .iter()
        .enumerate()
        .filter_map(|(t, l)| l.map(|l| smoothed_weighted_ce(unroll.prediction(t), Some(l), 1.0, 0.0).unwrap()))
        .collect();
    let mean = per_step.iter().sum::<f64>() / per_step.len() as f64;
    let doubled: Vec<f64> = per_step.iter().chain(&per_step).copied().collect();
    let mean2 = doubled.iter().sum::<f64>() / doubled.len() as f64;
    let got = window_loss(&unroll, &window, &LossConfig::plain()).unwrap();
    assert!(close(got, mean, 1e-14) && close(mean, mean2, 1e-14));

    let single = LabeledWindow {
        labels: (0..6).map(|t| (t == 4).then_some(2)).collect(),
        ..window.clone()
    };
    let got = window_loss(&unroll, &single, &LossConfig::plain()).unwrap();
    assert!(close(got, smoothed_weighted_ce(unroll.prediction(4), Some(2), 1.0, 0.0).unwrap(), 1e-15));
}

#[test]
fn fully_masked_window_is_an_error() {
    let cfg = CellConfig::small(16, 5, 8, 4, 2);
    let model = IamModel::<f64>::new(cfg, &mut Rng::seed(2)).unwrap();
    let window = LabeledWindow {
        labels: vec![None; 6],
        ..toy_window(1, 6, 8, 5)
    };
    let mut grads = GradBuffer::for_store(model.params());
    let err = sequence_loss_and_grad(&model, &window, &LossConfig::plain(), &mut Rng::seed(0), false, &mut grads).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
    assert!(grads.grads.iter().flatten().all(|g| *g == 0.0));
}

#[test]
fn cross_entropy_training_gradient_checks() {
    for seed in 0..5 {
        let setup = GradCheckSetup { seed, ..GradCheckSetup::default() };
        let report = check_training_gradient(&setup, &GradCheckConfig::default()).unwrap();
        assert!(report.passed(), "seed {seed}: {:?}", report.worst);
        assert!(report.kinks * 100 < report.checked, "seed {seed}: {} kinks of {}", report.kinks, report.checked);
    }
}

fn scalar_store(kind: ParamKind, name: &str, v: f64) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    s.insert(name, kind, Tensor::vector(vec![v])).unwrap();
    s
}

#[test]
fn adamw_decay_and_exemption() {
    let mut exempt = scalar_store(ParamKind::Bias, "x.bias", 0.7);
    let mut opt = OptimizerState::new(&exempt);
    assert_eq!(opt.exempt(), ["x.bias".to_string()]);
    adamw_step(&mut exempt, &mut opt, 1e-3, 1e-3).unwrap();
    assert_eq!(exempt.get("x.bias").unwrap().value.data()[0], 0.7);

    let mut w = scalar_store(ParamKind::Weight, "x.weight", 0.7);
    let mut opt = OptimizerState::new(&w);
    assert!(opt.exempt().is_empty());
    adamw_step(&mut w, &mut opt, 1e-3, 1e-3).unwrap();
    assert_eq!(w.get("x.weight").unwrap().value.data()[0], 0.7 * (1.0 - 1e-6));
}

#[test]
fn adamw_first_step_closed_form() {
    let (p0, g, lr, wd) = (0.3f64, -0.02f64, 2e-4, 1e-2);
    let mut s = scalar_store(ParamKind::Weight, "w", p0);
    s.iter_mut().next().unwrap().1.grad.data_mut()[0] = g;
    let mut opt = OptimizerState::new(&s);
    adamw_step(&mut s, &mut opt, lr, wd).unwrap();
    // m̂ = g and v̂ = g² after one step
    let expected = p0 * (1.0 - lr * wd) - lr * g / (g.abs() + ADAM_EPS);
    assert!(close(s.value(iam_core::numerics::ParamId(0))[0], expected, 1e-12));
    assert_eq!(opt.steps(), 1);
}

#[test]
fn adamw_names_the_nan_tensor() {
    let mut s = scalar_store(ParamKind::Weight, "enc_x.weight", 1.0);
    s.iter_mut().next().unwrap().1.grad.data_mut()[0] = f64::NAN;
    let mut opt = OptimizerState::new(&s);
    let err = adamw_step(&mut s, &mut opt, 1e-3, 0.0).unwrap_err();
    assert!(err.to_string().contains("enc_x.weight"), "{err}");
}

#[test]
fn cosine_schedule_points() {
    assert_eq!(cosine_lr(0.0, 50.0, 2e-4), 2e-4);
    assert!(cosine_lr(50.0, 50.0, 2e-4).abs() < 1e-20);
    assert!(close(cosine_lr(25.0, 50.0, 2e-4), 1e-4, 1e-18));
    let mut last = f64::INFINITY;
    for e in 0..=50 {
        let lr = cosine_lr(e as f64, 50.0, 1.0);
        assert!(lr <= last);
        last = lr;
    }
}

#[test]
fn config_file_parsing() {
    let pairs = parse_key_values("# recipe\nlr = 0.001\n\nepochs=3\n", "cfg").unwrap();
    let mut cfg = TrainConfig::default();
    for (k, v) in &pairs {
        cfg.set(k, v).unwrap();
    }
    assert_eq!((cfg.lr, cfg.epochs), (0.001, 3));
    assert!(matches!(cfg.set("learning_rate", "1"), Err(Error::Config(_))));
    let err = parse_key_values("lr=1\nbogus line\n", "cfg").unwrap_err();
    assert!(matches!(err, Error::Parse { offset: 2, .. }));

    let d = TrainConfig::default();
    assert_eq!((d.lr, d.weight_decay, d.batch_size, d.epochs, d.window_frames()), (2e-4, 1e-2, 128, 50, 30));
    let mut round = TrainConfig::default();
    for (k, v) in d.to_pairs() {
        round.set(k, &v).unwrap();
    }
    assert_eq!(round, d);
}

fn synthetic(frames: usize, seed: u64) -> (iam_core::datagen::GeneratedStream, GrammarConfig) {
    let g = GrammarConfig::new(4, 3, 6, 0.5, 16, frames, seed);
    (gen_stream(&g).unwrap(), g)
}

fn quick_config() -> TrainConfig {
    TrainConfig {
        tau_a: 6.0,
        epochs: 3,
        batch_size: 8,
        lr: 3e-3,
        hidden: 32,
        memory: 8,
        heads: 2,
        dropout: 0.1,
        ..TrainConfig::default()
    }
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let (data, _) = synthetic(600, 0);
    let stream = StreamData {
        features: &data.features,
        annotations: &data.annotations,
    };
    let cfg = quick_config();
    let a = train(&cfg, stream, None, None).unwrap();
    let train_rows: Vec<_> = a.history.iter().filter(|r| r.split == "train").collect();
    assert_eq!(train_rows.len(), 4);
    assert!(train_rows[3].loss < train_rows[0].loss, "{} !< {}", train_rows[3].loss, train_rows[0].loss);
    assert_eq!(a.steps, 3 * 40usize.div_ceil(8) as u64);

    let b = train(&cfg, stream, None, None).unwrap();
    let meta = vec![];
    assert_eq!(encode_checkpoint(&a.model, &meta).unwrap(), encode_checkpoint(&b.model, &meta).unwrap());
}

#[test]
fn exploding_learning_rate_reports_divergence() {
    let (data, _) = synthetic(300, 1);
    let stream = StreamData {
        features: &data.features,
        annotations: &data.annotations,
    };
    let cfg = TrainConfig {
        lr: 1e30,
        epochs: 2,
        ..quick_config()
    };
    let err = train(&cfg, stream, None, None).unwrap_err();
    assert!(matches!(err, Error::Divergence { epoch: 1, .. }), "{err}");
}
