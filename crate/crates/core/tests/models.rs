use objdecode::datamodel::*;
use objdecode::models::*;
use objdecode::tensor::gradcheck::relative_error;
use objdecode::tensor::{Mode, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_input(n: usize, seed: u64) -> Tensor<f32> {
    let mut r = rng(seed);
    Tensor::from_fn(&[n, 1, 124, 32], |_| r.random_range(-1.0..1.0))
}

fn eval_forward(params: &mut ModelParams<f32>, x: &Tensor<f32>) -> (Tape<f32>, ForwardOutput) {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = forward(params, &mut tape, xv, Mode::Eval, None, false).unwrap();
    (tape, out)
}

fn shape_of<'a>(out: &'a ForwardOutput, name: &str) -> &'a [usize] {
    &out.trace.iter().find(|(n, _)| n == name).unwrap_or_else(|| panic!("no {name}")).1
}

#[test]
fn attention_model_follows_the_block_chain() {
    for classes in [6, 72] {
        let mut p = build::<f32>(&ModelSpec::new(ModelKind::AttentionCnn, classes), &mut rng(1)).unwrap();
        assert_eq!(p.head_inputs(), 2400);
        let (_, out) = eval_forward(&mut p, &random_input(3, 2));
        for branch in ["full", "masked"] {
            for (i, &(f, h, w)) in BLOCK_CHAIN.iter().enumerate() {
                assert_eq!(shape_of(&out, &format!("{branch}.l{}", i + 1)), &[3, f, h, w]);
            }
            assert_eq!(shape_of(&out, &format!("{branch}.flatten")), &[3, 1200]);
        }
        assert_eq!(shape_of(&out, "concat"), &[3, 2400]);
        assert_eq!(shape_of(&out, "logits"), &[3, classes]);
    }
}

#[test]
fn plain_model_has_one_block() {
    let p = build::<f32>(&ModelSpec::new(ModelKind::PlainCnn, 6), &mut rng(1)).unwrap();
    assert_eq!(p.head_inputs(), 1200);
    assert!(p.params.iter().all(|q| !q.name.starts_with("masked")));
}

#[test]
fn build_rejects_bad_specs_and_geometry() {
    assert!(build::<f32>(&ModelSpec::new(ModelKind::AttentionCnn, 7), &mut rng(0)).is_err());
    let mut spec = ModelSpec::new(ModelKind::PlainCnn, 6);
    spec.n_samples = 20;
    assert!(build::<f32>(&spec, &mut rng(0)).is_err());
    let mut spec = ModelSpec::new(ModelKind::PlainCnn, 6);
    spec.mask = Some(default_occipital_mask());
    assert!(build::<f32>(&spec, &mut rng(0)).is_err());
    let mut spec = ModelSpec::new(ModelKind::AttentionCnn, 6);
    spec.mask = None;
    assert!(build::<f32>(&spec, &mut rng(0)).is_err());
}

#[test]
fn branches_have_independent_parameters() {
    let p = build::<f32>(&ModelSpec::new(ModelKind::AttentionCnn, 6), &mut rng(4)).unwrap();
    let full = p.get("full.l3.weight").unwrap();
    let masked = p.get("masked.l3.weight").unwrap();
    assert_eq!(full.value.shape(), masked.value.shape());
    assert_ne!(full.value, masked.value);
}

#[test]
fn comparison_models_produce_expected_shapes() {
    let x = random_input(2, 3);
    let mut shallow = build::<f32>(&ModelSpec::new(ModelKind::ShallowConvnet, 72), &mut rng(1)).unwrap();
    let (_, out) = eval_forward(&mut shallow, &x);
    assert_eq!(shape_of(&out, "logits"), &[2, 72]);
    assert_eq!(shape_of(&out, "flatten"), &[2, 160]);

    let mut lstm = build::<f32>(&ModelSpec::new(ModelKind::Lstm, 6), &mut rng(1)).unwrap();
    let (_, out) = eval_forward(&mut lstm, &x);
    assert_eq!(shape_of(&out, "lstm.input"), &[2, 32, 124]);
    assert_eq!(shape_of(&out, "lstm.l2"), &[2, 32, 100]);
    assert_eq!(shape_of(&out, "logits"), &[2, 6]);

    let mut lc = build::<f32>(&ModelSpec::new(ModelKind::LstmCnn, 6), &mut rng(1)).unwrap();
    let (_, out) = eval_forward(&mut lc, &x);
    assert_eq!(shape_of(&out, "lstm.image"), &[2, 1, 100, 32]);
    assert_eq!(shape_of(&out, "full.l2"), &[2, 20, 1, 28]);
    assert_eq!(shape_of(&out, "logits"), &[2, 6]);
}

#[test]
fn shallow_logits_are_finite_on_silent_input() {
    let mut p = build::<f32>(&ModelSpec::new(ModelKind::ShallowConvnet, 6), &mut rng(2)).unwrap();
    let (tape, out) = eval_forward(&mut p, &Tensor::zeros(&[2, 1, 124, 32]));
    assert!(tape.value(out.logits).all_finite());
}

#[test]
fn masked_branch_ignores_other_channels() {
    let mut p = build::<f32>(&ModelSpec::new(ModelKind::AttentionCnn, 6), &mut rng(5)).unwrap();
    let x = random_input(2, 6);
    let keep = default_occipital_mask().keep(124);
    let mut y = x.clone();
    let mut r = rng(7);
    for (i, v) in y.data_mut().iter_mut().enumerate() {
        if !keep[(i / 32) % 124] {
            *v = r.random_range(-100.0..100.0);
        }
    }
    let feature = |tape: &Tape<f32>, out: &ForwardOutput, name: &str| {
        let v = out.features.iter().find(|(n, _)| n == name).unwrap().1;
        tape.value(v).data().iter().map(|f| f.to_bits()).collect::<Vec<_>>()
    };
    let (ta, a) = eval_forward(&mut p, &x);
    let (tb, b) = eval_forward(&mut p, &y);
    assert_eq!(feature(&ta, &a, "masked.flatten"), feature(&tb, &b, "masked.flatten"));
    assert_ne!(feature(&ta, &a, "full.flatten"), feature(&tb, &b, "full.flatten"));
}

#[test]
fn builds_and_eval_forwards_are_deterministic() {
    for kind in [ModelKind::AttentionCnn, ModelKind::ShallowConvnet, ModelKind::Lstm] {
        let spec = ModelSpec::new(kind, 6);
        let mut a = build::<f32>(&spec, &mut rng(9)).unwrap();
        let b = build::<f32>(&spec, &mut rng(9)).unwrap();
        assert_eq!(a.params, b.params);
        let x = random_input(2, 1);
        let (t1, o1) = eval_forward(&mut a, &x);
        let (t2, o2) = eval_forward(&mut a, &x);
        assert_eq!(t1.value(o1.logits), t2.value(o2.logits));
    }
}

/// Central differences over every parameter of a tiny shallow network in
/// train mode (batch statistics, no dropout).
#[test]
fn shallow_network_gradients_match_finite_differences() {
    let mut spec = ModelSpec::new(ModelKind::ShallowConvnet, 6);
    spec.n_channels = 3;
    spec.n_samples = 12;
    spec.shallow = ShallowConfig {
        filters: 2,
        temporal_kernel: 3,
        pool: 3,
        stride: 2,
    };
    spec.train.dropout = 0.0;
    let mut params = build::<f64>(&spec, &mut rng(3)).unwrap();
    let mut r = rng(4);
    let x = Tensor::<f64>::from_fn(&[5, 1, 3, 12], |_| r.random_range(-1.0..1.0));
    let labels = [0, 3, 5, 1, 3];
    let loss_of = |params: &mut ModelParams<f64>, grads: bool| {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = forward(params, &mut tape, xv, Mode::Train, Some(&mut rng(0)), grads).unwrap();
        let loss = tape.softmax_cross_entropy(out.logits, &labels).unwrap();
        let value = tape.value(loss).item();
        let g = grads.then(|| {
            tape.backward(loss).unwrap();
            out.param_vars.iter().map(|v| tape.grad(*v).unwrap().clone()).collect::<Vec<_>>()
        });
        (value, g)
    };
    let (_, analytic) = loss_of(&mut params, true);
    let analytic = analytic.unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..params.params.len() {
        for e in 0..params.params[k].value.len() {
            let orig = params.params[k].value.data()[e];
            params.params[k].value.data_mut()[e] = orig + h;
            let plus = loss_of(&mut params, false).0;
            params.params[k].value.data_mut()[e] = orig - h;
            let minus = loss_of(&mut params, false).0;
            params.params[k].value.data_mut()[e] = orig;
            worst = worst.max(relative_error(analytic[k].data()[e], (plus - minus) / (2.0 * h)));
        }
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn uniform_logits_give_log_class_count() {
    for c in [6usize, 72] {
        let mut tape = Tape::<f64>::new();
        let logits = tape.constant(Tensor::full(&[4, c], 0.25));
        let loss = tape.softmax_cross_entropy(logits, &[0, 1, 2, 3]).unwrap();
        assert!((tape.value(loss).item() - (c as f64).ln()).abs() < 1e-6);
    }
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let d = synth_generate(&SynthConfig {
        n_trials_per_exemplar: 1,
        ..Default::default()
    })
    .unwrap();
    let idx: Vec<usize> = (0..72).collect();
    let mut p = build::<f32>(&ModelSpec::new(ModelKind::AttentionCnn, 6), &mut rng(2)).unwrap();
    fit(&mut p, &d, &idx, &FitOptions { epochs: Some(1), ..Default::default() }, &mut rng(3)).unwrap();
    let mut buf = Vec::new();
    save_params(&mut buf, &p, 3, 1).unwrap();
    let (mut back, seed, epoch) = load_params(buf.as_slice()).unwrap();
    assert_eq!((seed, epoch), (3, 1));
    assert_eq!(back.params, p.params);
    assert_eq!(back.running, p.running);
    assert_eq!(predict_logits(&mut back, &d, &idx).unwrap(), predict_logits(&mut p, &d, &idx).unwrap());
    assert!(load_params(&buf[..buf.len() - 4]).is_err());
}

#[test]
fn transfer_freezes_trunk_and_resizes_head() {
    let d = synth_generate(&SynthConfig {
        n_trials_per_exemplar: 1,
        ..Default::default()
    })
    .unwrap();
    let idx: Vec<usize> = (0..72).collect();
    let base = build::<f32>(&ModelSpec::new(ModelKind::AttentionCnn, 6), &mut rng(2)).unwrap();
    let mut adapted = transfer_adapt(&base, 72, &mut rng(3)).unwrap();
    assert_eq!(adapted.get("head.weight").unwrap().value.shape(), &[72, 2400]);
    assert!(adapted.params.iter().all(|p| p.frozen != p.name.starts_with("head")));
    let digest = adapted.frozen_digest();
    let trunk: Vec<_> = adapted.params.iter().filter(|p| p.frozen).cloned().collect();
    let running = adapted.running.clone();
    let head = adapted.get("head.weight").unwrap().value.clone();
    fit(&mut adapted, &d, &idx, &FitOptions { epochs: Some(5), ..Default::default() }, &mut rng(4)).unwrap();
    assert_eq!(adapted.frozen_digest(), digest);
    assert_eq!(adapted.params.iter().filter(|p| p.frozen).cloned().collect::<Vec<_>>(), trunk);
    assert_eq!(adapted.running, running);
    assert_ne!(adapted.get("head.weight").unwrap().value, head);

    let lstm = build::<f32>(&ModelSpec::new(ModelKind::Lstm, 6), &mut rng(2)).unwrap();
    assert!(transfer_adapt(&lstm, 72, &mut rng(3)).is_err());
}

/// Purely temporal class signatures: every category peaks at its own latency.
#[test]
fn lstm_beats_chance_on_temporal_signatures() {
    let d = synth_generate(&SynthConfig {
        n_trials_per_exemplar: 5,
        snr: 4.0,
        seed: 21,
        ..Default::default()
    })
    .unwrap();
    let (train, test): (Vec<usize>, Vec<usize>) = (0..d.n_trials()).partition(|i| i % 6 != 0);
    let mut spec = ModelSpec::new(ModelKind::Lstm, 6);
    spec.train.epochs = 15;
    let (mut model, _) = fit_spec(&spec, &d, &train, &FitOptions::default(), &mut rng(5)).unwrap();
    let pred = predict_trained(&mut model, &d, &test).unwrap();
    let labels = d.category_labels();
    let correct = pred.iter().zip(&test).filter(|(p, &i)| **p == labels[i]).count();
    // Upper 95% binomial bound of chance accuracy, by summing the pmf.
    let n = test.len();
    let p0: f64 = 1.0 / 6.0;
    let mut cdf: f64 = 0.0;
    let mut bound = n;
    for k in 0..=n {
        let ln_choose: f64 = (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum();
        cdf += (ln_choose + k as f64 * p0.ln() + (n - k) as f64 * (1.0 - p0).ln()).exp();
        if cdf >= 0.975 {
            bound = k;
            break;
        }
    }
    assert!(correct > bound, "{correct}/{n} correct, chance bound {bound}");
}

#[test]
fn lda_needs_every_class() {
    let d = synth_generate(&SynthConfig {
        n_trials_per_exemplar: 1,
        ..Default::default()
    })
    .unwrap();
    let spec = ModelSpec::new(ModelKind::Lda, 6);
    let first_five: Vec<usize> = (0..60).collect();
    assert!(matches!(
        fit_spec(&spec, &d, &first_five, &FitOptions::default(), &mut rng(0)),
        Err(ModelError::ClassAbsent(5))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn argmax_ignores_constant_shifts(
        rows in prop::collection::vec(prop::collection::vec(-5i32..5, 6), 1..8),
        shift in -1000i32..1000,
    ) {
        let flat: Vec<f64> = rows.iter().flatten().map(|&v| f64::from(v)).collect();
        let shifted: Vec<f64> = flat.iter().map(|v| v + f64::from(shift)).collect();
        let pred = argmax_rows(&flat, 6);
        prop_assert_eq!(&pred, &argmax_rows(&shifted, 6));
        for (row, p) in rows.iter().zip(&pred) {
            let max = *row.iter().max().unwrap();
            prop_assert_eq!(*p, row.iter().position(|&v| v == max).unwrap());
        }
    }
}
