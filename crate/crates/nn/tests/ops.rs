use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use radchar_nn::{
    adam_update, softmax_rows, Adam, AdamConfig, Ctx, LayerSpec, Mode, NnError, ParamStore, Tape,
    Tensor,
};

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

#[test]
fn grad_of_sum_is_ones() {
    let tape = Tape::new();
    let x = tape.constant(t(&[3], &[1.0, -2.0, 5.0]));
    let g = tape.backward(x.sum().unwrap()).unwrap();
    assert_eq!(g.wrt(x).unwrap().data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn grad_of_sum_of_squares() {
    let tape = Tape::new();
    let x = tape.constant(t(&[2], &[1.0, 2.0]));
    let loss = x.mul(x).unwrap().sum().unwrap();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.wrt(x).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn backward_on_bare_leaf_is_an_error() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::<f64>::scalar(1.0));
    assert!(matches!(tape.backward(x), Err(NnError::BackwardBeforeForward)));
}

#[test]
fn backward_needs_scalar() {
    let tape = Tape::new();
    let x = tape.constant(t(&[2], &[1.0, 2.0]));
    let y = x.relu().unwrap();
    assert!(matches!(tape.backward(y), Err(NnError::NonScalarLoss(_))));
}

#[test]
fn shape_errors_report_both_shapes() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::<f32>::zeros(&[2, 3]));
    let w = tape.constant(Tensor::<f32>::zeros(&[4, 5]));
    let msg = a.matmul(w).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
}

#[test]
fn unused_parameters_get_zero_gradient() {
    let mut store = ParamStore::<f64>::new();
    let used = store.add("used", t(&[2], &[1.0, 1.0]), true);
    let unused = store.add("unused", t(&[2], &[3.0, 3.0]), true);
    store.get_mut(unused).grad.data_mut().fill(7.0);
    store.zero_grad();
    let tape = Tape::new();
    let loss = store.leaf(&tape, used).sum().unwrap();
    let g = tape.backward(loss).unwrap();
    store.accumulate(&g);
    assert_eq!(store.get(used).grad.data(), &[1.0, 1.0]);
    assert_eq!(store.get(unused).grad.data(), &[0.0, 0.0]);
}

#[test]
fn non_finite_output_is_an_error() {
    let tape = Tape::new();
    let x = tape.constant(t(&[1], &[f64::MAX]));
    assert!(matches!(x.scale(10.0), Err(NnError::NonFinite { .. })));
}

fn run_layer(spec: LayerSpec, x: Tensor<f32>, mode: Mode, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let layer = spec.build::<f32>("l", &mut store, &mut rng).unwrap();
    let tape = Tape::new();
    let xv = tape.constant(x);
    let mut cx = Ctx {
        tape: &tape,
        store: &mut store,
        mode,
        rng: &mut rng,
    };
    let y = layer.forward(&mut cx, xv).unwrap();
    (*y.value()).clone()
}

#[test]
fn dropout_eval_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::new(&[4, 8], (0..32).map(|_| rng.gen::<f32>()).collect()).unwrap();
    let y = run_layer(LayerSpec::Dropout { rate: 0.5 }, x.clone(), Mode::Eval, 1);
    assert_eq!(x, y);
}

#[test]
fn dropout_train_zeroes_and_rescales() {
    let x = Tensor::<f32>::ones(&[1000]);
    let y = run_layer(LayerSpec::Dropout { rate: 0.5 }, x, Mode::Train, 1);
    let zeros = y.data().iter().filter(|&&v| v == 0.0).count();
    assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    assert!((400..600).contains(&zeros), "{zeros}");
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::<f32>::new(&[16, 5], (0..80).map(|_| rng.gen_range(-30.0..30.0)).collect()).unwrap();
    let y = softmax_rows(&x);
    for r in 0..16 {
        let s: f32 = y.row(r).iter().sum();
        assert!((s - 1.0).abs() < 1e-6, "{s}");
    }
}

#[test]
fn attention_preserves_shape() {
    let spec = LayerSpec::MultiHeadSelfAttention {
        d_model: 128,
        heads: 4,
        head_dim: None,
    };
    let y = run_layer(spec, Tensor::zeros(&[1, 9, 128]), Mode::Eval, 0);
    assert_eq!(y.shape(), &[1, 9, 128]);
    assert_eq!(
        LayerSpec::MultiHeadSelfAttention {
            d_model: 128,
            heads: 4,
            head_dim: None
        }
        .output_shape(&[1, 9, 128])
        .unwrap(),
        vec![1, 9, 128]
    );
}

#[test]
fn indivisible_heads_need_explicit_width() {
    let spec = LayerSpec::MultiHeadSelfAttention {
        d_model: 128,
        heads: 3,
        head_dim: None,
    };
    assert!(spec.validate().is_err());
    let spec = LayerSpec::MultiHeadSelfAttention {
        d_model: 128,
        heads: 3,
        head_dim: Some(43),
    };
    assert!(spec.validate().is_ok());
}

#[test]
fn invalid_specs_rejected() {
    assert!(LayerSpec::Dropout { rate: 1.0 }.validate().is_err());
    assert!(LayerSpec::Dropout { rate: -0.1 }.validate().is_err());
    assert!(LayerSpec::Linear { input: 0, output: 3 }.validate().is_err());
    assert!(LayerSpec::Conv1d {
        in_ch: 2,
        out_ch: 8,
        kernel: 2,
        stride: 1
    }
    .output_shape(&[4, 3, 512])
    .is_err());
}

#[test]
fn batch_norm_train_output_is_standardised() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::<f32>::new(
        &[256, 4, 8],
        (0..256 * 32).map(|_| rng.gen_range(-3.0..7.0)).collect(),
    )
    .unwrap();
    let y = run_layer(LayerSpec::BatchNorm { features: 4 }, x, Mode::Train, 0);
    for c in 0..4 {
        let vals: Vec<f64> = (0..256)
            .flat_map(|b| (0..8).map(move |s| (b, s)))
            .map(|(b, s)| y.data()[(b * 4 + c) * 8 + s] as f64)
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-4, "{mean}");
        assert!((var - 1.0).abs() < 1e-2, "{var}");
    }
}

#[test]
fn batch_norm_eval_uses_running_stats() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f32>::new();
    let layer = LayerSpec::BatchNorm { features: 2 }
        .build::<f32>("bn", &mut store, &mut rng)
        .unwrap();
    let x = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let tape = Tape::new();
    let mut cx = Ctx {
        tape: &tape,
        store: &mut store,
        mode: Mode::Eval,
        rng: &mut rng,
    };
    // Fresh running stats are mean 0, var 1: eval output ~ input.
    let y = layer.forward(&mut cx, tape.constant(x.clone())).unwrap();
    for (a, b) in y.value().data().iter().zip(x.data()) {
        assert!((a - b).abs() < 1e-4);
    }
    // A single sample in eval mode is fine.
    let one = Tensor::new(&[1, 2], vec![0.5, -0.5]).unwrap();
    assert!(layer.forward(&mut cx, tape.constant(one)).is_ok());
}

#[test]
fn cross_entropy_examples() {
    let tape = Tape::new();
    let mut logits = vec![0.0; 10];
    logits[2] = 1e6;
    logits[5 + 4] = 1e6;
    let ce = tape
        .constant(t(&[2, 5], &logits))
        .cross_entropy(&[2, 4])
        .unwrap();
    assert!(ce.value().item().abs() < 1e-12);

    let ce = tape
        .constant(Tensor::<f64>::zeros(&[3, 5]))
        .cross_entropy(&[0, 1, 4])
        .unwrap();
    assert!((ce.value().item() - 5f64.ln()).abs() < 1e-12);
    assert!((5f64.ln() - 1.609438).abs() < 1e-6);

    let bad = tape.constant(Tensor::<f64>::zeros(&[1, 5])).cross_entropy(&[5]);
    assert!(matches!(bad, Err(NnError::LabelOutOfRange { .. })));
}

#[test]
fn l1_example() {
    let tape = Tape::new();
    let l = tape
        .constant(t(&[2], &[0.2, 0.8]))
        .l1_loss(&[0.0, 1.0])
        .unwrap();
    assert!((l.value().item() - 0.2).abs() < 1e-12);
}

#[test]
fn adam_zero_gradient_leaves_params() {
    let mut value = [0.5f64, -1.0];
    let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
    for step in 1..=5 {
        adam_update(&mut value, &[0.0, 0.0], &mut m, &mut v, &AdamConfig::default(), step);
    }
    assert_eq!(value, [0.5, -1.0]);
}

#[test]
fn adam_first_step_has_magnitude_lr() {
    let mut value = [0.0f64];
    let (mut m, mut v) = ([0.0], [0.0]);
    let cfg = AdamConfig {
        lr: 0.001,
        ..AdamConfig::default()
    };
    adam_update(&mut value, &[1.0], &mut m, &mut v, &cfg, 1);
    assert!((value[0] + 0.001).abs() < 1e-9, "{}", value[0]);
}

#[test]
fn adam_moves_against_constant_gradient() {
    let mut store = ParamStore::<f64>::new();
    let p = store.add("p", t(&[2], &[0.0, 0.0]), true);
    let mut opt = Adam::new(AdamConfig::default(), &store);
    let mut prev = store.value(p).data().to_vec();
    for _ in 0..20 {
        store.get_mut(p).grad = t(&[2], &[2.0, -3.0]);
        opt.step(&mut store);
        let now = store.value(p).data().to_vec();
        assert!(now[0] < prev[0] && now[1] > prev[1]);
        prev = now;
    }
}

#[test]
fn adam_skips_frozen_parameters() {
    let mut store = ParamStore::<f64>::new();
    let p = store.add("frozen", t(&[1], &[1.0]), false);
    let mut opt = Adam::new(AdamConfig::default(), &store);
    store.get_mut(p).grad = t(&[1], &[1.0]);
    opt.step(&mut store);
    assert_eq!(store.value(p).data(), &[1.0]);
}

#[test]
fn lecun_init_variance_and_zero_bias() {
    let mut pooled = Vec::new();
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::<f64>::new();
        LayerSpec::Linear {
            input: 100,
            output: 50,
        }
        .build::<f64>("fc", &mut store, &mut rng)
        .unwrap();
        pooled.extend_from_slice(store.value(store.find("fc.weight").unwrap()).data());
        assert!(store
            .value(store.find("fc.bias").unwrap())
            .data()
            .iter()
            .all(|&b| b == 0.0));
    }
    let mean = pooled.iter().sum::<f64>() / pooled.len() as f64;
    let var = pooled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / pooled.len() as f64;
    assert!((var - 0.01).abs() < 0.0015, "{var}");
}

#[test]
fn init_is_deterministic_by_seed() {
    let build = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::<f32>::new();
        LayerSpec::Conv2d {
            in_ch: 1,
            out_ch: 8,
            kernel: (2, 2),
            stride: (1, 1),
        }
        .build::<f32>("c", &mut store, &mut rng)
        .unwrap();
        store.value(store.find("c.weight").unwrap()).clone()
    };
    assert_eq!(build(3), build(3));
    assert_ne!(build(3), build(4));
}
