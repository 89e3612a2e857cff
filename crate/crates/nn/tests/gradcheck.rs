//! Central finite-difference checks of every layer's backward pass in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use radchar_nn::gradcheck::{self, random, Forward};
use radchar_nn::{Activation, EncoderLayer, EncoderSpec, LayerSpec, Mode, ParamStore, Tensor};

const TOL: f64 = 1e-4;

fn check(store: &mut ParamStore<f64>, x: &Tensor<f64>, mode: Mode, f: &Forward) -> f64 {
    gradcheck::check(store, x, mode, f).unwrap()
}

fn check_spec(spec: LayerSpec, input: &[usize], mode: Mode) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let layer = spec.build::<f64>("l", &mut store, &mut rng).unwrap();
    // Perturb default-initialised affine params so gamma/beta gradients are exercised.
    for (_, p) in store.iter_mut() {
        if p.trainable {
            for v in p.value.data_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
    }
    let x = random(input, &mut rng);
    let f: Box<Forward> = Box::new(move |cx, x| layer.forward(cx, x));
    let err = check(&mut store, &x, mode, &*f);
    eprintln!("{spec:?} on {input:?}: max rel err {err:.2e}");
    err
}

#[test]
fn linear() {
    assert!(check_spec(LayerSpec::Linear { input: 5, output: 3 }, &[4, 5], Mode::Train) < TOL);
}

#[test]
fn linear_on_rank3_input() {
    assert!(check_spec(LayerSpec::Linear { input: 4, output: 6 }, &[2, 3, 4], Mode::Train) < TOL);
}

#[test]
fn conv1d() {
    let spec = LayerSpec::Conv1d {
        in_ch: 2,
        out_ch: 3,
        kernel: 3,
        stride: 1,
    };
    assert!(check_spec(spec, &[2, 2, 9], Mode::Train) < TOL);
}

#[test]
fn conv1d_strided() {
    let spec = LayerSpec::Conv1d {
        in_ch: 1,
        out_ch: 2,
        kernel: 2,
        stride: 2,
    };
    assert!(check_spec(spec, &[3, 1, 8], Mode::Train) < TOL);
}

#[test]
fn conv2d() {
    let spec = LayerSpec::Conv2d {
        in_ch: 2,
        out_ch: 3,
        kernel: (2, 3),
        stride: (1, 2),
    };
    assert!(check_spec(spec, &[2, 2, 5, 7], Mode::Train) < TOL);
}

#[test]
fn max_pool1d() {
    assert!(check_spec(LayerSpec::MaxPool1d { kernel: 2 }, &[2, 3, 9], Mode::Train) < TOL);
}

#[test]
fn max_pool2d() {
    assert!(check_spec(LayerSpec::MaxPool2d { kernel: (2, 2) }, &[2, 2, 5, 6], Mode::Train) < TOL);
}

#[test]
fn batch_norm_train_mode() {
    assert!(check_spec(LayerSpec::BatchNorm { features: 3 }, &[4, 3, 5], Mode::Train) < TOL);
}

#[test]
fn batch_norm_eval_mode() {
    assert!(check_spec(LayerSpec::BatchNorm { features: 3 }, &[4, 3, 2, 2], Mode::Eval) < TOL);
}

#[test]
fn layer_norm() {
    assert!(check_spec(LayerSpec::LayerNorm { d_model: 6 }, &[2, 3, 6], Mode::Train) < TOL);
}

#[test]
fn dropout_train_mode() {
    assert!(check_spec(LayerSpec::Dropout { rate: 0.4 }, &[3, 7], Mode::Train) < TOL);
}

#[test]
fn attention() {
    let spec = LayerSpec::MultiHeadSelfAttention {
        d_model: 6,
        heads: 2,
        head_dim: None,
    };
    assert!(check_spec(spec, &[2, 4, 6], Mode::Train) < TOL);
}

#[test]
fn attention_with_uneven_head_width() {
    let spec = LayerSpec::MultiHeadSelfAttention {
        d_model: 8,
        heads: 3,
        head_dim: Some(3),
    };
    assert!(check_spec(spec, &[2, 3, 8], Mode::Train) < TOL);
}

#[test]
fn feed_forward() {
    assert!(check_spec(LayerSpec::FeedForward { d_model: 4, d_ff: 7 }, &[2, 3, 4], Mode::Train) < TOL);
}

#[test]
fn activations_and_softmax() {
    for spec in [
        LayerSpec::Activation(Activation::Relu),
        LayerSpec::Activation(Activation::Gelu),
        LayerSpec::Softmax,
    ] {
        assert!(check_spec(spec, &[3, 5], Mode::Train) < TOL);
    }
}

#[test]
fn encoder_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let spec = EncoderSpec {
        d_model: 6,
        heads: 3,
        head_dim: 2,
        d_ff: 8,
        dropout: 0.1,
    };
    let enc = EncoderLayer::new::<f64>("enc", &spec, &mut store, &mut rng).unwrap();
    let x = random(&[2, 3, 6], &mut rng);
    let f: Box<Forward> = Box::new(move |cx, x| enc.forward(cx, x));
    let err = check(&mut store, &x, Mode::Train, &*f);
    eprintln!("encoder: {err:.2e}");
    assert!(err < TOL);
}

#[test]
fn losses_and_token_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let tok = store.add("tok", random(&[4], &mut rng), true);
    let x = random(&[2, 3, 4], &mut rng);
    let f: Box<Forward> = Box::new(move |cx, x| {
        let t = cx.param(tok);
        let seq = x.prepend_token(t)?;
        let pooled = seq.select_token(0)?.add(seq.select_token(2)?)?;
        let ce = pooled.cross_entropy(&[1, 3])?;
        let l1 = seq.select_token(1)?.reshape(&[8])?.l1_loss(&[0.3; 8])?;
        let bm = seq
            .permute(&[0, 2, 1])?
            .bmm(seq, false)?
            .mean()?;
        ce.add(l1)?.add(bm.scale(0.5)?)?.reshape(&[1])
    });
    let err = check(&mut store, &x, Mode::Train, &*f);
    eprintln!("losses/tokens: {err:.2e}");
    assert!(err < TOL);
}

#[test]
fn random_two_layer_net() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::new();
    let l1 = LayerSpec::Linear { input: 6, output: 10 }
        .build::<f64>("l1", &mut store, &mut rng)
        .unwrap();
    let l2 = LayerSpec::Linear { input: 10, output: 3 }
        .build::<f64>("l2", &mut store, &mut rng)
        .unwrap();
    let x = random(&[5, 6], &mut rng);
    let f: Box<Forward> = Box::new(move |cx, x| {
        let h = l1.forward(cx, x)?.gelu()?;
        l2.forward(cx, h)
    });
    assert!(check(&mut store, &x, Mode::Train, &*f) < TOL);
}
