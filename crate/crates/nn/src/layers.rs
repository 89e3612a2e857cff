//! Layer specifications and their parameterised instances.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, NnError, Result};
use crate::float::Float;
use crate::init::lecun_normal;
use crate::param::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

const NORM_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-forward-pass state shared by all layers.
pub struct Ctx<'t, 'a, T: Float> {
    pub tape: &'t Tape<T>,
    pub store: &'a mut ParamStore<T>,
    pub mode: Mode,
    pub rng: &'a mut ChaCha8Rng,
}

impl<'t, T: Float> Ctx<'t, '_, T> {
    pub fn param(&self, id: ParamId) -> Var<'t, T> {
        self.store.leaf(self.tape, id)
    }

    pub fn training(&self) -> bool {
        self.mode == Mode::Train
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
}

/// Declarative description of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Linear {
        input: usize,
        output: usize,
    },
    Conv1d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
    },
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
    },
    MaxPool1d {
        kernel: usize,
    },
    MaxPool2d {
        kernel: (usize, usize),
    },
    BatchNorm {
        features: usize,
    },
    Dropout {
        rate: f64,
    },
    MultiHeadSelfAttention {
        d_model: usize,
        heads: usize,
        /// Per-head width; `None` means `d_model / heads`.
        head_dim: Option<usize>,
    },
    FeedForward {
        d_model: usize,
        d_ff: usize,
    },
    LayerNorm {
        d_model: usize,
    },
    Activation(Activation),
    Softmax,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NnError::InvalidSpec(msg));
        match *self {
            LayerSpec::Linear { input, output } if input == 0 || output == 0 => {
                bad(format!("linear dims must be positive: {input}x{output}"))
            }
            LayerSpec::Conv1d {
                in_ch,
                out_ch,
                kernel,
                stride,
            } if in_ch == 0 || out_ch == 0 || kernel == 0 || stride == 0 => {
                bad("conv1d dims must be positive".into())
            }
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
            } if in_ch == 0
                || out_ch == 0
                || kernel.0 == 0
                || kernel.1 == 0
                || stride.0 == 0
                || stride.1 == 0 =>
            {
                bad("conv2d dims must be positive".into())
            }
            LayerSpec::MaxPool1d { kernel: 0 } => bad("pool kernel must be positive".into()),
            LayerSpec::MaxPool2d { kernel } if kernel.0 == 0 || kernel.1 == 0 => {
                bad("pool kernel must be positive".into())
            }
            LayerSpec::BatchNorm { features: 0 } | LayerSpec::LayerNorm { d_model: 0 } => {
                bad("normalised width must be positive".into())
            }
            LayerSpec::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                bad(format!("dropout rate {rate} outside [0, 1)"))
            }
            LayerSpec::MultiHeadSelfAttention {
                d_model,
                heads,
                head_dim,
            } => {
                if d_model == 0 || heads == 0 || head_dim == Some(0) {
                    bad("attention dims must be positive".into())
                } else if head_dim.is_none() && d_model % heads != 0 {
                    bad(format!("d_model {d_model} not divisible by {heads} heads"))
                } else {
                    Ok(())
                }
            }
            LayerSpec::FeedForward { d_model, d_ff } if d_model == 0 || d_ff == 0 => {
                bad("feed-forward dims must be positive".into())
            }
            _ => Ok(()),
        }
    }

    /// Output shape for a given input shape, or a shape error.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        let err = |expect: &[usize]| Err(mismatch("output_shape", input, expect));
        match *self {
            LayerSpec::Linear { input: i, output } => match input.last() {
                Some(&d) if d == i => {
                    let mut s = input.to_vec();
                    *s.last_mut().unwrap() = output;
                    Ok(s)
                }
                _ => err(&[i]),
            },
            LayerSpec::Conv1d {
                in_ch,
                out_ch,
                kernel,
                stride,
            } => match *input {
                [b, c, l] if c == in_ch && l >= kernel => {
                    Ok(vec![b, out_ch, (l - kernel) / stride + 1])
                }
                _ => err(&[in_ch, kernel]),
            },
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
            } => match *input {
                [b, c, h, w] if c == in_ch && h >= kernel.0 && w >= kernel.1 => Ok(vec![
                    b,
                    out_ch,
                    (h - kernel.0) / stride.0 + 1,
                    (w - kernel.1) / stride.1 + 1,
                ]),
                _ => err(&[in_ch, kernel.0, kernel.1]),
            },
            LayerSpec::MaxPool1d { kernel } => match *input {
                [b, c, l] if l >= kernel => Ok(vec![b, c, l / kernel]),
                _ => err(&[kernel]),
            },
            LayerSpec::MaxPool2d { kernel } => match *input {
                [b, c, h, w] if h >= kernel.0 && w >= kernel.1 => {
                    Ok(vec![b, c, h / kernel.0, w / kernel.1])
                }
                _ => err(&[kernel.0, kernel.1]),
            },
            LayerSpec::BatchNorm { features } => {
                if input.len() >= 2 && input[1] == features {
                    Ok(input.to_vec())
                } else {
                    err(&[features])
                }
            }
            LayerSpec::MultiHeadSelfAttention { d_model, .. }
            | LayerSpec::FeedForward { d_model, .. }
            | LayerSpec::LayerNorm { d_model } => match input.last() {
                Some(&d) if d == d_model && (input.len() == 3 || !self.is_attention()) => {
                    Ok(input.to_vec())
                }
                _ => err(&[d_model]),
            },
            LayerSpec::Dropout { .. } | LayerSpec::Activation(_) | LayerSpec::Softmax => {
                Ok(input.to_vec())
            }
        }
    }

    fn is_attention(&self) -> bool {
        matches!(self, LayerSpec::MultiHeadSelfAttention { .. })
    }

    /// Registers the layer's parameters under `name` with LeCun-normal
    /// weights and zero biases.
    pub fn build<T: Float>(
        &self,
        name: &str,
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Layer> {
        self.validate()?;
        Ok(match *self {
            LayerSpec::Linear { input, output } => {
                Layer::Linear(Linear::new(name, input, output, store, rng))
            }
            LayerSpec::Conv1d {
                in_ch,
                out_ch,
                kernel,
                stride,
            } => {
                let w = store.add(
                    format!("{name}.weight"),
                    lecun_normal(&[out_ch, in_ch, kernel], in_ch * kernel, rng),
                    true,
                );
                let b = store.add(format!("{name}.bias"), Tensor::zeros(&[out_ch]), true);
                Layer::Conv1d { w, b, stride }
            }
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
            } => {
                let w = store.add(
                    format!("{name}.weight"),
                    lecun_normal(
                        &[out_ch, in_ch, kernel.0, kernel.1],
                        in_ch * kernel.0 * kernel.1,
                        rng,
                    ),
                    true,
                );
                let b = store.add(format!("{name}.bias"), Tensor::zeros(&[out_ch]), true);
                Layer::Conv2d { w, b, stride }
            }
            LayerSpec::MaxPool1d { kernel } => Layer::MaxPool1d(kernel),
            LayerSpec::MaxPool2d { kernel } => Layer::MaxPool2d(kernel),
            LayerSpec::BatchNorm { features } => Layer::BatchNorm(BatchNorm::new(name, features, store)),
            LayerSpec::Dropout { rate } => Layer::Dropout(rate),
            LayerSpec::MultiHeadSelfAttention {
                d_model,
                heads,
                head_dim,
            } => Layer::Attention(MultiHeadSelfAttention::new(
                name,
                d_model,
                heads,
                head_dim.unwrap_or(d_model / heads),
                store,
                rng,
            )),
            LayerSpec::FeedForward { d_model, d_ff } => Layer::FeedForward(FeedForward {
                up: Linear::new(&format!("{name}.up"), d_model, d_ff, store, rng),
                down: Linear::new(&format!("{name}.down"), d_ff, d_model, store, rng),
            }),
            LayerSpec::LayerNorm { d_model } => Layer::LayerNorm(LayerNorm::new(name, d_model, store)),
            LayerSpec::Activation(a) => Layer::Activation(a),
            LayerSpec::Softmax => Layer::Softmax,
        })
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Linear(Linear),
    Conv1d { w: ParamId, b: ParamId, stride: usize },
    Conv2d { w: ParamId, b: ParamId, stride: (usize, usize) },
    MaxPool1d(usize),
    MaxPool2d((usize, usize)),
    BatchNorm(BatchNorm),
    Dropout(f64),
    Attention(MultiHeadSelfAttention),
    FeedForward(FeedForward),
    LayerNorm(LayerNorm),
    Activation(Activation),
    Softmax,
}

impl Layer {
    pub fn forward<'t, T: Float>(&self, cx: &mut Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        match self {
            Layer::Linear(l) => l.forward(cx, x),
            Layer::Conv1d { w, b, stride } => x.conv1d(cx.param(*w), cx.param(*b), *stride),
            Layer::Conv2d { w, b, stride } => x.conv2d(cx.param(*w), cx.param(*b), *stride),
            Layer::MaxPool1d(k) => x.max_pool1d(*k),
            Layer::MaxPool2d(k) => x.max_pool2d(*k),
            Layer::BatchNorm(bn) => bn.forward(cx, x),
            Layer::Dropout(rate) => dropout(cx, x, *rate),
            Layer::Attention(a) => a.forward(cx, x),
            Layer::FeedForward(f) => f.forward(cx, x),
            Layer::LayerNorm(l) => l.forward(cx, x),
            Layer::Activation(Activation::Relu) => x.relu(),
            Layer::Activation(Activation::Gelu) => x.gelu(),
            Layer::Softmax => x.softmax_last(),
        }
    }
}

/// Inverted dropout: identity in eval mode, scaled Bernoulli mask in train mode.
pub fn dropout<'t, T: Float>(cx: &mut Ctx<'t, '_, T>, x: Var<'t, T>, rate: f64) -> Result<Var<'t, T>> {
    if !cx.training() || rate == 0.0 {
        return Ok(x);
    }
    let shape = x.shape();
    let n: usize = shape.iter().product();
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..n)
        .map(|_| if cx.rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    x.mul_const(Tensor::new(&shape, mask)?)
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Float>(
        name: &str,
        input: usize,
        output: usize,
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = store.add(
            format!("{name}.weight"),
            lecun_normal(&[input, output], input, rng),
            true,
        );
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[output]), true);
        Self { w, b }
    }

    pub fn forward<'t, T: Float>(&self, cx: &mut Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.matmul(cx.param(self.w))?.add_broadcast(cx.param(self.b))
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new<T: Float>(name: &str, features: usize, store: &mut ParamStore<T>) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[features]), true),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[features]), true),
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&[features]), false),
            running_var: store.add(format!("{name}.running_var"), Tensor::ones(&[features]), false),
        }
    }

    /// Batch statistics in train mode (running statistics are updated);
    /// running statistics in eval mode.
    pub fn forward<'t, T: Float>(&self, cx: &mut Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let (gamma, beta) = (cx.param(self.gamma), cx.param(self.beta));
        let eps = T::from_f64_lossy(NORM_EPS);
        if !cx.training() {
            let mean = cx.store.value(self.running_mean).data().to_vec();
            let var = cx.store.value(self.running_var).data().to_vec();
            return Ok(x.batch_norm(gamma, beta, Some((&mean, &var)), eps)?.0);
        }
        let (y, stats) = x.batch_norm(gamma, beta, None, eps)?;
        let stats = stats.expect("train-mode batch norm returns stats");
        let mom = T::from_f64_lossy(BN_MOMENTUM);
        let unbias = if stats.count > 1 {
            T::from_f64_lossy(stats.count as f64 / (stats.count - 1) as f64)
        } else {
            T::one()
        };
        let rm = cx.store.get_mut(self.running_mean).value.data_mut();
        for (r, &m) in rm.iter_mut().zip(&stats.mean) {
            *r = (T::one() - mom) * *r + mom * m;
        }
        let rv = cx.store.get_mut(self.running_var).value.data_mut();
        for (r, &v) in rv.iter_mut().zip(&stats.var) {
            *r = (T::one() - mom) * *r + mom * v * unbias;
        }
        Ok(y)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Float>(name: &str, d: usize, store: &mut ParamStore<T>) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[d]), true),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[d]), true),
        }
    }

    pub fn forward<'t, T: Float>(&self, cx: &mut Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm(cx.param(self.gamma), cx.param(self.beta), T::from_f64_lossy(NORM_EPS))
    }
}

/// Scaled dot-product self-attention over `[B, T, D]`.
#[derive(Debug, Clone)]
pub struct MultiHeadSelfAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
    pub head_dim: usize,
}

impl MultiHeadSelfAttention {
    pub fn new<T: Float>(
        name: &str,
        d_model: usize,
        heads: usize,
        head_dim: usize,
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let inner = heads * head_dim;
        Self {
            q: Linear::new(&format!("{name}.q"), d_model, inner, store, rng),
            k: Linear::new(&format!("{name}.k"), d_model, inner, store, rng),
            v: Linear::new(&format!("{name}.v"), d_model, inner, store, rng),
            out: Linear::new(&format!("{name}.out"), inner, d_model, store, rng),
            heads,
            head_dim,
        }
    }

    pub fn forward<'t, T: Float>(&self, cx: &mut Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = x.shape();
        let [b, t, _] = s[..] else {
            return Err(mismatch("attention", &s, &[0, 0, 0]));
        };
        let (h, dh) = (self.heads, self.head_dim);
        let split = |v: Var<'t, T>| -> Result<Var<'t, T>> {
            v.reshape(&[b, t, h, dh])?.permute(&[0, 2, 1, 3])?.reshape(&[b * h, t, dh])
        };
        let q = split(self.q.forward(cx, x)?)?;
        let k = split(self.k.forward(cx, x)?)?;
        let v = split(self.v.forward(cx, x)?)?;
        let scale = T::from_f64_lossy(1.0 / (dh as f64).sqrt());
        let attn = q.bmm(k, true)?.scale(scale)?.softmax_last()?;
        let ctx = attn
            .bmm(v, false)?
            .reshape(&[b, h, t, dh])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b, t, h * dh])?;
        self.out.forward(cx, ctx)
    }
}

/// Position-wise `Linear → GELU → Linear`.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn forward<'t, T: Float>(&self, cx: &mut Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let hidden = self.up.forward(cx, x)?.gelu()?;
        self.down.forward(cx, hidden)
    }
}

/// Post-norm transformer encoder layer:
/// `x = LN(x + Drop(MHSA(x)))`, then `x = LN(x + Drop(FF(x)))`.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub attention: MultiHeadSelfAttention,
    pub norm1: LayerNorm,
    pub ff: FeedForward,
    pub norm2: LayerNorm,
    pub dropout: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub d_model: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub d_ff: usize,
    pub dropout: f64,
}

impl EncoderLayer {
    pub fn new<T: Float>(
        name: &str,
        spec: &EncoderSpec,
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        LayerSpec::MultiHeadSelfAttention {
            d_model: spec.d_model,
            heads: spec.heads,
            head_dim: Some(spec.head_dim),
        }
        .validate()?;
        LayerSpec::FeedForward {
            d_model: spec.d_model,
            d_ff: spec.d_ff,
        }
        .validate()?;
        LayerSpec::Dropout { rate: spec.dropout }.validate()?;
        Ok(Self {
            attention: MultiHeadSelfAttention::new(
                &format!("{name}.attn"),
                spec.d_model,
                spec.heads,
                spec.head_dim,
                store,
                rng,
            ),
            norm1: LayerNorm::new(&format!("{name}.norm1"), spec.d_model, store),
            ff: FeedForward {
                up: Linear::new(&format!("{name}.ff.up"), spec.d_model, spec.d_ff, store, rng),
                down: Linear::new(&format!("{name}.ff.down"), spec.d_ff, spec.d_model, store, rng),
            },
            norm2: LayerNorm::new(&format!("{name}.norm2"), spec.d_model, store),
            dropout: spec.dropout,
        })
    }

    pub fn forward<'t, T: Float>(&self, cx: &mut Ctx<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let a = self.attention.forward(cx, x)?;
        let a = dropout(cx, a, self.dropout)?;
        let x = self.norm1.forward(cx, x.add(a)?)?;
        let f = self.ff.forward(cx, x)?;
        let f = dropout(cx, f, self.dropout)?;
        self.norm2.forward(cx, x.add(f)?)
    }
}
