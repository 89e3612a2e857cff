//! Shared backbones, task heads and the hard-shared multi-task model.

use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use radchar_nn::layers::{dropout, BatchNorm, Linear};
use radchar_nn::{Ctx, EncoderLayer, EncoderSpec, Float, Layer, LayerSpec, Mode, ParamId, ParamStore, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::waveform::FRAME_LEN;

pub const NUM_CLASSES: usize = 5;
pub const NUM_REG: usize = 4;
/// Input values per example: I and Q channels of one frame.
pub const INPUT_LEN: usize = 2 * FRAME_LEN;
/// Tokens cut from the flattened `2×512` input.
pub const PATCHES: usize = 8;
pub const PATCH_LEN: usize = INPUT_LEN / PATCHES;

/// Names of the five heads; the first is the classifier.
pub const HEAD_NAMES: [&str; 5] = ["class", "n_p", "t_pw", "t_pri", "t_d"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneKind {
    Cnn2d,
    Cnn1d,
    IqstS,
    IqstL,
}

impl BackboneKind {
    pub const ALL: [BackboneKind; 4] = [Self::Cnn2d, Self::Cnn1d, Self::IqstS, Self::IqstL];

    pub fn name(self) -> &'static str {
        match self {
            Self::Cnn2d => "cnn2d",
            Self::Cnn1d => "cnn1d",
            Self::IqstS => "iqst-s",
            Self::IqstL => "iqst-l",
        }
    }

    pub fn is_transformer(self) -> bool {
        matches!(self, Self::IqstS | Self::IqstL)
    }
}

impl std::fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown model {s:?}, expected cnn1d, cnn2d, iqst-s or iqst-l")))
    }
}

/// Architecture hyperparameters. Transformer fields are ignored by the CNNs
/// and `conv_blocks` by the transformers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneKind,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    pub encoder_dropout: f64,
    pub conv_blocks: usize,
    pub filters: usize,
    pub head_filters: usize,
    pub backbone_dropout: f64,
    pub head_conv_dropout: f64,
    pub head_dense_dropout: f64,
}

impl ModelConfig {
    pub fn new(backbone: BackboneKind) -> Self {
        let (heads, layers) = match backbone {
            BackboneKind::IqstL => (9, 6),
            _ => (3, 3),
        };
        Self {
            backbone,
            d_model: 128,
            heads,
            layers,
            d_ff: 512,
            encoder_dropout: 0.1,
            conv_blocks: 1,
            filters: 8,
            head_filters: 8,
            backbone_dropout: 0.25,
            head_conv_dropout: 0.25,
            head_dense_dropout: 0.5,
        }
    }

    /// Per-head width: `ceil(d_model / heads)`.
    pub fn head_dim(&self) -> usize {
        self.d_model.div_ceil(self.heads.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("layers", self.layers),
            ("d_ff", self.d_ff),
            ("conv_blocks", self.conv_blocks),
            ("filters", self.filters),
            ("head_filters", self.head_filters),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model {name} must be positive")));
        }
        for (name, r) in [
            ("encoder_dropout", self.encoder_dropout),
            ("backbone_dropout", self.backbone_dropout),
            ("head_conv_dropout", self.head_conv_dropout),
            ("head_dense_dropout", self.head_dense_dropout),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!("{name} {r} outside [0, 1)")));
            }
        }
        if self.backbone.is_transformer() && self.d_model < 3 {
            return Err(Error::Config("d_model must be at least the head kernel width 3".into()));
        }
        self.feature_shape().map(|_| ())
    }

    /// Backbone output shape for one example.
    pub fn feature_shape(&self) -> Result<Vec<usize>> {
        let mut shape = match self.backbone {
            BackboneKind::Cnn2d => vec![1, 32, 32],
            BackboneKind::Cnn1d => vec![2, FRAME_LEN],
            _ => return Ok(vec![self.d_model]),
        };
        for spec in self.cnn_block_specs() {
            let mut full = vec![1];
            full.extend(&shape);
            shape = spec.output_shape(&full).map_err(Error::Nn)?[1..].to_vec();
        }
        Ok(shape)
    }

    fn cnn_block_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let two_d = self.backbone == BackboneKind::Cnn2d;
        for b in 0..self.conv_blocks {
            let in_ch = match (b, two_d) {
                (0, true) => 1,
                (0, false) => 2,
                _ => self.filters,
            };
            if two_d {
                specs.push(LayerSpec::Conv2d {
                    in_ch,
                    out_ch: self.filters,
                    kernel: (2, 2),
                    stride: (1, 1),
                });
                specs.push(LayerSpec::MaxPool2d { kernel: (2, 2) });
            } else {
                specs.push(LayerSpec::Conv1d {
                    in_ch,
                    out_ch: self.filters,
                    kernel: 2,
                    stride: 1,
                });
                specs.push(LayerSpec::MaxPool1d { kernel: 2 });
            }
        }
        specs
    }

    fn encoder_spec(&self) -> EncoderSpec {
        EncoderSpec {
            d_model: self.d_model,
            heads: self.heads,
            head_dim: self.head_dim(),
            d_ff: self.d_ff,
            dropout: self.encoder_dropout,
        }
    }
}

/// Fixed sinusoidal position codes, `[tokens, d]`.
pub fn sinusoidal_positions(tokens: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; tokens * d];
    for pos in 0..tokens {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
            pe[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

#[derive(Debug, Clone)]
enum Backbone {
    Cnn {
        /// Alternating convolution and pooling layers.
        blocks: Vec<Layer>,
        image: bool,
        dropout: f64,
    },
    Iqst {
        proj: Linear,
        token: ParamId,
        positions: Vec<f64>,
        layers: Vec<EncoderLayer>,
    },
}

#[derive(Debug, Clone)]
struct Head {
    conv: Layer,
    bn: BatchNorm,
    dense: Linear,
    /// The feature vector is viewed as a one-channel sequence before the convolution.
    as_sequence: bool,
    conv_dropout: f64,
    dense_dropout: f64,
}

impl Head {
    fn forward<'t, T: Float>(&self, cx: &mut Ctx<'t, '_, T>, feat: Var<'t, T>) -> radchar_nn::Result<Var<'t, T>> {
        let b = feat.shape()[0];
        let x = if self.as_sequence {
            let d = feat.shape()[1];
            feat.reshape(&[b, 1, d])?
        } else {
            feat
        };
        let h = self.conv.forward(cx, x)?;
        let h = self.bn.forward(cx, h)?.relu()?;
        let h = dropout(cx, h, self.conv_dropout)?;
        let n = h.shape()[1..].iter().product();
        let h = dropout(cx, h.reshape(&[b, n])?, self.dense_dropout)?;
        self.dense.forward(cx, h)
    }
}

/// Differentiable outputs of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct TaskOutputs<'t, T: Float> {
    /// `[B, 5]`
    pub logits: Var<'t, T>,
    /// Four `[B, 1]` regressions in normalised label space, `REG_NAMES` order.
    pub reg: [Var<'t, T>; NUM_REG],
}

/// Plain-value prediction for one example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub probabilities: [f64; NUM_CLASSES],
    pub reg_norm: [f64; NUM_REG],
}

impl Prediction {
    pub fn from_logits(logits: &[f64], reg_norm: [f64; NUM_REG]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let total: f64 = exp.iter().sum();
        let mut probabilities = [0.0; NUM_CLASSES];
        for (p, e) in probabilities.iter_mut().zip(&exp) {
            *p = e / total;
        }
        // first maximum wins ties
        let class = (0..NUM_CLASSES).fold(0, |best, k| if logits[k] > logits[best] { k } else { best });
        Self {
            class,
            probabilities,
            reg_norm,
        }
    }
}

/// Layer graph without parameter storage.
#[derive(Debug, Clone)]
pub struct MtlNet {
    backbone: Backbone,
    heads: Vec<Head>,
}

impl MtlNet {
    fn build<T: Float>(cfg: &ModelConfig, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let backbone = match cfg.backbone {
            BackboneKind::Cnn2d | BackboneKind::Cnn1d => {
                let mut blocks = Vec::new();
                for (k, spec) in cfg.cnn_block_specs().iter().enumerate() {
                    blocks.push(spec.build(&format!("backbone.block{}.{}", k / 2, k % 2), store, rng)?);
                }
                Backbone::Cnn {
                    blocks,
                    image: cfg.backbone == BackboneKind::Cnn2d,
                    dropout: cfg.backbone_dropout,
                }
            }
            BackboneKind::IqstS | BackboneKind::IqstL => {
                let proj = Linear::new("backbone.patch", PATCH_LEN, cfg.d_model, store, rng);
                let token = store.add(
                    "backbone.shared_token",
                    radchar_nn::init::lecun_normal(&[cfg.d_model], cfg.d_model, rng),
                    true,
                );
                let spec = cfg.encoder_spec();
                let layers = (0..cfg.layers)
                    .map(|l| EncoderLayer::new(&format!("backbone.encoder{l}"), &spec, store, rng))
                    .collect::<radchar_nn::Result<_>>()?;
                Backbone::Iqst {
                    proj,
                    token,
                    positions: sinusoidal_positions(PATCHES + 1, cfg.d_model),
                    layers,
                }
            }
        };
        let feat = cfg.feature_shape()?;
        let as_sequence = feat.len() == 1;
        let (spec, probe) = match feat[..] {
            [c, h, w] => (
                LayerSpec::Conv2d {
                    in_ch: c,
                    out_ch: cfg.head_filters,
                    kernel: (3, 3),
                    stride: (1, 1),
                },
                vec![1, c, h, w],
            ),
            [c, l] => (
                LayerSpec::Conv1d {
                    in_ch: c,
                    out_ch: cfg.head_filters,
                    kernel: 3,
                    stride: 1,
                },
                vec![1, c, l],
            ),
            _ => (
                LayerSpec::Conv1d {
                    in_ch: 1,
                    out_ch: cfg.head_filters,
                    kernel: 3,
                    stride: 1,
                },
                vec![1, 1, feat[0]],
            ),
        };
        let flat: usize = spec.output_shape(&probe)?[1..].iter().product();
        let mut heads = Vec::new();
        for (k, name) in HEAD_NAMES.iter().enumerate() {
            let prefix = format!("head.{name}");
            let conv = spec.build(&format!("{prefix}.conv"), store, rng)?;
            let bn = BatchNorm::new(&format!("{prefix}.bn"), cfg.head_filters, store);
            let out = if k == 0 { NUM_CLASSES } else { 1 };
            let dense = Linear::new(&format!("{prefix}.dense"), flat, out, store, rng);
            heads.push(Head {
                conv,
                bn,
                dense,
                as_sequence,
                conv_dropout: cfg.head_conv_dropout,
                dense_dropout: cfg.head_dense_dropout,
            });
        }
        Ok(Self { backbone, heads })
    }

    /// Shared features from a `[B, 2, 512]` input.
    pub fn features<'t, T: Float>(&self, cx: &mut Ctx<'t, '_, T>, x: Var<'t, T>) -> radchar_nn::Result<Var<'t, T>> {
        let b = x.shape()[0];
        match &self.backbone {
            Backbone::Cnn { blocks, image, dropout: rate } => {
                // I then Q, row-major fill of 32×32
                let mut h = if *image { x.reshape(&[b, 1, 32, 32])? } else { x };
                for pair in blocks.chunks(2) {
                    h = pair[0].forward(cx, h)?.relu()?;
                    h = pair[1].forward(cx, h)?;
                    h = dropout(cx, h, *rate)?;
                }
                Ok(h)
            }
            Backbone::Iqst {
                proj,
                token,
                positions,
                layers,
            } => {
                // I fills tokens 0..4, Q fills 4..8
                let tokens = proj.forward(cx, x.reshape(&[b, PATCHES, PATCH_LEN])?)?;
                let seq = tokens.prepend_token(cx.param(*token))?;
                let d = seq.shape()[2];
                let pe = cx.tape.constant(Tensor::from_f64(&[PATCHES + 1, d], positions)?);
                let mut h = seq.add_broadcast(pe)?;
                for layer in layers {
                    h = layer.forward(cx, h)?;
                }
                h.select_token(0)
            }
        }
    }

    /// Runs a single head on shared features.
    pub fn head<'t, T: Float>(&self, k: usize, cx: &mut Ctx<'t, '_, T>, feat: Var<'t, T>) -> radchar_nn::Result<Var<'t, T>> {
        self.heads[k].forward(cx, feat)
    }

    pub fn forward<'t, T: Float>(&self, cx: &mut Ctx<'t, '_, T>, x: Var<'t, T>) -> radchar_nn::Result<TaskOutputs<'t, T>> {
        let feat = self.features(cx, x)?;
        let logits = self.head(0, cx, feat)?;
        let reg = [
            self.head(1, cx, feat)?,
            self.head(2, cx, feat)?,
            self.head(3, cx, feat)?,
            self.head(4, cx, feat)?,
        ];
        Ok(TaskOutputs { logits, reg })
    }
}

/// A multi-task model: architecture, configuration and parameters.
#[derive(Debug, Clone)]
pub struct MtlModel<T: Float> {
    pub config: ModelConfig,
    pub net: MtlNet,
    pub store: ParamStore<T>,
}

impl<T: Float> MtlModel<T> {
    /// Builds the model with LeCun-normal weights drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = MtlNet::build(&config, &mut store, &mut rng)?;
        Ok(Self { config, net, store })
    }

    /// Forward pass on a `[B, 2, 512]` batch of standardised frames.
    pub fn forward<'t>(
        &mut self,
        tape: &'t Tape<T>,
        x: Tensor<T>,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<TaskOutputs<'t, T>> {
        check_input(x.shape())?;
        let xv = tape.constant(x);
        let mut cx = Ctx {
            tape,
            store: &mut self.store,
            mode,
            rng,
        };
        Ok(self.net.forward(&mut cx, xv)?)
    }

    /// Shared backbone output only.
    pub fn features<'t>(&mut self, tape: &'t Tape<T>, x: Tensor<T>, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Var<'t, T>> {
        check_input(x.shape())?;
        let xv = tape.constant(x);
        let mut cx = Ctx {
            tape,
            store: &mut self.store,
            mode,
            rng,
        };
        Ok(self.net.features(&mut cx, xv)?)
    }

    /// Eval-mode predictions for a `[B, 2, 512]` batch.
    pub fn predict(&mut self, x: Tensor<T>) -> Result<Vec<Prediction>> {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&tape, x, Mode::Eval, &mut rng)?;
        let logits = out.logits.value().to_f64_vec();
        let reg: Vec<Vec<f64>> = out.reg.iter().map(|r| r.value().to_f64_vec()).collect();
        Ok(logits
            .chunks_exact(NUM_CLASSES)
            .enumerate()
            .map(|(i, l)| Prediction::from_logits(l, [reg[0][i], reg[1][i], reg[2][i], reg[3][i]]))
            .collect())
    }

    pub fn num_trainable(&self) -> usize {
        self.store.num_trainable()
    }

    pub fn backbone_params(&self) -> usize {
        self.store.num_trainable_with_prefix("backbone.")
    }

    pub fn head_params(&self, k: usize) -> usize {
        self.store.num_trainable_with_prefix(&format!("head.{}.", HEAD_NAMES[k]))
    }

    pub fn cast<U: Float>(&self) -> MtlModel<U> {
        MtlModel {
            config: self.config.clone(),
            net: self.net.clone(),
            store: self.store.cast(),
        }
    }
}

fn check_input(shape: &[usize]) -> Result<()> {
    if shape.len() == 3 && shape[0] > 0 && shape[1] == 2 && shape[2] == FRAME_LEN {
        Ok(())
    } else {
        Err(Error::Nn(radchar_nn::NnError::ShapeMismatch {
            op: "model input",
            lhs: shape.to_vec(),
            rhs: vec![0, 2, FRAME_LEN],
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_shapes() {
        assert_eq!(ModelConfig::new(BackboneKind::Cnn2d).feature_shape().unwrap(), vec![8, 15, 15]);
        assert_eq!(ModelConfig::new(BackboneKind::Cnn1d).feature_shape().unwrap(), vec![8, 255]);
        assert_eq!(ModelConfig::new(BackboneKind::IqstS).feature_shape().unwrap(), vec![128]);
    }

    #[test]
    fn head_widths() {
        assert_eq!(ModelConfig::new(BackboneKind::IqstS).head_dim(), 43);
        assert_eq!(ModelConfig::new(BackboneKind::IqstL).head_dim(), 15);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("iqst-s".parse::<BackboneKind>().unwrap(), BackboneKind::IqstS);
        assert_eq!("CNN1D".parse::<BackboneKind>().unwrap(), BackboneKind::Cnn1d);
        assert!("resnet".parse::<BackboneKind>().is_err());
    }

    #[test]
    fn positions_start_with_sin_cos() {
        let pe = sinusoidal_positions(2, 4);
        assert_eq!(&pe[..4], &[0.0, 1.0, 0.0, 1.0]);
        assert!((pe[4] - 1f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn ties_pick_first_class() {
        let p = Prediction::from_logits(&[1.0, 3.0, 3.0, 0.0, 0.0], [0.0; 4]);
        assert_eq!(p.class, 1);
        assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
