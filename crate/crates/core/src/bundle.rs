//! Self-describing model checkpoints: parameters, optimiser state and
//! everything evaluation needs to reproduce the training-time preprocessing.

use std::path::Path;

use serde::{Deserialize, Serialize};

use radchar_nn::{Adam, AdamConfig, Checkpoint, ParamStore, Tensor};

use crate::dataset::{LabelNormalizer, StandardizationStats};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, MtlModel};
use crate::train::TrainConfig;

pub const BUNDLE_KIND: &str = "radchar-model";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub kind: String,
    pub generator: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub train_config_hash: String,
    pub stats: StandardizationStats,
    pub normalizer: LabelNormalizer,
    /// SHA-256 of the dataset file the model was trained on.
    pub dataset_fingerprint: String,
    pub split_seed: u64,
    pub epoch: usize,
    pub val_loss: Option<f64>,
    pub adam_step: u64,
}

impl BundleMeta {
    /// Errors unless `fingerprint` names the training dataset.
    pub fn check_dataset(&self, fingerprint: &str) -> Result<()> {
        if self.dataset_fingerprint == fingerprint {
            Ok(())
        } else {
            Err(Error::Mismatch(format!(
                "checkpoint was trained on dataset {} but this dataset is {}",
                short(&self.dataset_fingerprint),
                short(fingerprint)
            )))
        }
    }
}

fn short(h: &str) -> &str {
    &h[..h.len().min(12)]
}

pub struct Bundle {
    pub meta: BundleMeta,
    pub model: MtlModel<f32>,
    pub adam: Option<Adam<f32>>,
}

const PARAM: &str = "param/";
const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";

pub fn to_checkpoint(meta: &BundleMeta, store: &ParamStore<f32>, adam: Option<&Adam<f32>>) -> Checkpoint {
    let mut ckpt = Checkpoint::new(serde_json::to_value(meta).expect("meta serialises"));
    for (_, p) in store.iter() {
        ckpt.push(format!("{PARAM}{}", p.name), &p.value);
    }
    if let Some(adam) = adam {
        for (((_, p), m), v) in store.iter().zip(&adam.m).zip(&adam.v) {
            ckpt.push(format!("{ADAM_M}{}", p.name), m);
            ckpt.push(format!("{ADAM_V}{}", p.name), v);
        }
    }
    ckpt
}

pub fn save(path: &Path, meta: &BundleMeta, store: &ParamStore<f32>, adam: Option<&Adam<f32>>) -> Result<()> {
    to_checkpoint(meta, store, adam).save(path)?;
    Ok(())
}

fn take(ckpt: &Checkpoint, name: &str, like: &Tensor<f32>) -> Result<Tensor<f32>> {
    let t = ckpt.get::<f32>(name)?;
    if t.shape() != like.shape() {
        return Err(Error::Format(format!(
            "tensor {name} has shape {:?}, model expects {:?}",
            t.shape(),
            like.shape()
        )));
    }
    Ok(t)
}

/// Rebuilds the model described by the checkpoint and loads its tensors.
pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Bundle> {
    let meta: BundleMeta = serde_json::from_value(ckpt.meta.clone())
        .map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
    if meta.kind != BUNDLE_KIND {
        return Err(Error::Format(format!("checkpoint kind {:?} is not {BUNDLE_KIND}", meta.kind)));
    }
    meta.normalizer.validate()?;
    let mut model = MtlModel::<f32>::new(meta.model.clone(), 0)?;
    let expected = model.store.len();
    let stored = ckpt.names().filter(|n| n.starts_with(PARAM)).count();
    if stored != expected {
        return Err(Error::Format(format!("checkpoint holds {stored} parameters, model has {expected}")));
    }
    for (_, p) in model.store.iter_mut() {
        p.value = take(ckpt, &format!("{PARAM}{}", p.name), &p.value)?;
    }
    let has_adam = ckpt.names().any(|n| n.starts_with(ADAM_M));
    let adam = if has_adam {
        let mut adam = Adam::new(
            AdamConfig {
                lr: meta.train.lr,
                ..AdamConfig::default()
            },
            &model.store,
        );
        adam.step = meta.adam_step;
        for (((_, p), m), v) in model.store.iter().zip(adam.m.iter_mut()).zip(adam.v.iter_mut()) {
            *m = take(ckpt, &format!("{ADAM_M}{}", p.name), &p.value)?;
            *v = take(ckpt, &format!("{ADAM_V}{}", p.name), &p.value)?;
        }
        Some(adam)
    } else {
        None
    };
    Ok(Bundle { meta, model, adam })
}

pub fn load(path: &Path) -> Result<Bundle> {
    from_checkpoint(&Checkpoint::load(path)?)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Bundle> {
    from_checkpoint(&Checkpoint::from_bytes(bytes)?)
}
