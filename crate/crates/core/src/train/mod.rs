//! Multi-task loss and the training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use radchar_nn::{Adam, AdamConfig, Float, Mode, NnError, ParamStore, Tape, Tensor, Var};

use crate::dataset::{Dataset, LabelNormalizer, StandardizationStats};
use crate::error::{Error, Result};
use crate::model::{MtlModel, TaskOutputs, INPUT_LEN, NUM_REG};
use crate::waveform::FRAME_LEN;

pub mod eval;

/// Loss weights: classification first, then `REG_NAMES` order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskWeights {
    pub class: f64,
    pub n_p: f64,
    pub t_pw: f64,
    pub t_pri: f64,
    pub t_d: f64,
}

impl Default for TaskWeights {
    fn default() -> Self {
        Self {
            class: 0.1,
            n_p: 0.225,
            t_pw: 0.225,
            t_pri: 0.225,
            t_d: 0.225,
        }
    }
}

impl TaskWeights {
    pub fn as_array(&self) -> [f64; 5] {
        [self.class, self.n_p, self.t_pw, self.t_pri, self.t_d]
    }

    pub fn from_array(w: [f64; 5]) -> Result<Self> {
        let t = Self {
            class: w[0],
            n_p: w[1],
            t_pw: w[2],
            t_pri: w[3],
            t_d: w[4],
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!("task weights must be finite and >= 0, got {:?}", self.as_array())))
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        let w = self.as_array().map(|w| w * k);
        Self {
            class: w[0],
            n_p: w[1],
            t_pw: w[2],
            t_pri: w[3],
            t_d: w[4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub split_seed: u64,
    pub weights: TaskWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 5e-4,
            batch_size: 64,
            seed: 0,
            split_seed: 0,
            weights: TaskWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config("epochs, batch size and learning rate must be positive".into()));
        }
        self.weights.validate()
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        crate::dataset::hex(&Sha256::digest(json))
    }
}

/// Targets for a batch: class labels and normalised regressions.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub class: Vec<usize>,
    /// `[task][example]`
    pub reg: [Vec<f64>; NUM_REG],
}

/// Weighted loss and its unweighted components.
pub struct Loss<'t, T: Float> {
    pub total: Var<'t, T>,
    /// Unweighted CE then the four L1 terms.
    pub parts: [f64; 5],
}

/// `w_class·CE + Σ w_i·L1_i`; every term is kept in the graph so a zero
/// weight yields an exactly zero gradient.
pub fn mtl_loss<'t, T: Float>(out: &TaskOutputs<'t, T>, targets: &Targets, weights: &TaskWeights) -> Result<Loss<'t, T>> {
    let w = weights.as_array();
    let ce = out.logits.cross_entropy(&targets.class)?;
    let mut parts = [ce.value().item().as_f64(), 0.0, 0.0, 0.0, 0.0];
    let mut total = ce.scale(T::from_f64_lossy(w[0]))?;
    for k in 0..NUM_REG {
        let target: Vec<T> = targets.reg[k].iter().map(|&v| T::from_f64_lossy(v)).collect();
        let l1 = out.reg[k].l1_loss(&target)?;
        parts[k + 1] = l1.value().item().as_f64();
        total = total.add(l1.scale(T::from_f64_lossy(w[k + 1]))?)?;
    }
    Ok(Loss { total, parts })
}

/// Standardised inputs and normalised labels for a subset of a dataset.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub x: Vec<f32>,
    pub class: Vec<usize>,
    pub reg: Vec<[f64; NUM_REG]>,
    pub snr_db: Vec<f64>,
}

impl Prepared {
    pub fn new(ds: &Dataset, indices: &[usize], stats: &StandardizationStats, norm: &LabelNormalizer) -> Result<Self> {
        let mut x = vec![0f32; indices.len() * INPUT_LEN];
        let mut class = Vec::with_capacity(indices.len());
        let mut reg = Vec::with_capacity(indices.len());
        let mut snr_db = Vec::with_capacity(indices.len());
        for (k, &i) in indices.iter().enumerate() {
            stats.apply(ds.planar(i), &mut x[k * INPUT_LEN..(k + 1) * INPUT_LEN]);
            let p = ds.params(i);
            class.push(p.class.index() as usize);
            reg.push(norm.normalize(p)?);
            snr_db.push(p.snr_db);
        }
        Ok(Self { x, class, reg, snr_db })
    }

    pub fn len(&self) -> usize {
        self.class.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class.is_empty()
    }

    /// `[B, 2, 512]` input and targets for the given rows.
    pub fn batch<T: Float>(&self, rows: &[usize]) -> (Tensor<T>, Targets) {
        let mut data = Vec::with_capacity(rows.len() * INPUT_LEN);
        for &r in rows {
            data.extend(self.x[r * INPUT_LEN..(r + 1) * INPUT_LEN].iter().map(|&v| T::from_f64_lossy(v as f64)));
        }
        let x = Tensor::new(&[rows.len(), 2, FRAME_LEN], data).expect("batch shape");
        let targets = Targets {
            class: rows.iter().map(|&r| self.class[r]).collect(),
            reg: std::array::from_fn(|k| rows.iter().map(|&r| self.reg[r][k]).collect()),
        };
        (x, targets)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Unweighted mean task losses on the training batches: CE, then L1 in `REG_NAMES` order.
    pub train_task_losses: [f64; 5],
    pub val_task_losses: Option<[f64; 5]>,
}

/// Parameters and optimiser state at some point of training.
#[derive(Debug, Clone)]
pub struct Snapshot<T> {
    pub epoch: usize,
    pub store: ParamStore<T>,
    pub adam: Adam<T>,
}

pub struct FitOutcome<T> {
    pub history: Vec<EpochLog>,
    /// Lowest validation loss, or the last epoch when there is no validation set.
    pub best: Snapshot<T>,
    pub last: Snapshot<T>,
}

fn non_finite(epoch: usize, batch: usize, parts: &[f64; 5]) -> Error {
    Error::NonFiniteLoss {
        epoch,
        batch,
        losses: format!(
            "ce={} n_p={} t_pw={} t_pri={} t_d={}",
            parts[0], parts[1], parts[2], parts[3], parts[4]
        ),
    }
}

/// Mean weighted loss (and unweighted parts) of `data` in eval mode.
pub fn evaluate_loss<T: Float>(model: &mut MtlModel<T>, data: &Prepared, weights: &TaskWeights, batch_size: usize) -> Result<(f64, [f64; 5])> {
    let rows: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut total, mut parts) = (0.0, [0.0; 5]);
    for chunk in rows.chunks(batch_size.max(1)) {
        let (x, targets) = data.batch::<T>(chunk);
        let tape = Tape::new();
        let out = model.forward(&tape, x, Mode::Eval, &mut rng)?;
        let loss = mtl_loss(&out, &targets, weights)?;
        let n = chunk.len() as f64;
        total += loss.total.value().item().as_f64() * n;
        for (p, v) in parts.iter_mut().zip(loss.parts) {
            *p += v * n;
        }
    }
    let n = data.len().max(1) as f64;
    Ok((total / n, parts.map(|p| p / n)))
}

/// One optimisation step on `rows`; returns the weighted loss and its parts.
pub fn train_step<T: Float>(
    model: &mut MtlModel<T>,
    adam: &mut Adam<T>,
    data: &Prepared,
    rows: &[usize],
    weights: &TaskWeights,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, [f64; 5])> {
    let (x, targets) = data.batch::<T>(rows);
    let tape = Tape::new();
    let out = model.forward(&tape, x, Mode::Train, rng)?;
    let loss = mtl_loss(&out, &targets, weights)?;
    let value = loss.total.value().item().as_f64();
    let grads = tape.backward(loss.total)?;
    model.store.zero_grad();
    model.store.accumulate(&grads);
    adam.step(&mut model.store);
    Ok((value, loss.parts))
}

/// Mini-batch Adam on `train` with per-epoch validation; the callback sees
/// each epoch's log as soon as it is complete.
pub fn fit<T: Float>(
    model: &mut MtlModel<T>,
    train: &Prepared,
    val: Option<&Prepared>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog) -> Result<()>,
) -> Result<FitOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &model.store,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Snapshot<T>)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut parts) = (0.0, [0.0; 5]);
        for (b, rows) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, p) = match train_step(model, &mut adam, train, rows, &cfg.weights, &mut rng) {
                Ok(v) => v,
                Err(Error::Nn(NnError::NonFinite { .. })) => return Err(non_finite(epoch, b, &[f64::NAN; 5])),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(non_finite(epoch, b, &p));
            }
            let n = rows.len() as f64;
            total += loss * n;
            for (acc, v) in parts.iter_mut().zip(p) {
                *acc += v * n;
            }
        }
        let n = train.len() as f64;
        let (val_loss, val_parts) = match val {
            Some(v) if !v.is_empty() => {
                let (l, p) = evaluate_loss(model, v, &cfg.weights, cfg.batch_size)?;
                (Some(l), Some(p))
            }
            _ => (None, None),
        };
        let log = EpochLog {
            epoch,
            train_loss: total / n,
            val_loss,
            train_task_losses: parts.map(|p| p / n),
            val_task_losses: val_parts,
        };
        on_epoch(&log)?;
        let score = val_loss.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(s, _)| score < *s || val_loss.is_none()) {
            best = Some((
                score,
                Snapshot {
                    epoch,
                    store: model.store.clone(),
                    adam: adam.clone(),
                },
            ));
        }
        history.push(log);
    }
    let last = Snapshot {
        epoch: cfg.epochs,
        store: model.store.clone(),
        adam,
    };
    let best = best.map(|(_, s)| s).expect("at least one epoch");
    Ok(FitOutcome { history, best, last })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_weights_sum_to_one() {
        let w = TaskWeights::default().as_array();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(TaskWeights::from_array([0.1, -1.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn config_hash_changes_with_config() {
        let a = TrainConfig::default();
        let b = TrainConfig { lr: 1e-3, ..a.clone() };
        assert_eq!(a.hash(), TrainConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
    }
}
