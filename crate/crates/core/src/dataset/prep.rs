//! Splits, input standardisation and label scaling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::waveform::{SignalParams, DELAY_RANGE_S, PRI_RANGE_S, PULSES_RANGE, PW_RANGE_S};

/// Disjoint train / validation / test index sets, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// 70/15/15 split of `0..count` after a seeded shuffle; sizes are
/// `floor(0.70·n)`, `floor(0.15·n)` and the remainder.
pub fn split(count: usize, seed: u64) -> Result<Splits> {
    if count < 10 {
        return Err(Error::Config(format!("cannot split {count} records, need at least 10")));
    }
    let mut idx: Vec<usize> = (0..count).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = count * 70 / 100;
    let n_val = count * 15 / 100;
    let mut test = idx.split_off(n_train + n_val);
    let mut val = idx.split_off(n_train);
    let mut train = idx;
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(Splits { train, val, test })
}

/// Pooled scalar mean and variance over every I and Q value of the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: f64,
    pub variance: f64,
}

const MIN_VARIANCE: f64 = 1e-12;

impl StandardizationStats {
    /// Two-pass population statistics over the concatenation of `frames`.
    pub fn compute<'a>(frames: impl Iterator<Item = &'a [f32]> + Clone) -> Result<Self> {
        let (mut n, mut sum) = (0usize, 0f64);
        for f in frames.clone() {
            n += f.len();
            sum += f.iter().map(|&v| v as f64).sum::<f64>();
        }
        if n == 0 {
            return Err(Error::Config("standardisation needs a non-empty training split".into()));
        }
        let mean = sum / n as f64;
        let ss: f64 = frames
            .map(|f| f.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>())
            .sum();
        let variance = ss / n as f64;
        if !(variance >= MIN_VARIANCE) {
            return Err(Error::DegenerateVariance(variance));
        }
        Ok(Self { mean, variance })
    }

    pub fn apply(&self, x: &[f32], out: &mut [f32]) {
        let inv = 1.0 / self.variance.sqrt();
        for (o, &v) in out.iter_mut().zip(x) {
            *o = ((v as f64 - self.mean) * inv) as f32;
        }
    }
}

/// Label order used everywhere regressions appear.
pub const REG_NAMES: [&str; 4] = ["n_p", "t_pw", "t_pri", "t_d"];

/// Min-max bounds for the regression targets; times in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelNormalizer {
    pub n_p: (f64, f64),
    pub t_pw: (f64, f64),
    pub t_pri: (f64, f64),
    pub t_d: (f64, f64),
}

impl Default for LabelNormalizer {
    fn default() -> Self {
        Self {
            n_p: (PULSES_RANGE.0 as f64, PULSES_RANGE.1 as f64),
            t_pw: PW_RANGE_S,
            t_pri: PRI_RANGE_S,
            t_d: DELAY_RANGE_S,
        }
    }
}

impl LabelNormalizer {
    fn bounds(&self) -> [(f64, f64); 4] {
        [self.n_p, self.t_pw, self.t_pri, self.t_d]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in REG_NAMES.iter().zip(self.bounds()) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!("label bounds for {name} need min < max")));
            }
        }
        Ok(())
    }

    /// Physical labels in `REG_NAMES` order.
    pub fn raw(params: &SignalParams) -> [f64; 4] {
        [params.n_p as f64, params.t_pw, params.t_pri, params.t_d]
    }

    pub fn normalize(&self, params: &SignalParams) -> Result<[f64; 4]> {
        let raw = Self::raw(params);
        let mut out = [0.0; 4];
        for (k, (lo, hi)) in self.bounds().into_iter().enumerate() {
            if !(raw[k] >= lo && raw[k] <= hi) {
                return Err(Error::LabelOutOfRange {
                    name: REG_NAMES[k],
                    value: raw[k],
                    min: lo,
                    max: hi,
                });
            }
            out[k] = (raw[k] - lo) / (hi - lo);
        }
        Ok(out)
    }

    /// Inverse scaling; values outside `[0, 1]` extrapolate linearly.
    pub fn denormalize(&self, norm: &[f64; 4]) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (k, (lo, hi)) in self.bounds().into_iter().enumerate() {
            out[k] = lo + norm[k] * (hi - lo);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveform::SignalClass;

    #[test]
    fn split_sizes() {
        let s = split(100, 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 15, 15));
        let s = split(10_001, 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7000, 1500, 1501));
        assert!(split(9, 0).is_err());
    }

    #[test]
    fn ones_and_zeros_stats() {
        let frame: Vec<f32> = [vec![1.0; 512], vec![0.0; 512]].concat();
        let st = StandardizationStats::compute(std::iter::once(&frame[..])).unwrap();
        assert_eq!(st.mean, 0.5);
        assert_eq!(st.variance, 0.25);
    }

    #[test]
    fn zero_frames_are_degenerate() {
        let frame = vec![0f32; 1024];
        let r = StandardizationStats::compute([&frame[..], &frame[..]].into_iter());
        assert!(matches!(r, Err(Error::DegenerateVariance(_))));
    }

    #[test]
    fn label_endpoints() {
        let n = LabelNormalizer::default();
        let p = SignalParams {
            class: SignalClass::Lfm,
            t_pw: 10e-6,
            t_pri: 20e-6,
            n_p: 6,
            t_d: 1e-6,
            l_c: 1,
            snr_db: 0.0,
        };
        let v = n.normalize(&p).unwrap();
        assert_eq!(v[0], 1.0);
        assert_eq!(v[1], 0.0);
        assert!((v[2] - 0.5).abs() < 1e-12);
        assert_eq!(v[3], 0.0);
        let hi = SignalParams { t_pw: 16e-6, ..p };
        assert_eq!(n.normalize(&hi).unwrap()[1], 1.0);
        let bad = SignalParams { t_pw: 17e-6, ..p };
        assert!(matches!(n.normalize(&bad), Err(Error::LabelOutOfRange { name: "t_pw", .. })));
    }
}
