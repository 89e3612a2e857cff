//! Per-SNR evaluation and the CSV report.

use std::fmt::Write as _;
use std::path::Path;

use radchar_nn::{Float, Tensor};

use crate::dataset::{Dataset, LabelNormalizer, StandardizationStats};
use crate::error::{Error, Result};
use crate::model::{MtlModel, Prediction, INPUT_LEN, NUM_CLASSES, NUM_REG};
use crate::waveform::{FRAME_LEN, SNR_RANGE_DB};

/// Anything that maps dataset records to predictions.
pub trait Predictor {
    fn predict(&mut self, ds: &Dataset, indices: &[usize]) -> Result<Vec<Prediction>>;
}

/// Returns the stored labels; useful to exercise the metrics.
pub struct OraclePredictor {
    pub normalizer: LabelNormalizer,
}

impl Predictor for OraclePredictor {
    fn predict(&mut self, ds: &Dataset, indices: &[usize]) -> Result<Vec<Prediction>> {
        indices
            .iter()
            .map(|&i| {
                let p = ds.params(i);
                let mut logits = [0.0; NUM_CLASSES];
                logits[p.class.index() as usize] = 1.0;
                Ok(Prediction::from_logits(&logits, self.normalizer.normalize(p)?))
            })
            .collect()
    }
}

/// A trained model with the training-split statistics it expects.
pub struct ModelPredictor<'m, T: Float> {
    pub model: &'m mut MtlModel<T>,
    pub stats: StandardizationStats,
    pub batch_size: usize,
}

impl<T: Float> ModelPredictor<'_, T> {
    /// Predictions for raw planar frames (`n × 1024` values).
    pub fn predict_frames(&mut self, frames: &[f32]) -> Result<Vec<Prediction>> {
        let mut out = Vec::with_capacity(frames.len() / INPUT_LEN);
        let mut buf = vec![0f32; INPUT_LEN];
        for chunk in frames.chunks(self.batch_size.max(1) * INPUT_LEN) {
            let b = chunk.len() / INPUT_LEN;
            let mut data = Vec::with_capacity(chunk.len());
            for f in chunk.chunks_exact(INPUT_LEN) {
                self.stats.apply(f, &mut buf);
                data.extend(buf.iter().map(|&v| T::from_f64_lossy(v as f64)));
            }
            out.extend(self.model.predict(Tensor::new(&[b, 2, FRAME_LEN], data)?)?);
        }
        Ok(out)
    }
}

impl<T: Float> Predictor for ModelPredictor<'_, T> {
    fn predict(&mut self, ds: &Dataset, indices: &[usize]) -> Result<Vec<Prediction>> {
        let mut frames = Vec::with_capacity(indices.len() * INPUT_LEN);
        for &i in indices {
            frames.extend_from_slice(ds.planar(i));
        }
        self.predict_frames(&frames)
    }
}

/// Metrics of one SNR bin (or of everything). Empty bins hold NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinMetrics {
    pub snr_db: i32,
    pub count: usize,
    pub accuracy: f64,
    /// n_p in pulses; t_pw, t_pri and t_d in µs.
    pub mae: [f64; NUM_REG],
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// One entry per integer SNR from -20 to 20 dB.
    pub bins: Vec<BinMetrics>,
    pub overall: BinMetrics,
}

/// Physical-unit scale per regression: pulses, then seconds to µs.
const UNIT_SCALE: [f64; NUM_REG] = [1.0, 1e6, 1e6, 1e6];

#[derive(Default, Clone, Copy)]
struct Acc {
    n: usize,
    correct: usize,
    abs: [f64; NUM_REG],
}

impl Acc {
    fn finish(&self, snr_db: i32) -> BinMetrics {
        let n = self.n as f64;
        BinMetrics {
            snr_db,
            count: self.n,
            accuracy: if self.n == 0 { f64::NAN } else { self.correct as f64 / n },
            mae: self.abs.map(|a| if self.n == 0 { f64::NAN } else { a / n }),
        }
    }
}

/// Accuracy and MAE per SNR bin. Regression outputs are denormalised
/// without rounding before the errors are taken.
pub fn evaluate(
    predictor: &mut dyn Predictor,
    ds: &Dataset,
    indices: &[usize],
    normalizer: &LabelNormalizer,
    batch_size: usize,
) -> Result<EvalReport> {
    let (lo, hi) = SNR_RANGE_DB;
    let mut bins = vec![Acc::default(); (hi - lo + 1) as usize];
    let mut all = Acc::default();
    for chunk in indices.chunks(batch_size.max(1)) {
        let preds = predictor.predict(ds, chunk)?;
        if preds.len() != chunk.len() {
            return Err(Error::Mismatch(format!("{} predictions for {} records", preds.len(), chunk.len())));
        }
        for (&i, pred) in chunk.iter().zip(&preds) {
            let p = ds.params(i);
            let truth = LabelNormalizer::raw(p);
            let est = normalizer.denormalize(&pred.reg_norm);
            let bin = (p.snr_db.round() as i32).clamp(lo, hi) - lo;
            for acc in [&mut bins[bin as usize], &mut all] {
                acc.n += 1;
                acc.correct += usize::from(pred.class == p.class.index() as usize);
                for k in 0..NUM_REG {
                    acc.abs[k] += (est[k] - truth[k]).abs() * UNIT_SCALE[k];
                }
            }
        }
    }
    Ok(EvalReport {
        bins: bins.iter().enumerate().map(|(k, a)| a.finish(lo + k as i32)).collect(),
        overall: all.finish(i32::MIN),
    })
}

pub const CSV_HEADER: &str = "snr_db,accuracy,mae_np,mae_tpw_us,mae_tpri_us,mae_td_us";

fn cell(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:.6}")
    }
}

impl EvalReport {
    pub fn bin(&self, snr_db: i32) -> Option<&BinMetrics> {
        self.bins.iter().find(|b| b.snr_db == snr_db)
    }

    /// One row per SNR bin; empty bins are written as `NaN`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for b in &self.bins {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                b.snr_db,
                cell(b.accuracy),
                cell(b.mae[0]),
                cell(b.mae[1]),
                cell(b.mae[2]),
                cell(b.mae[3])
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Spearman correlation of SNR against accuracy over non-empty bins.
    pub fn accuracy_trend(&self) -> f64 {
        let (x, y): (Vec<f64>, Vec<f64>) = self
            .bins
            .iter()
            .filter(|b| b.count > 0)
            .map(|b| (b.snr_db as f64, b.accuracy))
            .unzip();
        spearman(&x, &y)
    }
}

/// Average ranks, ties sharing the mean of their positions (1-based).
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman's rank correlation (Pearson on average ranks). NaN when either
/// side is constant or fewer than two points are given.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    if x.len() < 2 {
        return f64::NAN;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        // ties: ranks y = [1.5, 1.5, 3]
        let r = spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 7.0]);
        assert!((r - 0.866_025_403_784_438_6).abs() < 1e-12);
        assert!(spearman(&[1.0, 2.0], &[4.0, 4.0]).is_nan());
    }

    #[test]
    fn empty_bins_are_nan() {
        let report = EvalReport {
            bins: (-20..=20).map(|s| Acc::default().finish(s)).collect(),
            overall: Acc::default().finish(0),
        };
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 42);
        assert_eq!(csv.lines().nth(1).unwrap(), "-20,NaN,NaN,NaN,NaN,NaN");
    }
}
