use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::waveform::{
    DELAY_RANGE_S, FRAME_LEN, PRI_RANGE_S, PULSES_RANGE, PW_RANGE_S, SAMPLE_RATE_HZ, SNR_RANGE_DB,
};

pub const DEFAULT_COUNT: u64 = 100_000;

/// Everything needed to regenerate a dataset bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub count: u64,
    pub seed: u64,
    pub snr_min: i32,
    pub snr_max: i32,
    pub t_pw_s: (f64, f64),
    pub t_pri_s: (f64, f64),
    pub t_d_s: (f64, f64),
    pub n_p: (u32, u32),
    pub sample_rate_hz: f64,
    pub samples_per_frame: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            count: DEFAULT_COUNT,
            seed: 0,
            snr_min: SNR_RANGE_DB.0,
            snr_max: SNR_RANGE_DB.1,
            t_pw_s: PW_RANGE_S,
            t_pri_s: PRI_RANGE_S,
            t_d_s: DELAY_RANGE_S,
            n_p: PULSES_RANGE,
            sample_rate_hz: SAMPLE_RATE_HZ,
            samples_per_frame: FRAME_LEN,
        }
    }
}

fn sub_range(name: &str, (lo, hi): (f64, f64), (min, max): (f64, f64)) -> Result<()> {
    // Labels are stored as f32, so the range must contain at least one f32.
    let representable = {
        let q = lo as f32;
        let q = if (q as f64) < lo { q.next_up() } else { q };
        (q as f64) <= hi
    };
    if lo.is_finite() && hi.is_finite() && min <= lo && lo <= hi && hi <= max && representable {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{name} range [{lo:e}, {hi:e}] must be ordered and within [{min:e}, {max:e}]"
        )))
    }
}

impl DatasetConfig {
    pub fn with_count_seed(count: u64, seed: u64) -> Self {
        Self {
            count,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("count must be at least 1".into()));
        }
        if self.snr_min > self.snr_max {
            return Err(Error::Config(format!(
                "snr_min {} exceeds snr_max {}",
                self.snr_min, self.snr_max
            )));
        }
        if self.snr_min < SNR_RANGE_DB.0 || self.snr_max > SNR_RANGE_DB.1 {
            return Err(Error::Config(format!(
                "snr bounds [{}, {}] outside [{}, {}]",
                self.snr_min, self.snr_max, SNR_RANGE_DB.0, SNR_RANGE_DB.1
            )));
        }
        sub_range("t_pw", self.t_pw_s, PW_RANGE_S)?;
        sub_range("t_pri", self.t_pri_s, PRI_RANGE_S)?;
        sub_range("t_d", self.t_d_s, DELAY_RANGE_S)?;
        let (lo, hi) = self.n_p;
        if lo > hi || lo < PULSES_RANGE.0 || hi > PULSES_RANGE.1 {
            return Err(Error::Config(format!("n_p range [{lo}, {hi}] outside [2, 6]")));
        }
        if self.sample_rate_hz != SAMPLE_RATE_HZ {
            return Err(Error::Config(format!(
                "sample rate is fixed at {SAMPLE_RATE_HZ} Hz, got {}",
                self.sample_rate_hz
            )));
        }
        if self.samples_per_frame != FRAME_LEN {
            return Err(Error::Config(format!(
                "frame length is fixed at {FRAME_LEN}, got {}",
                self.samples_per_frame
            )));
        }
        Ok(())
    }
}
