//! Baseband synthesis of pulsed radar frames.

pub mod codes;

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use codes::{barker_code, frank_code, frank_order, polyphase_barker_code, BARKER_LENGTHS};

/// Sampling rate of every frame.
pub const SAMPLE_RATE_HZ: f64 = 3.2e6;
/// Complex samples per frame.
pub const FRAME_LEN: usize = 512;
/// LFM sweep bandwidth (f_s / 4), up-chirp from 0 Hz.
pub const LFM_BANDWIDTH_HZ: f64 = 800e3;

pub const PW_RANGE_S: (f64, f64) = (10e-6, 16e-6);
pub const PRI_RANGE_S: (f64, f64) = (17e-6, 23e-6);
pub const DELAY_RANGE_S: (f64, f64) = (1e-6, 10e-6);
pub const PULSES_RANGE: (u32, u32) = (2, 6);
pub const SNR_RANGE_DB: (i32, i32) = (-20, 20);

/// Relative slack applied to the sampling-rate bound comparison.
const RATE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SignalClass {
    Barker,
    PolyphaseBarker,
    Frank,
    Lfm,
    Unmodulated,
}

impl SignalClass {
    pub const ALL: [SignalClass; 5] = [
        SignalClass::Barker,
        SignalClass::PolyphaseBarker,
        SignalClass::Frank,
        SignalClass::Lfm,
        SignalClass::Unmodulated,
    ];

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            SignalClass::Barker => "barker",
            SignalClass::PolyphaseBarker => "polyphase-barker",
            SignalClass::Frank => "frank",
            SignalClass::Lfm => "lfm",
            SignalClass::Unmodulated => "unmodulated",
        }
    }

    /// Whether `len` is a permitted code length for this class.
    pub fn is_valid_code_length(self, len: u32) -> bool {
        let len = len as usize;
        match self {
            SignalClass::Barker => BARKER_LENGTHS.contains(&len),
            SignalClass::PolyphaseBarker => (2..=13).contains(&len),
            SignalClass::Frank => frank_order(len).is_some(),
            SignalClass::Lfm | SignalClass::Unmodulated => len == 1,
        }
    }
}

impl std::fmt::Display for SignalClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Ground truth for one waveform. Times are in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalParams {
    pub class: SignalClass,
    pub t_pw: f64,
    pub t_pri: f64,
    pub n_p: u32,
    pub t_d: f64,
    pub l_c: u32,
    pub snr_db: f64,
}

fn check_range(name: &str, v: f64, (lo, hi): (f64, f64)) -> Result<()> {
    if v.is_finite() && v >= lo && v <= hi {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("{name}={v:e} outside [{lo:e}, {hi:e}]")))
    }
}

impl SignalParams {
    pub fn validate(&self) -> Result<()> {
        check_range("t_pw", self.t_pw, PW_RANGE_S)?;
        check_range("t_pri", self.t_pri, PRI_RANGE_S)?;
        check_range("t_d", self.t_d, DELAY_RANGE_S)?;
        check_range(
            "snr_db",
            self.snr_db,
            (SNR_RANGE_DB.0 as f64, SNR_RANGE_DB.1 as f64),
        )?;
        if !(PULSES_RANGE.0..=PULSES_RANGE.1).contains(&self.n_p) {
            return Err(Error::InvalidParams(format!("n_p={} outside 2..=6", self.n_p)));
        }
        if !self.class.is_valid_code_length(self.l_c) {
            return Err(Error::InvalidParams(format!(
                "l_c={} invalid for {}",
                self.l_c, self.class
            )));
        }
        self.pulse_layout()?;
        Ok(())
    }

    /// Samples per pulse, `round(t_pw·f_s)`.
    pub fn pulse_samples(&self) -> usize {
        (self.t_pw * SAMPLE_RATE_HZ).round() as usize
    }

    /// First sample of pulse `k`, `round((t_d + k·t_pri)·f_s)`.
    pub fn pulse_start(&self, k: u32) -> usize {
        ((self.t_d + k as f64 * self.t_pri) * SAMPLE_RATE_HZ).round() as usize
    }

    /// Start samples of all pulses and the pulse length, or an overflow error.
    pub fn pulse_layout(&self) -> Result<(Vec<usize>, usize)> {
        let len = self.pulse_samples();
        let starts: Vec<usize> = (0..self.n_p).map(|k| self.pulse_start(k)).collect();
        if let Some(&last) = starts.last() {
            let end = last + len;
            if end > FRAME_LEN {
                return Err(Error::FrameOverflow {
                    last: end - 1,
                    len: FRAME_LEN,
                });
            }
        }
        Ok((starts, len))
    }
}

/// One frame of complex baseband samples as I and Q channels.
#[derive(Debug, Clone, PartialEq)]
pub struct IqFrame {
    pub i: Vec<f64>,
    pub q: Vec<f64>,
}

impl IqFrame {
    pub fn zeros() -> Self {
        Self {
            i: vec![0.0; FRAME_LEN],
            q: vec![0.0; FRAME_LEN],
        }
    }

    pub fn sample_rate_hz(&self) -> f64 {
        SAMPLE_RATE_HZ
    }

    /// Mean of `i² + q²` over the frame.
    pub fn mean_power(&self) -> f64 {
        self.i
            .iter()
            .zip(&self.q)
            .map(|(i, q)| i * i + q * q)
            .sum::<f64>()
            / self.i.len() as f64
    }
}

/// Unit-modulus chip values for the class's code.
fn chips(class: SignalClass, l_c: u32) -> Result<Vec<Complex64>> {
    let l = l_c as usize;
    Ok(match class {
        SignalClass::Barker => barker_code(l)?
            .into_iter()
            .map(|c| Complex64::new(c as f64, 0.0))
            .collect(),
        SignalClass::PolyphaseBarker => polyphase_barker_code(l)?
            .into_iter()
            .map(|p| Complex64::from_polar(1.0, p))
            .collect(),
        SignalClass::Frank => {
            let m = frank_order(l).ok_or(Error::InvalidCodeLength { kind: "Frank", len: l })?;
            frank_code(m)?
                .into_iter()
                .map(|p| Complex64::from_polar(1.0, p))
                .collect()
        }
        SignalClass::Lfm | SignalClass::Unmodulated => vec![Complex64::new(1.0, 0.0)],
    })
}

/// One pulse of `round(t_pw·f_s)` unit-modulus samples.
///
/// Coded pulses hold chip `c` over samples `floor(c·N/l_c)..floor((c+1)·N/l_c)`.
pub fn synthesize_pulse(params: &SignalParams) -> Result<Vec<Complex64>> {
    let n = params.pulse_samples();
    if params.class == SignalClass::Lfm {
        let rate = PI * LFM_BANDWIDTH_HZ / params.t_pw;
        return Ok((0..n)
            .map(|k| {
                let t = k as f64 / SAMPLE_RATE_HZ;
                Complex64::from_polar(1.0, rate * t * t)
            })
            .collect());
    }
    let chips = chips(params.class, params.l_c)?;
    let l = chips.len();
    let mut out = Vec::with_capacity(n);
    for (c, chip) in chips.iter().enumerate() {
        let (lo, hi) = (c * n / l, (c + 1) * n / l);
        out.extend(std::iter::repeat_n(*chip, hi - lo));
    }
    Ok(out)
}

/// Noiseless frame with unity average power over all samples.
pub fn synthesize_frame(params: &SignalParams) -> Result<IqFrame> {
    let (starts, len) = params.pulse_layout()?;
    let pulse = synthesize_pulse(params)?;
    debug_assert_eq!(pulse.len(), len);
    let mut frame = IqFrame::zeros();
    for s in starts {
        for (k, v) in pulse.iter().enumerate() {
            frame.i[s + k] = v.re;
            frame.q[s + k] = v.im;
        }
    }
    let power = frame.mean_power();
    if power > 0.0 {
        let g = power.sqrt().recip();
        frame.i.iter_mut().chain(frame.q.iter_mut()).for_each(|v| *v *= g);
    }
    Ok(frame)
}

/// Noise power for a unit-power signal at `snr_db`.
pub fn noise_power(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Adds circular complex Gaussian noise of total power `10^(-snr/10)`.
pub fn apply_awgn<R: Rng + ?Sized>(frame: &mut IqFrame, snr_db: f64, rng: &mut R) {
    let sigma = (noise_power(snr_db) / 2.0).sqrt();
    for (i, q) in frame.i.iter_mut().zip(frame.q.iter_mut()) {
        let ni: f64 = rng.sample(StandardNormal);
        let nq: f64 = rng.sample(StandardNormal);
        *i += sigma * ni;
        *q += sigma * nq;
    }
}

/// Lower bound on the sampling rate: `2·max(l_c/t_pw, 1/t_pri, 1/t_d)`.
pub fn min_sampling_rate(params: &SignalParams) -> f64 {
    2.0 * (params.l_c as f64 / params.t_pw)
        .max(1.0 / params.t_pri)
        .max(1.0 / params.t_d)
}

/// Whether `fs` meets the bound; equality is accepted.
pub fn satisfies_sampling_bound(params: &SignalParams, fs: f64) -> bool {
    fs >= min_sampling_rate(params) * (1.0 - RATE_TOL)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(class: SignalClass, l_c: u32) -> SignalParams {
        SignalParams {
            class,
            t_pw: 10e-6,
            t_pri: 20e-6,
            n_p: 2,
            t_d: 1e-6,
            l_c,
            snr_db: 0.0,
        }
    }

    #[test]
    fn unmodulated_pulse_is_constant() {
        let p = synthesize_pulse(&params(SignalClass::Unmodulated, 1)).unwrap();
        assert_eq!(p.len(), 32);
        assert!(p.iter().all(|&v| v == Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn barker5_chip_grid() {
        let p = synthesize_pulse(&params(SignalClass::Barker, 5)).unwrap();
        assert_eq!(p.len(), 32);
        // boundaries floor(c*32/5) = 0, 6, 12, 19, 25
        let signs: Vec<f64> = p.iter().map(|v| v.re).collect();
        assert!(signs[..19].iter().all(|&s| s == 1.0));
        assert!(signs[19..25].iter().all(|&s| s == -1.0));
        assert!(signs[25..].iter().all(|&s| s == 1.0));
    }

    #[test]
    fn lfm_starts_at_zero_phase() {
        let p = synthesize_pulse(&params(SignalClass::Lfm, 1)).unwrap();
        assert_eq!(p[0], Complex64::new(1.0, 0.0));
        assert!(p.iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn pulse_positions() {
        let p = params(SignalClass::Unmodulated, 1);
        assert_eq!(p.pulse_start(0), 3);
        assert_eq!(p.pulse_start(1), 67);
    }

    #[test]
    fn max_extent_fits() {
        let p = SignalParams {
            t_d: 10e-6,
            n_p: 6,
            t_pri: 23e-6,
            t_pw: 16e-6,
            ..params(SignalClass::Frank, 16)
        };
        let (starts, len) = p.pulse_layout().unwrap();
        let last = starts.last().unwrap() + len - 1;
        assert_eq!(last, 450);
        assert!(last <= (141e-6 * SAMPLE_RATE_HZ).round() as usize);
    }

    #[test]
    fn overflow_is_reported() {
        let p = SignalParams {
            t_d: 100e-6,
            n_p: 6,
            t_pri: 23e-6,
            ..params(SignalClass::Lfm, 1)
        };
        assert!(matches!(synthesize_frame(&p), Err(Error::FrameOverflow { .. })));
    }

    #[test]
    fn sampling_bound_examples() {
        let frank = SignalParams {
            t_pri: 17e-6,
            ..params(SignalClass::Frank, 16)
        };
        assert!((min_sampling_rate(&frank) - 3.2e6).abs() < 1e-3);
        assert!(satisfies_sampling_bound(&frank, SAMPLE_RATE_HZ));
        let unmod = SignalParams {
            t_pri: 17e-6,
            ..params(SignalClass::Unmodulated, 1)
        };
        assert!((min_sampling_rate(&unmod) - 2e6).abs() < 1e-3);
        let unit = SignalParams {
            t_pw: 1.0,
            t_pri: 1.0,
            t_d: 1.0,
            ..unmod
        };
        assert_eq!(min_sampling_rate(&unit), 2.0);
        assert!(!satisfies_sampling_bound(&frank, 3.1e6));
    }

    #[test]
    fn noise_power_examples() {
        assert_eq!(noise_power(0.0), 1.0);
        assert!((noise_power(20.0) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn validate_rejects_bad_code_length() {
        assert!(params(SignalClass::Barker, 6).validate().is_err());
        assert!(params(SignalClass::Lfm, 2).validate().is_err());
        assert!(params(SignalClass::Frank, 9).validate().is_ok());
    }

    #[test]
    fn class_index_round_trip() {
        for c in SignalClass::ALL {
            assert_eq!(SignalClass::from_index(c.index()), Some(c));
        }
        assert_eq!(SignalClass::from_index(5), None);
    }
}
