//! Little-endian binary layout of dataset files.
//!
//! ```text
//! header  "RADC" | version u32 | count u64 | samples_per_frame u32 | f_s f64
//! record  index u64 | class u8 | l_c u8 | n_p u8 | pad u8
//!         | snr_db f32 | t_pw f32 | t_pri f32 | t_d f32
//!         | 512 × (i f32, q f32)
//! ```

use crate::error::{Error, Result};
use crate::waveform::{SignalClass, SignalParams, FRAME_LEN, SAMPLE_RATE_HZ};

pub const MAGIC: [u8; 4] = *b"RADC";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 28;
pub const RECORD_LEN: usize = 8 + 4 + 16 + FRAME_LEN * 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Header {
    pub version: u32,
    pub count: u64,
    pub samples_per_frame: u32,
    pub sample_rate_hz: f64,
}

impl Header {
    pub fn new(count: u64) -> Self {
        Self {
            version: FORMAT_VERSION,
            count,
            samples_per_frame: FRAME_LEN as u32,
            sample_rate_hz: SAMPLE_RATE_HZ,
        }
    }

    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&MAGIC);
        out[4..8].copy_from_slice(&self.version.to_le_bytes());
        out[8..16].copy_from_slice(&self.count.to_le_bytes());
        out[16..20].copy_from_slice(&self.samples_per_frame.to_le_bytes());
        out[20..28].copy_from_slice(&self.sample_rate_hz.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        if bytes[0..4] != MAGIC {
            return Err(Error::Format("bad magic, not a dataset file".into()));
        }
        let h = Self {
            version: u32_at(bytes, 4),
            count: u64_at(bytes, 8),
            samples_per_frame: u32_at(bytes, 16),
            sample_rate_hz: f64::from_le_bytes(bytes[20..28].try_into().expect("8 bytes")),
        };
        if h.version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {}", h.version)));
        }
        if h.samples_per_frame as usize != FRAME_LEN {
            return Err(Error::Format(format!(
                "samples_per_frame {} (expected {FRAME_LEN})",
                h.samples_per_frame
            )));
        }
        if h.sample_rate_hz != SAMPLE_RATE_HZ {
            return Err(Error::Format(format!("sample rate {} Hz (expected {SAMPLE_RATE_HZ})", h.sample_rate_hz)));
        }
        Ok(h)
    }

    /// Total file size implied by the header, if it fits in `usize`.
    pub fn file_len(&self) -> Option<usize> {
        usize::try_from(self.count)
            .ok()?
            .checked_mul(RECORD_LEN)?
            .checked_add(HEADER_LEN)
    }
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

fn f32_at(b: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

/// Appends one record. `iq` is interleaved `(i, q)` pairs.
pub fn encode_record(index: u64, params: &SignalParams, iq: impl Iterator<Item = (f32, f32)>, out: &mut Vec<u8>) {
    let start = out.len();
    out.extend_from_slice(&index.to_le_bytes());
    out.extend_from_slice(&[
        params.class.index(),
        params.l_c as u8,
        params.n_p as u8,
        0,
    ]);
    for v in [params.snr_db, params.t_pw, params.t_pri, params.t_d] {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for (i, q) in iq {
        out.extend_from_slice(&i.to_le_bytes());
        out.extend_from_slice(&q.to_le_bytes());
    }
    debug_assert_eq!(out.len() - start, RECORD_LEN);
}

/// A decoded record with its frame as planar `[I; 512] ++ [Q; 512]`.
#[derive(Debug, Clone)]
pub struct RawRecord {
    pub index: u64,
    pub params: SignalParams,
    pub planar: Vec<f32>,
}

pub fn decode_record(b: &[u8]) -> Result<RawRecord> {
    if b.len() != RECORD_LEN {
        return Err(Error::Format(format!("record is {} bytes, expected {RECORD_LEN}", b.len())));
    }
    let index = u64_at(b, 0);
    let class = SignalClass::from_index(b[8])
        .ok_or_else(|| Error::Format(format!("record {index}: class code {} out of range", b[8])))?;
    if b[11] != 0 {
        return Err(Error::Format(format!("record {index}: non-zero pad byte")));
    }
    let params = SignalParams {
        class,
        l_c: b[9] as u32,
        n_p: b[10] as u32,
        snr_db: f32_at(b, 12) as f64,
        t_pw: f32_at(b, 16) as f64,
        t_pri: f32_at(b, 20) as f64,
        t_d: f32_at(b, 24) as f64,
    };
    params
        .validate()
        .map_err(|e| Error::Format(format!("record {index}: {e}")))?;
    let mut planar = vec![0f32; 2 * FRAME_LEN];
    for k in 0..FRAME_LEN {
        let i = f32_at(b, 28 + 8 * k);
        let q = f32_at(b, 32 + 8 * k);
        if !(i.is_finite() && q.is_finite()) {
            return Err(Error::Format(format!("record {index}: non-finite sample {k}")));
        }
        planar[k] = i;
        planar[FRAME_LEN + k] = q;
    }
    Ok(RawRecord { index, params, planar })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip() {
        let h = Header::new(10);
        assert_eq!(Header::decode(&h.encode()).unwrap(), h);
        assert_eq!(h.file_len(), Some(28 + 10 * 4124));
    }

    #[test]
    fn record_len_arithmetic() {
        assert_eq!(RECORD_LEN, 4124);
    }

    #[test]
    fn header_rejects_garbage() {
        assert!(Header::decode(b"RAD").is_err());
        let mut h = Header::new(1).encode();
        h[0] = b'X';
        assert!(Header::decode(&h).is_err());
        let mut h = Header::new(1).encode();
        h[4] = 9;
        assert!(Header::decode(&h).is_err());
        assert_eq!(Header { count: u64::MAX, ..Header::new(0) }.file_len(), None);
    }
}
