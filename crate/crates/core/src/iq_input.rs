//! Single-frame inputs for inference.
//!
//! * raw: 4096 bytes, 512 interleaved `(i, q)` little-endian f32 pairs
//! * CSV: 512 rows of `i,q` or `t,i,q`, optionally preceded by one header row

use crate::error::{Error, Result};
use crate::waveform::FRAME_LEN;

pub const RAW_LEN: usize = FRAME_LEN * 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    Raw,
    Csv,
}

/// Planar `[I; 512] ++ [Q; 512]` from raw interleaved bytes.
pub fn parse_raw(bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() != RAW_LEN {
        return Err(Error::Format(format!(
            "raw IQ input must be {RAW_LEN} bytes (512 f32 pairs), got {}",
            bytes.len()
        )));
    }
    let mut planar = vec![0f32; 2 * FRAME_LEN];
    for (k, pair) in bytes.chunks_exact(8).enumerate() {
        let i = f32::from_le_bytes(pair[..4].try_into().expect("4 bytes"));
        let q = f32::from_le_bytes(pair[4..].try_into().expect("4 bytes"));
        if !(i.is_finite() && q.is_finite()) {
            return Err(Error::Format(format!("sample {k} is not finite")));
        }
        planar[k] = i;
        planar[FRAME_LEN + k] = q;
    }
    Ok(planar)
}

/// Planar frame from CSV text. Blank lines are ignored; a first row that does
/// not parse as numbers is taken as a header.
pub fn parse_csv(text: &str) -> Result<Vec<f32>> {
    let mut rows = Vec::with_capacity(FRAME_LEN);
    let mut width = None;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f32>, _> = cells.iter().map(|c| c.parse::<f32>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if rows.is_empty() && width.is_none() => {
                width = Some(cells.len());
                continue;
            }
            Err(_) => return Err(Error::Format(format!("line {}: expected numbers", n + 1))),
        };
        if values.len() != 2 && values.len() != 3 {
            return Err(Error::Format(format!(
                "line {}: expected 2 (i,q) or 3 (t,i,q) columns, got {}",
                n + 1,
                values.len()
            )));
        }
        if *width.get_or_insert(values.len()) != values.len() {
            return Err(Error::Format(format!("line {}: column count changed", n + 1)));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("line {}: non-finite value", n + 1)));
        }
        rows.push(values);
        if rows.len() > FRAME_LEN {
            return Err(Error::Format(format!("more than {FRAME_LEN} sample rows")));
        }
    }
    if rows.len() != FRAME_LEN {
        return Err(Error::Format(format!("expected {FRAME_LEN} sample rows, got {}", rows.len())));
    }
    let mut planar = vec![0f32; 2 * FRAME_LEN];
    for (k, r) in rows.iter().enumerate() {
        let off = r.len() - 2;
        planar[k] = r[off];
        planar[FRAME_LEN + k] = r[off + 1];
    }
    Ok(planar)
}

/// Parses either format; `None` picks CSV when the bytes are not exactly a
/// raw frame.
pub fn parse(bytes: &[u8], format: Option<InputFormat>) -> Result<Vec<f32>> {
    let format = format.unwrap_or(if bytes.len() == RAW_LEN && std::str::from_utf8(bytes).is_err() {
        InputFormat::Raw
    } else {
        InputFormat::Csv
    });
    match format {
        InputFormat::Raw => parse_raw(bytes),
        InputFormat::Csv => {
            let text = std::str::from_utf8(bytes).map_err(|_| Error::Format("CSV input is not UTF-8".into()))?;
            parse_csv(text)
        }
    }
}

/// `t_us,i,q` rows for one planar frame, with a header.
pub fn frame_to_csv(planar: &[f32], sample_rate_hz: f64) -> String {
    let mut s = String::from("t_us,i,q\n");
    for k in 0..FRAME_LEN {
        let t = k as f64 / sample_rate_hz * 1e6;
        s.push_str(&format!("{t:.6},{:e},{:e}\n", planar[k], planar[FRAME_LEN + k]));
    }
    s
}

/// Interleaved little-endian f32 bytes for one planar frame.
pub fn frame_to_raw(planar: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(RAW_LEN);
    for k in 0..FRAME_LEN {
        out.extend_from_slice(&planar[k].to_le_bytes());
        out.extend_from_slice(&planar[FRAME_LEN + k].to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveform::SAMPLE_RATE_HZ;

    fn ramp() -> Vec<f32> {
        (0..2 * FRAME_LEN).map(|k| k as f32 * 0.25 - 3.0).collect()
    }

    #[test]
    fn raw_round_trip() {
        let f = ramp();
        assert_eq!(parse_raw(&frame_to_raw(&f)).unwrap(), f);
        assert!(parse_raw(&[0; 10]).is_err());
    }

    #[test]
    fn csv_round_trip_with_time_column() {
        let f = ramp();
        let text = frame_to_csv(&f, SAMPLE_RATE_HZ);
        assert_eq!(parse_csv(&text).unwrap(), f);
        assert_eq!(parse(text.as_bytes(), None).unwrap(), f);
    }

    #[test]
    fn csv_two_columns_without_header() {
        let text: String = (0..FRAME_LEN).map(|k| format!("{k},-{k}\n")).collect();
        let f = parse_csv(&text).unwrap();
        assert_eq!(f[5], 5.0);
        assert_eq!(f[FRAME_LEN + 5], -5.0);
    }

    #[test]
    fn csv_rejects_short_and_ragged() {
        assert!(parse_csv("i,q\n1,2\n").is_err());
        let mut text: String = (0..FRAME_LEN).map(|k| format!("{k},{k}\n")).collect();
        text.push_str("1,2,3\n");
        assert!(parse_csv(&text).is_err());
        assert!(parse_csv("1,2\nx,y\n").is_err());
    }
}
