//! Phase codes for pulse compression.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Lengths with a known biphase Barker sequence.
pub const BARKER_LENGTHS: [usize; 7] = [2, 3, 4, 5, 7, 11, 13];

/// Frank code orders `M` (code length `M²`).
pub const FRANK_ORDERS: std::ops::RangeInclusive<usize> = 1..=4;

/// Polyphase Barker lengths covered by the embedded table.
pub const POLYPHASE_BARKER_LENGTHS: std::ops::RangeInclusive<usize> = 1..=13;

/// Biphase Barker sequence of length `len` as ±1 chips.
///
/// Length 1 is the degenerate single chip. For 2 and 4, where two
/// sequences exist, the variants `+-` and `++-+` are used.
pub fn barker_code(len: usize) -> Result<Vec<i8>> {
    let code: &[i8] = match len {
        1 => &[1],
        2 => &[1, -1],
        3 => &[1, 1, -1],
        4 => &[1, 1, -1, 1],
        5 => &[1, 1, 1, -1, 1],
        7 => &[1, 1, 1, -1, -1, 1, -1],
        11 => &[1, 1, 1, -1, -1, -1, 1, -1, -1, 1, -1],
        13 => &[1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1],
        _ => return Err(Error::InvalidCodeLength { kind: "Barker", len }),
    };
    Ok(code.to_vec())
}

/// Frank code of order `m`: phase `(2π/m)·n·k` at chip `n·m + k`.
pub fn frank_code(m: usize) -> Result<Vec<f64>> {
    if !FRANK_ORDERS.contains(&m) {
        return Err(Error::InvalidCodeLength {
            kind: "Frank",
            len: m * m,
        });
    }
    let step = 2.0 * PI / m as f64;
    Ok((0..m)
        .flat_map(|n| (0..m).map(move |k| step * (n * k) as f64))
        .collect())
}

/// Order `m` of a Frank code of length `len`, if `len` is a square in range.
pub fn frank_order(len: usize) -> Option<usize> {
    FRANK_ORDERS.clone().find(|m| m * m == len)
}

// Generalised Barker phase sequences (radians): unit-modulus chips whose
// aperiodic autocorrelation sidelobes all have magnitude <= 1. Entries were
// chosen away from the biphase alphabet.
const PB3: [f64; 3] = [0.0, 1.075, 4.927];
const PB4: [f64; 4] = [0.0, 4.856, 5.253, 1.189];
const PB5: [f64; 5] = [0.0, 1.361, 5.185, 1.907, 1.092];
const PB7: [f64; 7] = [0.0, 4.252, 0.366, 4.854, 5.201, 1.356, 1.939];
const PB8: [f64; 8] = [0.0, 4.677, 4.304, 1.894, 4.913, 0.794, 0.921, 2.282];
const PB9: [f64; 9] = [0.0, 2.794, 4.913, 1.929, 0.749, 4.571, 4.378, 5.109, 4.927];
const PB10: [f64; 10] = [0.0, 3.866, 0.951, 5.014, 1.211, 2.349, 4.889, 5.171, 4.361, 4.434];
const PB11: [f64; 11] = [
    0.0, 4.154, 2.016, 4.391, 0.875, 1.585, 5.14, 4.841, 4.912, 5.713, 5.903,
];
const PB12: [f64; 12] = [
    0.0, 5.159, 2.225, 0.068, 5.095, 0.924, 1.615, 1.494, 4.943, 6.181, 4.01, 5.152,
];
const PB13: [f64; 13] = [
    0.0, 3.93, 3.607, 1.557, 5.622, 1.942, 4.332, 4.388, 0.865, 2.185, 1.699, 1.811, 2.369,
];
// Length 6 sits exactly on the bound; its sequence lives on the 6-phase grid.
const PB6_SEXTIC: [u8; 6] = [0, 0, 1, 3, 0, 4];

/// Polyphase (generalised) Barker phase sequence of length `len`.
pub fn polyphase_barker_code(len: usize) -> Result<Vec<f64>> {
    let table: &[f64] = match len {
        1 => &[0.0],
        2 => &[0.0, PI / 2.0],
        3 => &PB3,
        4 => &PB4,
        5 => &PB5,
        6 => {
            return Ok(PB6_SEXTIC
                .iter()
                .map(|&k| k as f64 * PI / 3.0)
                .collect())
        }
        7 => &PB7,
        8 => &PB8,
        9 => &PB9,
        10 => &PB10,
        11 => &PB11,
        12 => &PB12,
        13 => &PB13,
        _ => {
            return Err(Error::InvalidCodeLength {
                kind: "polyphase Barker",
                len,
            })
        }
    };
    Ok(table.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn barker_rejects_unknown_lengths() {
        for len in [0, 6, 8, 9, 10, 12, 14] {
            assert!(barker_code(len).is_err(), "{len}");
        }
        assert_eq!(barker_code(1).unwrap(), vec![1]);
    }

    #[test]
    fn frank_small_orders() {
        assert_eq!(frank_code(1).unwrap(), vec![0.0]);
        assert_eq!(frank_code(2).unwrap(), vec![0.0, 0.0, 0.0, PI]);
        assert!((frank_code(4).unwrap()[4 + 1] - PI / 2.0).abs() < 1e-15);
        assert!(frank_code(0).is_err() && frank_code(5).is_err());
        assert_eq!(frank_order(16), Some(4));
        assert_eq!(frank_order(8), None);
    }

    #[test]
    fn polyphase_table_lengths() {
        for len in POLYPHASE_BARKER_LENGTHS {
            assert_eq!(polyphase_barker_code(len).unwrap().len(), len);
        }
        assert!(polyphase_barker_code(0).is_err());
        assert!(polyphase_barker_code(14).is_err());
    }
}
