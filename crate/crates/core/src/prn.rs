//! GPS L1 C/A Gold codes.
//!
//! Each code is the modulo-2 sum of two 10-stage maximal-length shift
//! registers: G1 (feedback taps 3, 10) and G2 (feedback taps 2, 3, 6, 8, 9, 10),
//! with the G2 output formed from a per-PRN pair of register stages. Chips are
//! mapped 0 -> +1 and 1 -> -1.

use crate::error::{Error, Result};

pub const CODE_LENGTH: usize = 1023;
pub const CHIP_RATE: f64 = 1.023e6;
pub const L1_FREQ: f64 = 1575.42e6;
pub const MAX_PRN: u8 = 32;

/// G2 output stage pairs (1-based) for PRN 1..=32.
const G2_TAPS: [(usize, usize); 32] = [
    (2, 6),
    (3, 7),
    (4, 8),
    (5, 9),
    (1, 9),
    (2, 10),
    (1, 8),
    (2, 9),
    (3, 10),
    (2, 3),
    (3, 4),
    (5, 6),
    (6, 7),
    (7, 8),
    (8, 9),
    (9, 10),
    (1, 4),
    (2, 5),
    (3, 6),
    (4, 7),
    (5, 8),
    (6, 9),
    (1, 3),
    (4, 6),
    (5, 7),
    (6, 8),
    (7, 9),
    (8, 10),
    (1, 6),
    (2, 7),
    (3, 8),
    (4, 9),
];

/// One satellite's 1023-chip spreading sequence, values in {+1, -1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaCode {
    prn: u8,
    chips: Vec<i8>,
}

impl CaCode {
    pub fn prn(&self) -> u8 {
        self.prn
    }

    pub fn chips(&self) -> &[i8] {
        &self.chips
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.chips.iter().map(|&c| c as f32).collect()
    }
}

pub fn validate_prn(prn: u8) -> Result<()> {
    if (1..=MAX_PRN).contains(&prn) {
        Ok(())
    } else {
        Err(Error::invalid(format!("PRN {prn} outside 1..={MAX_PRN}")))
    }
}

pub fn generate_ca_code(prn: u8) -> Result<CaCode> {
    validate_prn(prn)?;
    let (s1, s2) = G2_TAPS[usize::from(prn) - 1];
    let mut g1 = [1u8; 10];
    let mut g2 = [1u8; 10];
    let mut chips = Vec::with_capacity(CODE_LENGTH);
    for _ in 0..CODE_LENGTH {
        let bit = g1[9] ^ g2[s1 - 1] ^ g2[s2 - 1];
        chips.push(if bit == 0 { 1 } else { -1 });
        let f1 = g1[2] ^ g1[9];
        let f2 = g2[1] ^ g2[2] ^ g2[5] ^ g2[7] ^ g2[8] ^ g2[9];
        g1.rotate_right(1);
        g2.rotate_right(1);
        g1[0] = f1;
        g2[0] = f2;
    }
    Ok(CaCode { prn, chips })
}

/// `out[k] = sum_i a[i] * b[(i + k) mod N]`.
pub fn circular_correlate(a: &[i8], b: &[i8]) -> Result<Vec<i32>> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    let n = a.len();
    let out = (0..n)
        .map(|k| {
            let (head, tail) = b.split_at(k);
            let lhs = a[..n - k].iter().zip(tail);
            let rhs = a[n - k..].iter().zip(head);
            lhs.chain(rhs).map(|(&x, &y)| i32::from(x) * i32::from(y)).sum()
        })
        .collect();
    Ok(out)
}

/// Nearest-chip resampling: `out[i] = chips[floor(code_phase + i * chip_rate / sample_rate) mod 1023]`.
pub fn sample_code(code: &CaCode, sample_rate: f64, chip_rate: f64, code_phase: f64, length: usize) -> Result<Vec<i8>> {
    if !(sample_rate.is_finite() && chip_rate.is_finite() && chip_rate > 0.0) {
        return Err(Error::invalid("sample and chip rates must be finite and positive"));
    }
    if sample_rate < chip_rate {
        return Err(Error::invalid(format!(
            "sample rate {sample_rate} Hz below chip rate {chip_rate} Hz"
        )));
    }
    let step = chip_rate / sample_rate;
    let n = CODE_LENGTH as f64;
    let start = code_phase.rem_euclid(n);
    Ok((0..length)
        .map(|i| {
            let phase = start + i as f64 * step;
            code.chips[(phase.floor() as usize) % CODE_LENGTH]
        })
        .collect())
}
