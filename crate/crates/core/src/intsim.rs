//! Bit-accurate model of the integer LUT datapath.
//!
//! For an integer input `q` the datapath compares `q` against the stored
//! breakpoint codes, then computes `k * q + (b >> e)` where `e` is the
//! scale exponent (a negative `e` shifts left). The result carries
//! `lambda` fractional bits and the implicit input scale, so the real
//! output is `S * y / 2^lambda`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::{pow2, BreakpointFormat, QPwlTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatapathConfig {
    pub input_bits: u32,
    pub param_bits: u32,
    pub lambda: u32,
    pub acc_bits: u32,
    /// Largest left shift applied to an intercept, i.e. the most negative
    /// scale exponent the datapath is sized for.
    pub max_shift: u32,
}

impl Default for DatapathConfig {
    fn default() -> Self {
        Self::int8(5)
    }
}

impl DatapathConfig {
    pub const fn int8(lambda: u32) -> Self {
        Self {
            input_bits: 8,
            param_bits: 8,
            lambda,
            acc_bits: 32,
            max_shift: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("datapath.input_bits", self.input_bits),
            ("datapath.param_bits", self.param_bits),
        ] {
            if !(2..=32).contains(&v) {
                return Err(Error::config(field, format!("{v} is outside 2..=32")));
            }
        }
        if self.acc_bits > 64 {
            return Err(Error::config("datapath.acc_bits", "at most 64 bits"));
        }
        let need = self.input_bits + self.param_bits + self.max_shift;
        if self.acc_bits < need {
            return Err(Error::config(
                "datapath.acc_bits",
                format!(
                    "{} bits cannot hold a {}x{}-bit product plus a {}-bit intercept shift (need {need})",
                    self.acc_bits, self.input_bits, self.param_bits, self.max_shift
                ),
            ));
        }
        if self.lambda > 30 {
            return Err(Error::config("datapath.lambda", "at most 30 fractional bits"));
        }
        Ok(())
    }
}

/// Entry index for input `q`: pure integer comparisons against the stored
/// breakpoint codes.
pub fn segment_index(q: i64, table: &QPwlTable) -> usize {
    table.segment_index(q)
}

/// Arithmetic shift of `v` by `e` bits: right for positive `e` (rounding
/// half away from zero on the dropped bits), left for negative `e`.
pub fn shift_intercept(v: i64, e: i32) -> i128 {
    let v = v as i128;
    if e <= 0 {
        v << (-e) as u32
    } else {
        let half = 1i128 << (e - 1);
        let mag = (v.abs() + half) >> e as u32;
        if v < 0 {
            -mag
        } else {
            mag
        }
    }
}

fn fits(value: i128, bits: u32) -> bool {
    let lim = 1i128 << (bits - 1);
    (-lim..lim).contains(&value)
}

/// Raw datapath output for `q` (`lambda` fractional bits, scaled by `S`).
pub fn int_pwl(q: i64, table: &QPwlTable, cfg: &DatapathConfig) -> Result<i64> {
    let BreakpointFormat::Integer { scale, quant } = table.breakpoint_format() else {
        return Err(Error::OperatorKind {
            expected: "scale-carrying",
            got: "fixed-point breakpoint table".into(),
        });
    };
    if table.lambda() != cfg.lambda {
        return Err(Error::config(
            "datapath.lambda",
            format!("table uses {} fractional bits, datapath {}", table.lambda(), cfg.lambda),
        ));
    }
    if q < quant.q_lo() || q > quant.q_hi() {
        return Err(Error::InputOutOfRange {
            q,
            lo: quant.q_lo(),
            hi: quant.q_hi(),
        });
    }
    let i = segment_index(q, table);
    let product = table.slopes()[i] as i128 * q as i128;
    let shifted = shift_intercept(table.intercepts()[i], scale.exponent);
    for v in [product, shifted] {
        if !fits(v, cfg.acc_bits) {
            return Err(Error::AccumulatorOverflow {
                value: v,
                acc_bits: cfg.acc_bits,
            });
        }
    }
    let y = product + shifted;
    if !fits(y, cfg.acc_bits) {
        return Err(Error::AccumulatorOverflow {
            value: y,
            acc_bits: cfg.acc_bits,
        });
    }
    Ok(y as i64)
}

/// Dequantized datapath output `S * y / 2^lambda`.
pub fn int_pwl_real(q: i64, table: &QPwlTable, cfg: &DatapathConfig) -> Result<f64> {
    let y = int_pwl(q, table, cfg)?;
    let scale = table.scale().expect("int_pwl checked the format");
    Ok(y as f64 * pow2(scale.exponent - table.lambda() as i32))
}
