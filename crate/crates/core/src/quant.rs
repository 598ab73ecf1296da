//! Power-of-two quantization of inputs and tables.
//!
//! All rounding in this crate is round-half-away-from-zero (`f64::round`).
//! Scale-carrying operators store integer breakpoints `round(p / S)` next
//! to unscaled fixed-point slopes and intercepts; the intercept shift by the
//! scale exponent happens in the datapath. Wide-range operators (DIV,
//! RSQRT) instead store everything as fixed point and fold large inputs
//! into the fitted interval with a per-sub-range power-of-two scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonlin::{FunctionKind, SearchRange};
use crate::pwl::PwlTable;

/// Integer format of a quantized value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub bits: u32,
    pub signed: bool,
}

impl QuantSpec {
    pub fn new(bits: u32, signed: bool) -> Result<Self> {
        if !(2..=32).contains(&bits) {
            return Err(Error::config("bits", format!("{bits} is outside 2..=32")));
        }
        Ok(Self { bits, signed })
    }

    pub const fn int8() -> Self {
        Self {
            bits: 8,
            signed: true,
        }
    }

    pub fn q_lo(&self) -> i64 {
        if self.signed {
            -(1i64 << (self.bits - 1))
        } else {
            0
        }
    }

    pub fn q_hi(&self) -> i64 {
        if self.signed {
            (1i64 << (self.bits - 1)) - 1
        } else {
            (1i64 << self.bits) - 1
        }
    }

    pub fn clip(&self, q: i64) -> i64 {
        q.clamp(self.q_lo(), self.q_hi())
    }

    pub fn levels(&self) -> impl Iterator<Item = i64> {
        self.q_lo()..=self.q_hi()
    }
}

/// Scale `S = 2^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PowTwoScale {
    pub exponent: i32,
}

impl PowTwoScale {
    pub const fn new(exponent: i32) -> Self {
        Self { exponent }
    }

    pub const fn identity() -> Self {
        Self { exponent: 0 }
    }

    pub fn value(&self) -> f64 {
        pow2(self.exponent)
    }
}

pub(crate) fn pow2(e: i32) -> f64 {
    2f64.powi(e)
}

/// Nearest multiple of `2^-frac_bits`.
pub fn round_to_grid(v: f64, frac_bits: i32) -> f64 {
    (v * pow2(frac_bits)).round() / pow2(frac_bits)
}

/// Raw fixed-point integer for `v` with `frac_bits` fractional bits.
pub fn to_fxp(v: f64, frac_bits: u32) -> i64 {
    (v * pow2(frac_bits as i32)).round() as i64
}

pub fn from_fxp(raw: i64, frac_bits: u32) -> f64 {
    raw as f64 / pow2(frac_bits as i32)
}

pub fn quantize(x: f64, scale: PowTwoScale, qs: QuantSpec) -> i64 {
    let q = (x / scale.value()).round();
    q.clamp(qs.q_lo() as f64, qs.q_hi() as f64) as i64
}

pub fn dequantize(q: i64, scale: PowTwoScale) -> f64 {
    q as f64 * scale.value()
}

/// How breakpoints of a [`QPwlTable`] are encoded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case")]
pub enum BreakpointFormat {
    /// Integers in the quantized input domain of `scale`.
    Integer { scale: PowTwoScale, quant: QuantSpec },
    /// Signed fixed point with the table's `lambda` fractional bits.
    FixedPoint { bits: u32 },
}

/// Hardware-facing table: raw fixed-point slopes/intercepts (`lambda`
/// fractional bits) and quantized breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QPwlTable {
    slopes: Vec<i64>,
    intercepts: Vec<i64>,
    breakpoints: Vec<i64>,
    lambda: u32,
    param_bits: u32,
    breakpoint_format: BreakpointFormat,
}

impl QPwlTable {
    pub fn new(
        slopes: Vec<i64>,
        intercepts: Vec<i64>,
        breakpoints: Vec<i64>,
        lambda: u32,
        param_bits: u32,
        breakpoint_format: BreakpointFormat,
    ) -> Result<Self> {
        let t = Self {
            slopes,
            intercepts,
            breakpoints,
            lambda,
            param_bits,
            breakpoint_format,
        };
        t.validate()?;
        Ok(t)
    }

    /// Checks shape, ordering and representability of every stored value.
    pub fn validate(&self) -> Result<()> {
        let n = self.slopes.len();
        if n == 0 || self.intercepts.len() != n || self.breakpoints.len() + 1 != n {
            return Err(Error::InvalidBreakpoints(format!(
                "inconsistent table shape: {} slopes, {} intercepts, {} breakpoints",
                n,
                self.intercepts.len(),
                self.breakpoints.len()
            )));
        }
        if self.breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidBreakpoints(
                "quantized breakpoints are not strictly ascending".into(),
            ));
        }
        let param = QuantSpec::new(self.param_bits, true)?;
        if let Some(v) = self
            .slopes
            .iter()
            .chain(&self.intercepts)
            .find(|&&v| param.clip(v) != v)
        {
            return Err(Error::InvalidBreakpoints(format!(
                "parameter {v} does not fit in {} bits",
                self.param_bits
            )));
        }
        let bq = self.breakpoint_spec()?;
        if let Some(v) = self.breakpoints.iter().find(|&&v| bq.clip(v) != v) {
            return Err(Error::InvalidBreakpoints(format!(
                "breakpoint {v} does not fit in {} bits",
                bq.bits
            )));
        }
        Ok(())
    }

    fn breakpoint_spec(&self) -> Result<QuantSpec> {
        match self.breakpoint_format {
            BreakpointFormat::Integer { quant, .. } => QuantSpec::new(quant.bits, quant.signed),
            BreakpointFormat::FixedPoint { bits } => QuantSpec::new(bits, true),
        }
    }

    pub fn entries(&self) -> usize {
        self.slopes.len()
    }

    pub fn slopes(&self) -> &[i64] {
        &self.slopes
    }

    pub fn intercepts(&self) -> &[i64] {
        &self.intercepts
    }

    pub fn breakpoints(&self) -> &[i64] {
        &self.breakpoints
    }

    pub fn lambda(&self) -> u32 {
        self.lambda
    }

    pub fn param_bits(&self) -> u32 {
        self.param_bits
    }

    pub fn breakpoint_format(&self) -> BreakpointFormat {
        self.breakpoint_format
    }

    /// Bit width of the stored breakpoints.
    pub fn breakpoint_bits(&self) -> u32 {
        match self.breakpoint_format {
            BreakpointFormat::Integer { quant, .. } => quant.bits,
            BreakpointFormat::FixedPoint { bits } => bits,
        }
    }

    pub fn scale(&self) -> Option<PowTwoScale> {
        match self.breakpoint_format {
            BreakpointFormat::Integer { scale, .. } => Some(scale),
            BreakpointFormat::FixedPoint { .. } => None,
        }
    }

    /// Entry selected for a raw breakpoint-domain value (an integer input
    /// `q`, or a raw fixed-point input for wide-range tables).
    pub fn segment_index(&self, raw: i64) -> usize {
        self.breakpoints.partition_point(|&p| p <= raw)
    }

    /// Real-valued evaluation of a fixed-point-breakpoint table.
    pub fn eval_fixed(&self, x: f64) -> f64 {
        let lambda = self.lambda;
        let i = self
            .breakpoints
            .partition_point(|&p| from_fxp(p, lambda) <= x);
        from_fxp(self.slopes[i], lambda) * x + from_fxp(self.intercepts[i], lambda)
    }
}

/// Something that went wrong quietly while quantizing a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "warning", rename_all = "snake_case")]
pub enum QuantWarning {
    /// Breakpoint `index` landed on the same code as its predecessor; the
    /// entry it opened was dropped.
    CollapsedBreakpoint { index: usize, value: i64 },
    Saturated {
        field: String,
        index: usize,
        value: f64,
        stored: i64,
    },
}

impl std::fmt::Display for QuantWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            QuantWarning::CollapsedBreakpoint { index, value } => {
                write!(f, "breakpoint {index} collapsed onto code {value}; its entry was dropped")
            }
            QuantWarning::Saturated { field, index, value, stored } => {
                write!(f, "{field}[{index}] = {value} saturated to {stored}")
            }
        }
    }
}

/// Result of quantizing a real-valued table.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTable {
    pub table: QPwlTable,
    /// Original entry index of every surviving entry.
    pub source_entries: Vec<usize>,
    pub warnings: Vec<QuantWarning>,
}

fn saturating_fxp(
    values: &[f64],
    frac_bits: u32,
    qs: QuantSpec,
    field: &str,
    warnings: &mut Vec<QuantWarning>,
) -> Vec<i64> {
    values
        .iter()
        .enumerate()
        .map(|(index, &v)| {
            let raw = (v * pow2(frac_bits as i32)).round();
            let stored = raw.clamp(qs.q_lo() as f64, qs.q_hi() as f64) as i64;
            if stored as f64 != raw {
                warnings.push(QuantWarning::Saturated {
                    field: field.to_string(),
                    index,
                    value: v,
                    stored,
                });
            }
            stored
        })
        .collect()
}

fn collapse(
    slopes: Vec<i64>,
    intercepts: Vec<i64>,
    breakpoints: Vec<i64>,
    warnings: &mut Vec<QuantWarning>,
) -> (Vec<i64>, Vec<i64>, Vec<i64>, Vec<usize>) {
    let mut keep_entry = vec![true; slopes.len()];
    let mut kept_bps: Vec<i64> = Vec::with_capacity(breakpoints.len());
    for (index, &b) in breakpoints.iter().enumerate() {
        match kept_bps.last() {
            Some(&last) if b <= last => {
                // entry `index` spans [last, b) and is empty
                keep_entry[index] = false;
                warnings.push(QuantWarning::CollapsedBreakpoint { index, value: b });
                log::debug!("quantized breakpoint {index} collapsed onto code {last}");
            }
            _ => kept_bps.push(b),
        }
    }
    let source: Vec<usize> = (0..slopes.len()).filter(|&i| keep_entry[i]).collect();
    let pick = |v: &[i64]| source.iter().map(|&i| v[i]).collect::<Vec<_>>();
    (pick(&slopes), pick(&intercepts), kept_bps, source)
}

/// Quantizes breakpoints into the integer domain of `scale` and stores
/// slopes and intercepts as `lambda`-fractional-bit fixed point.
///
/// Intercepts keep their unscaled value; the datapath shifts them by the
/// scale exponent at run time.
pub fn quantize_table(
    t: &PwlTable,
    scale: PowTwoScale,
    qs: QuantSpec,
    lambda: u32,
    param_bits: u32,
) -> Result<QuantizedTable> {
    let param = QuantSpec::new(param_bits, true)?;
    let mut warnings = Vec::new();
    let slopes = saturating_fxp(t.slopes(), lambda, param, "slope", &mut warnings);
    let intercepts = saturating_fxp(t.intercepts(), lambda, param, "intercept", &mut warnings);
    let bps: Vec<i64> = t
        .breakpoints()
        .points()
        .iter()
        .map(|&p| quantize(p, scale, qs))
        .collect();
    let (slopes, intercepts, bps, source_entries) = collapse(slopes, intercepts, bps, &mut warnings);
    let table = QPwlTable::new(
        slopes,
        intercepts,
        bps,
        lambda,
        param_bits,
        BreakpointFormat::Integer { scale, quant: qs },
    )?;
    Ok(QuantizedTable {
        table,
        source_entries,
        warnings,
    })
}

/// Rounds breakpoints, slopes and intercepts to signed `bits`-wide fixed
/// point with `lambda` fractional bits, saturating out-of-range values.
pub fn fxp_quantize_table(t: &PwlTable, lambda: u32, bits: u32) -> Result<QuantizedTable> {
    let qs = QuantSpec::new(bits, true)?;
    let mut warnings = Vec::new();
    let slopes = saturating_fxp(t.slopes(), lambda, qs, "slope", &mut warnings);
    let intercepts = saturating_fxp(t.intercepts(), lambda, qs, "intercept", &mut warnings);
    let bps = saturating_fxp(t.breakpoints().points(), lambda, qs, "breakpoint", &mut warnings);
    let (slopes, intercepts, bps, source_entries) = collapse(slopes, intercepts, bps, &mut warnings);
    let table = QPwlTable::new(
        slopes,
        intercepts,
        bps,
        lambda,
        bits,
        BreakpointFormat::FixedPoint { bits },
    )?;
    Ok(QuantizedTable {
        table,
        source_entries,
        warnings,
    })
}

/// Integer inputs whose quantized-domain entry differs from the entry the
/// real-valued table picks for `S * q`.
pub fn breakpoint_deviation(float: &PwlTable, quantized: &QuantizedTable) -> Vec<i64> {
    let BreakpointFormat::Integer { scale, quant } = quantized.table.breakpoint_format() else {
        return Vec::new();
    };
    quant
        .levels()
        .filter(|&q| {
            let int_entry = quantized.source_entries[quantized.table.segment_index(q)];
            int_entry != float.segment(dequantize(q, scale))
        })
        .collect()
}

/// One sub-range of a multi-range input scaling plan: inputs in
/// `[lo, hi)` are multiplied by `scale` before the table lookup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubRange {
    pub lo: f64,
    /// `None` for the final, unbounded sub-range.
    pub hi: Option<f64>,
    pub scale: PowTwoScale,
}

/// Folding plan that maps wide DIV/RSQRT inputs into the fitted interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeScalingPlan {
    pub kind: FunctionKind,
    pub inner: SearchRange,
    pub sub_ranges: Vec<SubRange>,
}

/// Where a wide-range input lands and how to undo the folding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledInput {
    pub scale: PowTwoScale,
    /// Output multiplier: `S'` for DIV, `sqrt(S')` for RSQRT.
    pub rescale: f64,
    /// `x * S'`, saturated at the inner range's upper bound.
    pub scaled_x: f64,
}

impl RangeScalingPlan {
    pub fn new(kind: FunctionKind, inner: SearchRange, sub_ranges: Vec<SubRange>) -> Result<Self> {
        let plan = Self {
            kind,
            inner,
            sub_ranges,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::config("plan", reason));
        if self.kind.is_scale_carrying() {
            return bad(format!("{} is not a wide-range operator", self.kind));
        }
        SearchRange::new(self.inner.lo, self.inner.hi)?;
        if self.inner.lo <= 0.0 {
            return bad("inner range must be strictly positive".into());
        }
        let Some(last) = self.sub_ranges.last() else {
            return bad("at least one sub-range is required".into());
        };
        if last.hi.is_some() {
            return bad("the last sub-range must be unbounded".into());
        }
        let mut expected_lo = self.inner.hi;
        for (i, sr) in self.sub_ranges.iter().enumerate() {
            if sr.lo != expected_lo {
                return bad(format!(
                    "sub-range {i} starts at {} but should start at {expected_lo}",
                    sr.lo
                ));
            }
            if self.kind == FunctionKind::Rsqrt && sr.scale.exponent % 2 != 0 {
                return bad(format!(
                    "sub-range {i}: rsqrt needs an even scale exponent, got {}",
                    sr.scale.exponent
                ));
            }
            let s = sr.scale.value();
            if sr.lo * s < self.inner.lo {
                return bad(format!("sub-range {i} folds below the inner range"));
            }
            match sr.hi {
                Some(hi) => {
                    if hi <= sr.lo {
                        return bad(format!("sub-range {i} is empty"));
                    }
                    if hi * s > self.inner.hi {
                        return bad(format!("sub-range {i} folds above the inner range"));
                    }
                    expected_lo = hi;
                }
                None if i + 1 != self.sub_ranges.len() => {
                    return bad(format!("sub-range {i} is unbounded but not last"));
                }
                None => {}
            }
        }
        Ok(())
    }

    /// Built-in INT8 plans for DIV and RSQRT.
    pub fn preset(name: &str) -> Option<Self> {
        let sr = |lo: f64, hi: Option<f64>, e: i32| SubRange {
            lo,
            hi,
            scale: PowTwoScale::new(e),
        };
        match name {
            "div-int8" => Some(Self {
                kind: FunctionKind::Div,
                inner: SearchRange { lo: 0.5, hi: 4.0 },
                sub_ranges: vec![
                    sr(4.0, Some(32.0), -3),
                    sr(32.0, Some(256.0), -6),
                    sr(256.0, None, -6),
                ],
            }),
            "rsqrt-int8" => Some(Self {
                kind: FunctionKind::Rsqrt,
                inner: SearchRange { lo: 0.25, hi: 4.0 },
                sub_ranges: vec![
                    sr(4.0, Some(64.0), -4),
                    sr(64.0, Some(1024.0), -8),
                    sr(1024.0, None, -12),
                ],
            }),
            _ => None,
        }
    }

    pub fn preset_for(kind: FunctionKind) -> Option<Self> {
        match kind {
            FunctionKind::Div => Self::preset("div-int8"),
            FunctionKind::Rsqrt => Self::preset("rsqrt-int8"),
            _ => None,
        }
    }

    fn rescale(&self, scale: PowTwoScale) -> f64 {
        match self.kind {
            FunctionKind::Rsqrt => scale.value().sqrt(),
            _ => scale.value(),
        }
    }

    /// Picks the folding scale for `x`.
    pub fn select_subrange(&self, x: f64) -> Result<ScaledInput> {
        if x <= 0.0 || x < self.inner.lo || x.is_nan() {
            return Err(Error::Domain {
                function: self.kind.name(),
                x,
            });
        }
        if x < self.inner.hi {
            return Ok(ScaledInput {
                scale: PowTwoScale::identity(),
                rescale: 1.0,
                scaled_x: x,
            });
        }
        let sr = self
            .sub_ranges
            .iter()
            .find(|sr| x >= sr.lo && sr.hi.is_none_or(|hi| x < hi))
            .expect("validated plan tiles [inner.hi, inf)");
        Ok(ScaledInput {
            scale: sr.scale,
            rescale: self.rescale(sr.scale),
            scaled_x: (x * sr.scale.value()).min(self.inner.hi),
        })
    }

    /// Evaluates `rescale * pwl(x * S')` with the supplied in-range kernel.
    pub fn compose(&self, x: f64, kernel: impl Fn(f64) -> f64) -> Result<f64> {
        let s = self.select_subrange(x)?;
        Ok(s.rescale * kernel(s.scaled_x))
    }
}

pub fn select_subrange(x: f64, plan: &RangeScalingPlan) -> Result<ScaledInput> {
    plan.select_subrange(x)
}
