//! Reference implementations of the target non-linear operators.
//!
//! Every operator is evaluated in double precision with its exact closed
//! form. GELU uses the erf-based normal CDF rather than the tanh
//! approximation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{Error, Result};

/// Closed interval a table is fitted over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchRange {
    pub lo: f64,
    pub hi: f64,
}

impl SearchRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidRange {
                lo,
                hi,
                reason: "bounds must be finite",
            });
        }
        if lo >= hi {
            return Err(Error::InvalidRange {
                lo,
                hi,
                reason: "lower bound must be below upper bound",
            });
        }
        Ok(Self { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FunctionKind {
    Gelu,
    Hswish,
    Exp,
    Div,
    Rsqrt,
}

impl FunctionKind {
    pub const ALL: [FunctionKind; 5] = [
        FunctionKind::Gelu,
        FunctionKind::Hswish,
        FunctionKind::Exp,
        FunctionKind::Div,
        FunctionKind::Rsqrt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FunctionKind::Gelu => "gelu",
            FunctionKind::Hswish => "hswish",
            FunctionKind::Exp => "exp",
            FunctionKind::Div => "div",
            FunctionKind::Rsqrt => "rsqrt",
        }
    }

    /// Scale-carrying operators receive `S * q`; the wide-range ones
    /// consume intermediate fixed-point values instead.
    pub fn is_scale_carrying(self) -> bool {
        matches!(
            self,
            FunctionKind::Gelu | FunctionKind::Hswish | FunctionKind::Exp
        )
    }

    /// Run-time input domain. EXP only ever sees `x - max(x) <= 0`; DIV
    /// and RSQRT need a positive argument.
    pub fn admits(self, x: f64) -> bool {
        match self {
            FunctionKind::Gelu | FunctionKind::Hswish => true,
            FunctionKind::Exp => x <= 0.0,
            FunctionKind::Div | FunctionKind::Rsqrt => x > 0.0,
        }
    }

    pub fn default_range(self) -> SearchRange {
        let (lo, hi) = match self {
            FunctionKind::Gelu | FunctionKind::Hswish => (-4.0, 4.0),
            FunctionKind::Exp => (-8.0, 0.0),
            FunctionKind::Div => (0.5, 4.0),
            FunctionKind::Rsqrt => (0.25, 4.0),
        };
        SearchRange { lo, hi }
    }
}

impl fmt::Display for FunctionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FunctionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FunctionKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::config(
                    "function",
                    format!("unknown function `{s}` (expected gelu, hswish, exp, div or rsqrt)"),
                )
            })
    }
}

/// Something a piecewise-linear table can be fitted to.
///
/// `value` is only ever called on points inside (or derived from) the
/// search range, so implementations may assume their domain holds.
pub trait Nonlinearity: Sync {
    fn value(&self, x: f64) -> f64;
    fn search_range(&self) -> SearchRange;

    /// Whether inputs arrive as `S * q` for a power-of-two scale `S`.
    fn scale_carrying(&self) -> bool {
        true
    }

    /// Whether `x` can reach the operator at run time. Quantized sweeps
    /// skip inputs outside this domain.
    fn admits(&self, _x: f64) -> bool {
        true
    }
}

/// A target operator together with its search range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonLinSpec {
    kind: FunctionKind,
    range: SearchRange,
}

impl NonLinSpec {
    pub fn new(kind: FunctionKind, range: SearchRange) -> Result<Self> {
        let range = SearchRange::new(range.lo, range.hi)?;
        if !kind.is_scale_carrying() && range.lo <= 0.0 {
            return Err(Error::InvalidRange {
                lo: range.lo,
                hi: range.hi,
                reason: "div and rsqrt need a strictly positive range",
            });
        }
        Ok(Self { kind, range })
    }

    pub fn with_default_range(kind: FunctionKind) -> Self {
        Self {
            kind,
            range: kind.default_range(),
        }
    }

    pub fn kind(&self) -> FunctionKind {
        self.kind
    }

    pub fn range(&self) -> SearchRange {
        self.range
    }

    pub fn scale_carrying(&self) -> bool {
        self.kind.is_scale_carrying()
    }

    /// Exact value of the operator at `x`.
    pub fn eval_ref(&self, x: f64) -> Result<f64> {
        if !self.scale_carrying() && x <= 0.0 {
            return Err(Error::Domain {
                function: self.kind.name(),
                x,
            });
        }
        Ok(eval_kind(self.kind, x))
    }
}

impl Nonlinearity for NonLinSpec {
    fn value(&self, x: f64) -> f64 {
        eval_kind(self.kind, x)
    }

    fn search_range(&self) -> SearchRange {
        self.range
    }

    fn scale_carrying(&self) -> bool {
        self.kind.is_scale_carrying()
    }

    fn admits(&self, x: f64) -> bool {
        self.kind.admits(x)
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn eval_kind(kind: FunctionKind, x: f64) -> f64 {
    match kind {
        FunctionKind::Gelu => x * normal_cdf(x),
        FunctionKind::Hswish => x * (x + 3.0).clamp(0.0, 6.0) / 6.0,
        FunctionKind::Exp => x.exp(),
        FunctionKind::Div => 1.0 / x,
        FunctionKind::Rsqrt => 1.0 / x.sqrt(),
    }
}
