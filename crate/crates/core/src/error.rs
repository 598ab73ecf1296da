use thiserror::Error;

/// Errors raised across the fitting, quantization and simulation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{function} is undefined at x = {x}")]
    Domain { function: &'static str, x: f64 },

    #[error("invalid search range [{lo}, {hi}]: {reason}")]
    InvalidRange { lo: f64, hi: f64, reason: &'static str },

    #[error("invalid breakpoint set: {0}")]
    InvalidBreakpoints(String),

    #[error("degenerate segment {index}: gap {gap} below minimum {min_gap}")]
    DegenerateGap { index: usize, gap: f64, min_gap: f64 },

    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("input {q} is outside [{lo}, {hi}]")]
    InputOutOfRange { q: i64, lo: i64, hi: i64 },

    #[error("accumulator overflow: value {value} does not fit in {acc_bits} signed bits")]
    AccumulatorOverflow { value: i128, acc_bits: u32 },

    #[error("enumeration of {combinations} candidate sets exceeds the budget of {budget}")]
    BudgetExceeded { combinations: u128, budget: u128 },

    #[error("operation requires a {expected} operator, got {got}")]
    OperatorKind { expected: &'static str, got: String },
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
