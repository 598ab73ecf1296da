//! Real-valued piecewise-linear tables.
//!
//! A table with `N` entries has `N - 1` ascending breakpoints. Entry `i`
//! covers `p[i-1] <= x < p[i]`; entry 0 takes everything below the first
//! breakpoint and the last entry everything at or above the final one, so
//! both tails extend linearly past the fitted range.
//!
//! Slopes and intercepts are derived from breakpoints by interpolating the
//! target at every breakpoint, with the search-range endpoints acting as
//! virtual breakpoints for the two tail entries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonlin::{Nonlinearity, SearchRange};

/// Default spacing of the fitness sampling grid.
pub const DEFAULT_STEP: f64 = 0.01;

/// Smallest admissible distance between neighbouring breakpoints (and
/// between the outer breakpoints and the range ends).
pub const DEFAULT_MIN_GAP: f64 = 2.0 * DEFAULT_STEP;

// Relative slack for gaps produced by `p + gap` in floating point.
const GAP_SLACK: f64 = 1e-9;

/// Strictly ascending breakpoints inside a search range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BreakpointSet {
    points: Vec<f64>,
}

impl BreakpointSet {
    /// Validates `points` as-is: finite, strictly ascending, inside `range`.
    pub fn new(points: Vec<f64>, range: SearchRange) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidBreakpoints("empty breakpoint set".into()));
        }
        if let Some(p) = points.iter().find(|p| !p.is_finite() || !range.contains(**p)) {
            return Err(Error::InvalidBreakpoints(format!(
                "{p} lies outside [{}, {}]",
                range.lo, range.hi
            )));
        }
        if let Some(w) = points.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidBreakpoints(format!(
                "not strictly ascending at {} >= {}",
                w[0], w[1]
            )));
        }
        Ok(Self { points })
    }

    /// Sorts, clips into `range` and pushes points apart until every gap
    /// (including the ones to the range ends) is at least `min_gap`.
    pub fn repaired(mut points: Vec<f64>, range: SearchRange, min_gap: f64) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::InvalidBreakpoints("empty breakpoint set".into()));
        }
        if (n as f64 + 1.0) * min_gap > range.width() {
            return Err(Error::InvalidBreakpoints(format!(
                "{n} breakpoints with minimum gap {min_gap} do not fit in [{}, {}]",
                range.lo, range.hi
            )));
        }
        points.sort_by(f64::total_cmp);
        let mut floor = range.lo + min_gap;
        for p in points.iter_mut() {
            *p = p.max(floor);
            floor = *p + min_gap;
        }
        let mut ceil = range.hi - min_gap;
        for p in points.iter_mut().rev() {
            *p = p.min(ceil);
            ceil = *p - min_gap;
        }
        Self::new(points, range)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.points
    }

    /// True when every gap, including the ones to the range ends, is at
    /// least `min_gap`.
    pub fn respects_gap(&self, range: SearchRange, min_gap: f64) -> bool {
        first_narrow_gap(&self.points, range, min_gap).is_none()
    }
}

fn first_narrow_gap(points: &[f64], range: SearchRange, min_gap: f64) -> Option<(usize, f64)> {
    let limit = min_gap * (1.0 - GAP_SLACK);
    let n = points.len();
    (0..=n).find_map(|i| {
        let left = if i == 0 { range.lo } else { points[i - 1] };
        let right = if i == n { range.hi } else { points[i] };
        let gap = right - left;
        (gap < limit).then_some((i, gap))
    })
}

/// An `N`-entry piecewise-linear approximation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwlTable {
    slopes: Vec<f64>,
    intercepts: Vec<f64>,
    breakpoints: BreakpointSet,
    range: SearchRange,
}

impl PwlTable {
    /// Assembles a table from explicit parameters.
    pub fn from_parts(
        slopes: Vec<f64>,
        intercepts: Vec<f64>,
        breakpoints: BreakpointSet,
        range: SearchRange,
    ) -> Result<Self> {
        let n = breakpoints.len() + 1;
        if slopes.len() != n || intercepts.len() != n {
            return Err(Error::InvalidBreakpoints(format!(
                "{} breakpoints need {n} slopes and intercepts, got {} and {}",
                breakpoints.len(),
                slopes.len(),
                intercepts.len()
            )));
        }
        Ok(Self {
            slopes,
            intercepts,
            breakpoints,
            range,
        })
    }

    pub fn entries(&self) -> usize {
        self.slopes.len()
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn intercepts(&self) -> &[f64] {
        &self.intercepts
    }

    pub fn breakpoints(&self) -> &BreakpointSet {
        &self.breakpoints
    }

    pub fn range(&self) -> SearchRange {
        self.range
    }

    /// Index of the entry responsible for `x`.
    pub fn segment(&self, x: f64) -> usize {
        self.breakpoints.points.partition_point(|&p| p <= x)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let i = self.segment(x);
        self.slopes[i] * x + self.intercepts[i]
    }

    /// Rounds slopes and intercepts to the nearest multiple of `2^-frac_bits`.
    /// Breakpoints are left untouched.
    pub fn round_params(&self, frac_bits: u32) -> PwlTable {
        let round = |v: &f64| crate::quant::round_to_grid(*v, frac_bits as i32);
        PwlTable {
            slopes: self.slopes.iter().map(round).collect(),
            intercepts: self.intercepts.iter().map(round).collect(),
            breakpoints: self.breakpoints.clone(),
            range: self.range,
        }
    }
}

/// Derives slopes and intercepts by interpolating `target` at every
/// breakpoint and at both ends of its search range.
pub fn derive_table<T: Nonlinearity + ?Sized>(target: &T, bps: &BreakpointSet) -> Result<PwlTable> {
    derive_table_with_gap(target, bps, DEFAULT_MIN_GAP)
}

pub fn derive_table_with_gap<T: Nonlinearity + ?Sized>(
    target: &T,
    bps: &BreakpointSet,
    min_gap: f64,
) -> Result<PwlTable> {
    let range = target.search_range();
    if let Some((index, gap)) = first_narrow_gap(bps.points(), range, min_gap) {
        return Err(Error::DegenerateGap { index, gap, min_gap });
    }
    if bps.points().iter().any(|p| !range.contains(*p)) {
        return Err(Error::InvalidBreakpoints(
            "breakpoint outside the target's search range".into(),
        ));
    }
    let (slopes, intercepts) = interpolate(target, range, bps.points());
    Ok(PwlTable {
        slopes,
        intercepts,
        breakpoints: bps.clone(),
        range,
    })
}

fn interpolate<T: Nonlinearity + ?Sized>(
    target: &T,
    range: SearchRange,
    points: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let n = points.len() + 1;
    let mut knots = Vec::with_capacity(n + 1);
    knots.push(range.lo);
    knots.extend_from_slice(points);
    knots.push(range.hi);
    let values: Vec<f64> = knots.iter().map(|&x| target.value(x)).collect();

    let mut slopes = Vec::with_capacity(n);
    let mut intercepts = Vec::with_capacity(n);
    for i in 0..n {
        let (x0, x1) = (knots[i], knots[i + 1]);
        let (y0, y1) = (values[i], values[i + 1]);
        let k = (y1 - y0) / (x1 - x0);
        slopes.push(k);
        intercepts.push(y0 - k * x0);
    }
    (slopes, intercepts)
}

pub fn eval_pwl(table: &PwlTable, x: f64) -> f64 {
    table.eval(x)
}

/// Sampling points `lo, lo + step, ...` up to and including `hi` when it
/// falls on the grid.
pub fn sample_grid(range: SearchRange, step: f64) -> Vec<f64> {
    let count = ((range.hi - range.lo) / step + 1e-9).floor() as usize;
    (0..=count).map(|j| range.lo + j as f64 * step).collect()
}

/// Mean squared error of `table` against `target` over the sampling grid.
///
/// The sum of squared errors is normalised by `(hi - lo) / step`, the
/// interval count rather than the sample count.
pub fn fitness_mse<T: Nonlinearity + ?Sized>(table: &PwlTable, target: &T, step: f64) -> f64 {
    FitnessGrid::new(target, step).mse(table)
}

/// Precomputed sampling grid and target values for repeated fitness calls.
#[derive(Debug, Clone)]
pub struct FitnessGrid {
    xs: Vec<f64>,
    fs: Vec<f64>,
    divisor: f64,
}

impl FitnessGrid {
    pub fn new<T: Nonlinearity + ?Sized>(target: &T, step: f64) -> Self {
        assert!(step > 0.0, "sampling step must be positive");
        let range = target.search_range();
        let xs = sample_grid(range, step);
        let fs = xs.iter().map(|&x| target.value(x)).collect();
        Self {
            xs,
            fs,
            divisor: range.width() / step,
        }
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn mse(&self, table: &PwlTable) -> f64 {
        let bps = table.breakpoints.points();
        let mut seg = 0;
        let mut acc = 0.0;
        for (&x, &f) in self.xs.iter().zip(&self.fs) {
            while seg < bps.len() && x >= bps[seg] {
                seg += 1;
            }
            let d = table.slopes[seg] * x + table.intercepts[seg] - f;
            acc += d * d;
        }
        acc / self.divisor
    }
}
