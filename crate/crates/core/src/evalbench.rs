//! Quantization-aware accuracy evaluation.
//!
//! Scale-carrying operators are scored on every integer input of the
//! quantized format: `x = S * q` for all `q` in `[Q_n, Q_p]`, pushed
//! through the integer datapath and compared against the exact operator.
//! Wide-range operators are scored through their folding plan on an
//! ordered sample of the fitted interval and every bounded sub-range.

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolve::MutationKind;
use crate::intsim::{int_pwl_real, DatapathConfig};
use crate::nonlin::{FunctionKind, Nonlinearity};
use crate::pwl::{derive_table, sample_grid, BreakpointSet, FitnessGrid, PwlTable, DEFAULT_STEP};
use crate::quant::{dequantize, fxp_quantize_table, quantize_table, PowTwoScale, QuantSpec, RangeScalingPlan};

/// Exponents swept by default: `S = 2^-6 ... 2^0`.
pub const DEFAULT_EXPONENTS: [i32; 7] = [-6, -5, -4, -3, -2, -1, 0];

/// Points sampled per bounded sub-range in [`wide_range_mse`].
pub const SUBRANGE_SAMPLES: usize = 1024;

/// Largest number of candidate sets [`brute_force_oracle`] will score.
pub const ORACLE_BUDGET: u128 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleMse {
    pub exponent: i32,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSweepReport {
    pub per_scale: Vec<ScaleMse>,
    pub average_mse: f64,
    pub function: Option<FunctionKind>,
    pub entries: usize,
    pub method: Option<MutationKind>,
}

impl ScaleSweepReport {
    pub fn with_function(mut self, kind: FunctionKind) -> Self {
        self.function = Some(kind);
        self
    }

    pub fn with_method(mut self, method: MutationKind) -> Self {
        self.method = Some(method);
        self
    }

    /// Sum of per-scale MSE over the listed exponents.
    pub fn subset_sum(&self, exponents: &[i32]) -> f64 {
        self.per_scale
            .iter()
            .filter(|s| exponents.contains(&s.exponent))
            .map(|s| s.mse)
            .sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("exponent,scale,mse\n");
        for s in &self.per_scale {
            out.push_str(&format!(
                "{},{},{:e}\n",
                s.exponent,
                PowTwoScale::new(s.exponent).value(),
                s.mse
            ));
        }
        out.push_str(&format!("average,,{:e}\n", self.average_mse));
        out
    }
}

fn require_scale_carrying<T: Nonlinearity + ?Sized>(target: &T, expected: bool) -> Result<()> {
    if target.scale_carrying() == expected {
        return Ok(());
    }
    let (expected, got) = if expected {
        ("scale-carrying", "wide-range operator")
    } else {
        ("wide-range", "scale-carrying operator")
    };
    Err(Error::OperatorKind {
        expected,
        got: got.into(),
    })
}

/// Mean squared error of the integer datapath over every input code whose
/// dequantized value the operator admits.
pub fn quant_aware_mse<T: Nonlinearity + ?Sized>(
    table: &PwlTable,
    target: &T,
    scale: PowTwoScale,
    qs: QuantSpec,
    datapath: &DatapathConfig,
) -> Result<f64> {
    require_scale_carrying(target, true)?;
    let quantized = quantize_table(table, scale, qs, datapath.lambda, datapath.param_bits)?;
    let mut acc = 0.0;
    let mut count = 0usize;
    for q in qs.levels() {
        let x = dequantize(q, scale);
        if !target.admits(x) {
            continue;
        }
        let y = int_pwl_real(q, &quantized.table, datapath)?;
        let d = y - target.value(x);
        acc += d * d;
        count += 1;
    }
    if count == 0 {
        return Err(Error::config("quant", "no input code falls inside the operator's domain"));
    }
    Ok(acc / count as f64)
}

pub fn sweep_scales<T: Nonlinearity + ?Sized>(
    table: &PwlTable,
    target: &T,
    exponents: &[i32],
    qs: QuantSpec,
    datapath: &DatapathConfig,
) -> Result<ScaleSweepReport> {
    if exponents.is_empty() {
        return Err(Error::config("quant.exponents", "at least one exponent is required"));
    }
    let per_scale = exponents
        .par_iter()
        .map(|&e| {
            quant_aware_mse(table, target, PowTwoScale::new(e), qs, datapath)
                .map(|mse| ScaleMse { exponent: e, mse })
        })
        .collect::<Result<Vec<_>>>()?;
    let average_mse = per_scale.iter().map(|s| s.mse).sum::<f64>() / per_scale.len() as f64;
    Ok(ScaleSweepReport {
        per_scale,
        average_mse,
        function: None,
        entries: table.entries(),
        method: None,
    })
}

/// Every point [`wide_range_mse`] samples: the inner range at the fitness
/// step, then `samples_per_range` evenly spaced points of each bounded
/// sub-range.
pub fn wide_range_samples(plan: &RangeScalingPlan, samples_per_range: usize) -> Vec<f64> {
    let mut xs = sample_grid(plan.inner, DEFAULT_STEP);
    for sr in &plan.sub_ranges {
        if let Some(hi) = sr.hi {
            let w = hi - sr.lo;
            xs.extend((0..samples_per_range).map(|j| sr.lo + w * j as f64 / samples_per_range as f64));
        }
    }
    xs
}

/// Mean squared error of a DIV/RSQRT table stored as `bits`-wide fixed
/// point with `lambda` fractional bits, evaluated through `plan`.
pub fn wide_range_mse<T: Nonlinearity + ?Sized>(
    table: &PwlTable,
    target: &T,
    plan: &RangeScalingPlan,
    samples_per_range: usize,
    lambda: u32,
    bits: u32,
) -> Result<f64> {
    require_scale_carrying(target, false)?;
    plan.validate()?;
    let quantized = fxp_quantize_table(table, lambda, bits)?;
    let xs = wide_range_samples(plan, samples_per_range);
    let mut acc = 0.0;
    for &x in &xs {
        let y = plan.compose(x, |v| quantized.table.eval_fixed(v))?;
        let d = y - target.value(x);
        acc += d * d;
    }
    Ok(acc / xs.len() as f64)
}

/// Exhaustive optimum over breakpoint sets drawn from a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub table: PwlTable,
    pub mse: f64,
    pub candidates: usize,
}

/// Interior grid points `lo + j * step` strictly inside the range.
pub fn oracle_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    (1..)
        .map(|j| lo + j as f64 * step)
        .take_while(|x| *x < hi - 1e-9 * step)
        .collect()
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1))
}

/// Scores every ascending `n_breakpoints`-tuple of interior grid points and
/// returns the best table (first one found on ties).
pub fn brute_force_oracle<T: Nonlinearity + ?Sized>(
    target: &T,
    n_breakpoints: usize,
    grid_step: f64,
) -> Result<OracleResult> {
    brute_force_oracle_with_budget(target, n_breakpoints, grid_step, ORACLE_BUDGET)
}

pub fn brute_force_oracle_with_budget<T: Nonlinearity + ?Sized>(
    target: &T,
    n_breakpoints: usize,
    grid_step: f64,
    budget: u128,
) -> Result<OracleResult> {
    if n_breakpoints == 0 || grid_step <= 0.0 {
        return Err(Error::config(
            "oracle",
            "need at least one breakpoint and a positive grid step",
        ));
    }
    let range = target.search_range();
    let grid = oracle_grid(range.lo, range.hi, grid_step);
    let combinations = binomial(grid.len(), n_breakpoints);
    if combinations > budget {
        return Err(Error::BudgetExceeded { combinations, budget });
    }
    let fitness = FitnessGrid::new(target, DEFAULT_STEP);
    let mut best: Option<(f64, PwlTable)> = None;
    let mut candidates = 0;
    for combo in grid.iter().copied().combinations(n_breakpoints) {
        let Ok(bps) = BreakpointSet::new(combo, range) else {
            continue;
        };
        let Ok(table) = derive_table(target, &bps) else {
            continue;
        };
        candidates += 1;
        let mse = fitness.mse(&table);
        if best.as_ref().is_none_or(|(b, _)| mse < *b) {
            best = Some((mse, table));
        }
    }
    let (mse, table) = best.ok_or_else(|| Error::config("oracle", "no admissible breakpoint set on the grid"))?;
    Ok(OracleResult {
        table,
        mse,
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlin::{NonLinSpec, SearchRange};
    use crate::pwl::fitness_mse;

    struct Identity(SearchRange);

    impl Nonlinearity for Identity {
        fn value(&self, x: f64) -> f64 {
            x
        }
        fn search_range(&self) -> SearchRange {
            self.0
        }
    }

    fn gelu() -> NonLinSpec {
        NonLinSpec::with_default_range(FunctionKind::Gelu)
    }

    fn sample_gelu_table() -> PwlTable {
        let s = gelu();
        let bps = BreakpointSet::new(vec![-2.75, -1.5, -0.75, 0.0, 0.75, 1.5, 2.75], s.range()).unwrap();
        derive_table(&s, &bps).unwrap().round_params(5)
    }

    #[test]
    fn identity_is_exact_at_every_scale() {
        let r = SearchRange::new(-4.0, 4.0).unwrap();
        let bps = BreakpointSet::new(vec![-1.0, 1.0], r).unwrap();
        let t = derive_table(&Identity(r), &bps).unwrap().round_params(5);
        let rep = sweep_scales(&t, &Identity(r), &DEFAULT_EXPONENTS, QuantSpec::int8(), &DatapathConfig::default()).unwrap();
        assert_eq!(rep.per_scale.len(), 7);
        assert!(rep.per_scale.iter().all(|s| s.mse == 0.0));
        assert_eq!(rep.average_mse, 0.0);
    }

    // Naive restatement of the sweep in floating point: for exponents <= 0
    // every quantity is dyadic, so the integer datapath is exact and the
    // two routes must agree.
    #[test]
    fn sweep_matches_naive_float_route() {
        let s = gelu();
        let t = sample_gelu_table();
        let rep = sweep_scales(&t, &s, &DEFAULT_EXPONENTS, QuantSpec::int8(), &DatapathConfig::default()).unwrap();
        for entry in &rep.per_scale {
            let scale = 2f64.powi(entry.exponent);
            let pts = t.breakpoints().points();
            let codes: Vec<f64> = pts.iter().map(|p| (p / scale).round().clamp(-128.0, 127.0)).collect();
            let mut acc = 0.0;
            for q in -128..=127 {
                let qf = q as f64;
                let seg = codes.iter().filter(|c| **c <= qf).count();
                let y = t.slopes()[seg] * scale * qf + t.intercepts()[seg];
                acc += (y - s.value(scale * qf)).powi(2);
            }
            let naive = acc / 256.0;
            assert!((naive - entry.mse).abs() <= 1e-12 * naive.max(1e-300), "e={}", entry.exponent);
        }
        let mean = rep.per_scale.iter().map(|s| s.mse).sum::<f64>() / 7.0;
        assert_eq!(rep.average_mse, mean);
    }

    // A finer grid contains the coarser one, so no stored parameter moves
    // further from its real value as lambda grows.
    #[test]
    fn finer_grid_never_moves_parameters_further() {
        use rand::{Rng, SeedableRng};
        let s = gelu();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..40 {
            let pts: Vec<f64> = (0..7).map(|_| rng.random_range(-3.9..3.9)).collect();
            let bps = BreakpointSet::repaired(pts, s.range(), 0.02).unwrap();
            let float = derive_table(&s, &bps).unwrap();
            for lambda in 4..=6 {
                let (fine, coarse) = (float.round_params(lambda), float.round_params(lambda - 1));
                for i in 0..float.entries() {
                    let k = float.slopes()[i];
                    let b = float.intercepts()[i];
                    assert!((fine.slopes()[i] - k).abs() <= (coarse.slopes()[i] - k).abs());
                    assert!((fine.intercepts()[i] - b).abs() <= (coarse.intercepts()[i] - b).abs());
                }
            }
        }
    }

    // The sweep MSE itself is not monotone in lambda. Inputs at S = 1 reach
    // |x| = 128, where only the tail entries matter: the right tail
    // intercept -0.0259 rounds to 0 at lambda = 4 (on the asymptote
    // gelu(x) = x) but to -1/32 at lambda = 5.
    #[test]
    fn sweep_mse_is_not_monotone_in_lambda() {
        let s = gelu();
        let bps = BreakpointSet::new(vec![-2.75, -1.5, -0.75, 0.0, 0.75, 1.5, 2.75], s.range()).unwrap();
        let float = derive_table(&s, &bps).unwrap();
        let at = |lambda| {
            quant_aware_mse(
                &float.round_params(lambda),
                &s,
                PowTwoScale::identity(),
                QuantSpec::int8(),
                &DatapathConfig::int8(lambda),
            )
            .unwrap()
        };
        assert_eq!(float.round_params(4).intercepts()[7], 0.0);
        assert_eq!(float.round_params(5).intercepts()[7], -1.0 / 32.0);
        assert!(at(5) > 10.0 * at(4));
    }

    #[test]
    fn wide_range_requires_wide_operator() {
        let plan = RangeScalingPlan::preset("div-int8").unwrap();
        let err = wide_range_mse(&sample_gelu_table(), &gelu(), &plan, 16, 5, 8);
        assert!(matches!(err, Err(Error::OperatorKind { .. })));
        let div = NonLinSpec::with_default_range(FunctionKind::Div);
        let t = derive_table(&div, &BreakpointSet::new(vec![1.0, 2.0], div.range()).unwrap()).unwrap();
        let err = quant_aware_mse(&t, &div, PowTwoScale::identity(), QuantSpec::int8(), &DatapathConfig::default());
        assert!(matches!(err, Err(Error::OperatorKind { .. })));
    }

    #[test]
    fn wide_range_sample_layout() {
        let plan = RangeScalingPlan::preset("div-int8").unwrap();
        let xs = wide_range_samples(&plan, 1024);
        assert_eq!(xs.len(), 351 + 2 * 1024);
        let plan = RangeScalingPlan::preset("rsqrt-int8").unwrap();
        assert_eq!(wide_range_samples(&plan, 1024).len(), 376 + 2 * 1024);
    }

    #[test]
    fn rsqrt_power_of_two_points_are_exact() {
        let plan = RangeScalingPlan::preset("rsqrt-int8").unwrap();
        // one entry exactly 1/sqrt(x) at x = 1: k = -0.5, b = 1.5
        let r = plan.inner;
        let bps = BreakpointSet::new(vec![1.0], r).unwrap();
        let t = PwlTable::from_parts(vec![-1.0, -0.5], vec![2.0, 1.5], bps, r).unwrap();
        let q = fxp_quantize_table(&t, 5, 8).unwrap();
        for x in [1.0, 16.0, 256.0, 4096.0] {
            let y = plan.compose(x, |v| q.table.eval_fixed(v)).unwrap();
            assert_eq!(y, 1.0 / x.sqrt(), "x = {x}");
        }
    }

    #[test]
    fn oracle_on_linear_target_takes_first_candidate() {
        let r = SearchRange::new(-1.0, 1.0).unwrap();
        let res = brute_force_oracle(&Identity(r), 2, 0.25).unwrap();
        assert_eq!(res.mse, 0.0);
        assert_eq!(res.table.breakpoints().points(), &[-0.75, -0.5]);
        assert_eq!(res.candidates, 21);
    }

    #[test]
    fn oracle_refuses_large_enumerations() {
        let s = gelu();
        assert!(matches!(
            brute_force_oracle(&s, 3, 0.01),
            Err(Error::BudgetExceeded { .. })
        ));
        assert_eq!(binomial(159, 2), 12561);
    }

    #[test]
    fn oracle_dominates_grid_tables() {
        use rand::{Rng, SeedableRng};
        let s = gelu();
        let res = brute_force_oracle(&s, 2, 0.1).unwrap();
        let grid = oracle_grid(-4.0, 4.0, 0.1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let mut i = rng.random_range(0..grid.len());
            let mut j = rng.random_range(0..grid.len());
            if i == j {
                continue;
            }
            if i > j {
                std::mem::swap(&mut i, &mut j);
            }
            let bps = BreakpointSet::new(vec![grid[i], grid[j]], s.range()).unwrap();
            let m = fitness_mse(&derive_table(&s, &bps).unwrap(), &s, DEFAULT_STEP);
            assert!(res.mse <= m);
        }
    }
}
