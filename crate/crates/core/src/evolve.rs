//! Genetic search over breakpoint sets.
//!
//! Each generation every individual may swap a random contiguous slice of
//! breakpoints with a random partner (probability `cross_prob`) and may be
//! mutated (probability `mutate_prob`), either with Gaussian noise or with
//! rounding mutation, which snaps breakpoints onto random power-of-two
//! grids. The varied population is scored by [`FitnessGrid::mse`] and the
//! next generation is drawn by size-3 tournaments. There is no elitism.
//!
//! The best final individual is turned into a table whose slopes and
//! intercepts are rounded to `fxp_frac_bits` fractional bits.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonlin::{FunctionKind, Nonlinearity, SearchRange};
use crate::pwl::{derive_table, BreakpointSet, FitnessGrid, PwlTable, DEFAULT_MIN_GAP, DEFAULT_STEP};
use crate::quant::round_to_grid;

/// Seedable generator used for every stochastic step.
pub type GaRng = ChaCha8Rng;

pub const TOURNAMENT_SIZE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MutationKind {
    Gaussian,
    #[serde(rename = "rm", alias = "rounding")]
    Rounding,
}

impl MutationKind {
    pub fn tag(self) -> &'static str {
        match self {
            MutationKind::Gaussian => "gaussian",
            MutationKind::Rounding => "rm",
        }
    }
}

impl std::str::FromStr for MutationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(MutationKind::Gaussian),
            "rm" | "rounding" => Ok(MutationKind::Rounding),
            other => Err(Error::config(
                "mutation",
                format!("unknown mutation `{other}` (expected gaussian or rm)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub n_breakpoints: usize,
    pub population_size: usize,
    pub cross_prob: f64,
    pub mutate_prob: f64,
    /// Per-level rounding-mutation probability.
    pub rm_prob: f64,
    /// Inclusive range of grid exponents `i` (grid spacing `2^-i`).
    pub rm_range: (u32, u32),
    pub iterations: usize,
    /// Fractional bits of the exported slopes and intercepts.
    pub fxp_frac_bits: u32,
    pub mutation_kind: MutationKind,
    /// Standard deviation of Gaussian mutation. `None` means 5% of the
    /// search range width.
    pub gaussian_sigma: Option<f64>,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            n_breakpoints: 7,
            population_size: 50,
            cross_prob: 0.7,
            mutate_prob: 0.2,
            rm_prob: 0.05,
            rm_range: (0, 6),
            iterations: 500,
            fxp_frac_bits: 5,
            mutation_kind: MutationKind::Rounding,
            gaussian_sigma: None,
            seed: 0,
        }
    }
}

impl GaConfig {
    /// Per-operator defaults for an `entries`-entry table.
    pub fn for_function(kind: FunctionKind, entries: usize) -> Self {
        let wide = entries >= 16;
        let (rm_prob, rm_range, mutation_kind) = match kind {
            FunctionKind::Gelu => (0.05, (0, 6), MutationKind::Rounding),
            FunctionKind::Hswish => (0.05, if wide { (2, 6) } else { (0, 6) }, MutationKind::Rounding),
            FunctionKind::Exp => (0.05, if wide { (0, 6) } else { (2, 6) }, MutationKind::Rounding),
            FunctionKind::Div | FunctionKind::Rsqrt => (0.0, (0, 0), MutationKind::Gaussian),
        };
        Self {
            n_breakpoints: entries.saturating_sub(1),
            rm_prob,
            rm_range,
            mutation_kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |field: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(field, format!("{v} is not a probability")))
            }
        };
        if self.n_breakpoints == 0 {
            return Err(Error::config("ga.n_breakpoints", "at least one breakpoint is required"));
        }
        if self.population_size == 0 {
            return Err(Error::config("ga.population_size", "must be positive"));
        }
        prob("ga.cross_prob", self.cross_prob)?;
        prob("ga.mutate_prob", self.mutate_prob)?;
        prob("ga.rm_prob", self.rm_prob)?;
        let (ma, mb) = self.rm_range;
        if ma > mb {
            return Err(Error::config("ga.rm_range", format!("[{ma}, {mb}] is reversed")));
        }
        if mb > 52 {
            return Err(Error::config("ga.rm_range", "grid exponents above 52 are meaningless"));
        }
        if (mb - ma + 1) as f64 * self.rm_prob > 1.0 + 1e-12 {
            return Err(Error::config(
                "ga.rm_prob",
                format!(
                    "{} levels at probability {} exceed a total of 1",
                    mb - ma + 1,
                    self.rm_prob
                ),
            ));
        }
        if self.fxp_frac_bits > 30 {
            return Err(Error::config("ga.fxp_frac_bits", "at most 30 fractional bits"));
        }
        if let Some(s) = self.gaussian_sigma {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::config("ga.gaussian_sigma", format!("{s} must be positive")));
            }
        }
        Ok(())
    }

    pub fn sigma_for(&self, range: SearchRange) -> f64 {
        self.gaussian_sigma.unwrap_or(0.05 * range.width())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub individuals: Vec<BreakpointSet>,
    pub generation: usize,
}

fn repaired(points: Vec<f64>, range: SearchRange) -> BreakpointSet {
    BreakpointSet::repaired(points, range, DEFAULT_MIN_GAP)
        .expect("breakpoint count fits the range (checked by evolve)")
}

pub fn init_population<R: Rng + ?Sized>(cfg: &GaConfig, range: SearchRange, rng: &mut R) -> Population {
    let individuals = (0..cfg.population_size)
        .map(|_| {
            let pts = (0..cfg.n_breakpoints)
                .map(|_| rng.random_range(range.lo..=range.hi))
                .collect();
            repaired(pts, range)
        })
        .collect();
    Population {
        individuals,
        generation: 0,
    }
}

/// Swaps indices `first..=last` between two parents.
pub fn crossover_slice(
    a: &BreakpointSet,
    b: &BreakpointSet,
    first: usize,
    last: usize,
    range: SearchRange,
) -> (BreakpointSet, BreakpointSet) {
    let mut pa = a.points().to_vec();
    let mut pb = b.points().to_vec();
    pa[first..=last].swap_with_slice(&mut pb[first..=last]);
    (repaired(pa, range), repaired(pb, range))
}

/// Swaps a uniformly chosen contiguous slice between two parents.
pub fn crossover<R: Rng + ?Sized>(
    a: &BreakpointSet,
    b: &BreakpointSet,
    range: SearchRange,
    rng: &mut R,
) -> (BreakpointSet, BreakpointSet) {
    assert_eq!(a.len(), b.len(), "parents must have the same breakpoint count");
    let n = a.len();
    // index of the (first, last) pair in row-major order over first <= last
    let mut k = rng.random_range(0..n * (n + 1) / 2);
    let mut first = 0;
    while k >= n - first {
        k -= n - first;
        first += 1;
    }
    crossover_slice(a, b, first, first + k, range)
}

pub fn gaussian_mutate<R: Rng + ?Sized>(
    p: &BreakpointSet,
    sigma: f64,
    range: SearchRange,
    rng: &mut R,
) -> BreakpointSet {
    let noise = Normal::new(0.0, sigma).expect("sigma is positive and finite");
    let pts = p
        .points()
        .iter()
        .map(|&x| (x + noise.sample(rng)).clamp(range.lo, range.hi))
        .collect();
    repaired(pts, range)
}

/// Grid exponent selected by a uniform draw, if any: level `i` in
/// `[m_a, m_b]` fires when `i * rm_prob <= draw < (i + 1) * rm_prob`.
pub fn rounding_level(draw: f64, cfg: &GaConfig) -> Option<u32> {
    let (ma, mb) = cfg.rm_range;
    (ma..=mb).find(|&i| {
        let lo = i as f64 * cfg.rm_prob;
        let hi = (i + 1) as f64 * cfg.rm_prob;
        lo <= draw && draw < hi
    })
}

/// Rounds `p` to the nearest multiple of `2^-level`.
pub fn round_to_level(p: f64, level: u32) -> f64 {
    round_to_grid(p, level as i32)
}

/// Snaps each breakpoint onto a randomly chosen power-of-two grid; points
/// whose draw selects no level are kept as they are.
pub fn rounding_mutate<R: Rng + ?Sized>(
    p: &BreakpointSet,
    cfg: &GaConfig,
    range: SearchRange,
    rng: &mut R,
) -> BreakpointSet {
    let pts = p
        .points()
        .iter()
        .map(|&x| {
            let draw: f64 = rng.random();
            match rounding_level(draw, cfg) {
                Some(level) => round_to_level(x, level),
                None => x,
            }
        })
        .collect();
    repaired(pts, range)
}

/// Size-3 tournaments with replacement; lower fitness wins, ties go to the
/// lower index.
pub fn tournament_select<R: Rng + ?Sized>(
    pop: &Population,
    fitnesses: &[f64],
    rng: &mut R,
) -> Population {
    let n = pop.individuals.len();
    assert_eq!(fitnesses.len(), n, "one fitness per individual");
    let indices: Vec<usize> = (0..n).collect();
    let individuals = (0..n)
        .map(|_| {
            let mut winner = *indices.choose(rng).expect("non-empty population");
            for _ in 1..TOURNAMENT_SIZE {
                let c = *indices.choose(rng).expect("non-empty population");
                if fitnesses[c] < fitnesses[winner] || (fitnesses[c] == fitnesses[winner] && c < winner) {
                    winner = c;
                }
            }
            pop.individuals[winner].clone()
        })
        .collect();
    Population {
        individuals,
        generation: pop.generation + 1,
    }
}

/// Everything a finished run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolveOutcome {
    /// Best table with slopes and intercepts on the fixed-point grid.
    pub table: PwlTable,
    /// The same table before parameter rounding.
    pub float_table: PwlTable,
    /// Fitness of `float_table`.
    pub best_fitness: f64,
    /// Best post-variation fitness of every generation.
    pub history: Vec<f64>,
}

fn score<T: Nonlinearity + ?Sized>(target: &T, grid: &FitnessGrid, pop: &Population) -> Vec<f64> {
    pop.individuals
        .par_iter()
        .map(|bps| match derive_table(target, bps) {
            Ok(t) => grid.mse(&t),
            Err(_) => f64::INFINITY,
        })
        .collect()
}

fn argmin(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v < values[best] { i } else { best })
}

pub fn evolve<T: Nonlinearity + ?Sized>(target: &T, cfg: &GaConfig) -> Result<EvolveOutcome> {
    evolve_with(target, cfg, |_, _| {})
}

/// Runs the search, calling `observe(generation, population)` after every
/// selection step.
pub fn evolve_with<T, F>(target: &T, cfg: &GaConfig, mut observe: F) -> Result<EvolveOutcome>
where
    T: Nonlinearity + ?Sized,
    F: FnMut(usize, &Population),
{
    cfg.validate()?;
    let range = target.search_range();
    if (cfg.n_breakpoints as f64 + 1.0) * DEFAULT_MIN_GAP > range.width() {
        return Err(Error::config(
            "ga.n_breakpoints",
            format!("{} breakpoints do not fit in the search range", cfg.n_breakpoints),
        ));
    }
    let sigma = cfg.sigma_for(range);
    let grid = FitnessGrid::new(target, DEFAULT_STEP);
    let mut rng = GaRng::seed_from_u64(cfg.seed);
    let mut pop = init_population(cfg, range, &mut rng);
    let n = cfg.population_size;
    let mut history = Vec::with_capacity(cfg.iterations);

    for _ in 0..cfg.iterations {
        for i in 0..n {
            let rand_c: f64 = rng.random();
            let rand_m: f64 = rng.random();
            if rand_c < cfg.cross_prob && n > 1 {
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                let (a, b) = crossover(&pop.individuals[i], &pop.individuals[j], range, &mut rng);
                pop.individuals[i] = a;
                pop.individuals[j] = b;
            }
            if rand_m < cfg.mutate_prob {
                let p = &pop.individuals[i];
                pop.individuals[i] = match cfg.mutation_kind {
                    MutationKind::Gaussian => gaussian_mutate(p, sigma, range, &mut rng),
                    MutationKind::Rounding => rounding_mutate(p, cfg, range, &mut rng),
                };
            }
        }
        let fitnesses = score(target, &grid, &pop);
        history.push(fitnesses[argmin(&fitnesses)]);
        pop = tournament_select(&pop, &fitnesses, &mut rng);
        observe(pop.generation, &pop);
    }

    let fitnesses = score(target, &grid, &pop);
    let best = argmin(&fitnesses);
    let float_table = derive_table(target, &pop.individuals[best])?;
    Ok(EvolveOutcome {
        table: float_table.round_params(cfg.fxp_frac_bits),
        best_fitness: fitnesses[best],
        float_table,
        history,
    })
}
