//! Command-line front end: `fit`, `eval` and `export`.

pub mod artifact;
pub mod config;
pub mod export;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::error::Error;
use crate::evalbench::{sweep_scales, wide_range_mse, ScaleSweepReport};
use crate::evolve::{evolve, MutationKind};
use crate::intsim::DatapathConfig;
use crate::nonlin::FunctionKind;
use crate::quant::{fxp_quantize_table, quantize_table, PowTwoScale, QuantizedTable};
use artifact::{load_artifact, to_json, write_atomic, Artifact, FitArtifact, TableExport};
use config::{ExportFormat, Overrides, RunConfig};
use export::MemLayout;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Lib(#[from] Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{}: {reason}", path.display())]
    Parse { path: PathBuf, reason: String },

    #[error("table was fitted for {found}, but {expected} was requested")]
    FunctionMismatch {
        expected: FunctionKind,
        found: FunctionKind,
    },

    #[error("{0}")]
    Usage(String),
}

#[derive(Debug, Parser)]
#[command(name = "lutfit", version, about = "Quantization-aware piecewise-linear LUT fitting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit tables for every seed and keep the best one.
    Fit(FitArgs),
    /// Score a fitted table on the quantized input grid.
    Eval(EvalArgs),
    /// Quantize a fitted table and write it for hardware.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub function: Option<FunctionKind>,
    #[arg(long, value_parser = ["8", "16"])]
    pub entries: Option<String>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Seeds to run (repeat or separate with commas).
    #[arg(long = "seed", visible_alias = "seeds", value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long, value_parser = ["gaussian", "rm"])]
    pub mutation: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Exports to write for the best table.
    #[arg(long = "format", value_enum, value_delimiter = ',')]
    pub formats: Vec<ExportFormat>,
    /// Scale exponent of exported scale-carrying tables.
    #[arg(long, allow_hyphen_values = true)]
    pub scale_exp: Option<i32>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Fit artifact to score.
    #[arg(long)]
    pub table: PathBuf,
    /// Scale exponents to sweep (defaults to the configuration's).
    #[arg(long = "scale-exp", value_delimiter = ',', allow_hyphen_values = true)]
    pub exponents: Vec<i32>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Fit artifact or structured table export.
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long, value_enum)]
    pub format: ExportFormat,
    /// Scale exponent for scale-carrying operators.
    #[arg(long, allow_hyphen_values = true)]
    pub scale_exp: Option<i32>,
    /// Width of the intercept field in memory images.
    #[arg(long)]
    pub intercept_bits: Option<u32>,
    /// Output file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(a) => cmd_fit(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Export(a) => cmd_export(&a).map(|_| ()),
    }
}

fn overrides(common: &CommonArgs) -> Overrides {
    Overrides {
        function: common.function,
        entries: common.entries.as_deref().map(|s| s.parse().expect("validated by clap")),
        ..Default::default()
    }
}

fn load_config(path: Option<&Path>, ov: &Overrides) -> Result<RunConfig, CliError> {
    Ok(match path {
        Some(p) => RunConfig::from_toml_str(&artifact::read_text(p)?, ov)
            .map_err(|e| CliError::Parse {
                path: p.to_owned(),
                reason: e.to_string(),
            })?,
        None => RunConfig::from_overrides(ov)?,
    })
}

fn stem(kind: FunctionKind, entries: usize) -> String {
    format!("{kind}-{entries}")
}

/// Files written by `fit`.
#[derive(Debug, Clone)]
pub struct FitSummary {
    pub per_seed: Vec<PathBuf>,
    pub best: PathBuf,
    pub log: PathBuf,
    pub exports: Vec<PathBuf>,
    pub best_seed: u64,
}

pub fn cmd_fit(a: &FitArgs) -> Result<FitSummary, CliError> {
    let mut ov = overrides(&a.common);
    ov.seeds = a.seeds.clone();
    ov.mutation = a.mutation.as_deref().map(|m| m.parse()).transpose()?;
    ov.out = a.out.clone();
    ov.formats = a.formats.clone();
    ov.export_exponent = a.scale_exp;
    let cfg = load_config(a.common.config.as_deref(), &ov)?;
    fit(&cfg)
}

/// Runs every seed of `cfg` (in parallel) and writes the artifacts.
pub fn fit(cfg: &RunConfig) -> Result<FitSummary, CliError> {
    let spec = cfg.spec()?;
    let runs = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let c = cfg.for_seed(seed);
            let out = evolve(&spec, &c.ga)?;
            Ok((FitArtifact::new(&c, &out), out.history))
        })
        .collect::<Result<Vec<_>, Error>>()?;

    let dir = &cfg.output.dir;
    let name = stem(cfg.function.kind, cfg.function.entries);
    let mut per_seed = Vec::new();
    for (art, _) in &runs {
        let path = dir.join(format!("{name}-seed{}.json", art.seed));
        write_atomic(&path, to_json(art).as_bytes())?;
        per_seed.push(path);
    }
    let best = runs
        .iter()
        .map(|(a, _)| a)
        .reduce(|b, a| if a.best_fitness < b.best_fitness { a } else { b })
        .expect("at least one seed");
    let best_path = dir.join(format!("{name}-best.json"));
    write_atomic(&best_path, to_json(best).as_bytes())?;
    let histories: Vec<(u64, Vec<f64>)> = runs.iter().map(|(a, h)| (a.seed, h.clone())).collect();
    let log = dir.join("fit_log.csv");
    write_atomic(&log, artifact::fit_log_csv(&histories).as_bytes())?;

    let mut exports = Vec::new();
    for &format in &cfg.output.formats {
        let e = quantize_fit(best, cfg.quant.export_exponent)?;
        let path = dir.join(format!("{name}-best.{}", format.extension()));
        write_atomic(&path, render(&e, format, MemLayout::for_table(&e.table))?.as_bytes())?;
        exports.push(path);
    }
    log::info!("best seed {} with fitness {:e}", best.seed, best.best_fitness);
    Ok(FitSummary {
        per_seed,
        best: best_path,
        log,
        exports,
        best_seed: best.seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WideRangeReport {
    pub function: FunctionKind,
    pub entries: usize,
    pub method: MutationKind,
    pub subrange_samples: usize,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvalReport {
    Scaled(ScaleSweepReport),
    Wide(WideRangeReport),
}

pub fn cmd_eval(a: &EvalArgs) -> Result<(EvalReport, Vec<PathBuf>), CliError> {
    let fit = match load_artifact(&a.table)? {
        Artifact::Fit(f) => *f,
        Artifact::Table(_) => {
            return Err(CliError::Usage(
                "eval needs a fit artifact, not a quantized table export".into(),
            ))
        }
    };
    let requested = match &a.common.config {
        Some(_) => {
            let ov = Overrides {
                function: a.common.function,
                ..overrides(&a.common)
            };
            let c = load_config(a.common.config.as_deref(), &ov)?;
            Some((c.function.kind, Some(c)))
        }
        None => a.common.function.map(|k| (k, None)),
    };
    let mut cfg = fit.config.clone();
    if let Some((kind, c)) = requested {
        if kind != fit.function {
            return Err(CliError::FunctionMismatch {
                expected: kind,
                found: fit.function,
            });
        }
        if let Some(c) = c {
            cfg.quant = c.quant;
            cfg.datapath = c.datapath;
        }
    }
    if !a.exponents.is_empty() {
        cfg.quant.exponents = a.exponents.clone();
    }
    let out_dir = a.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let (report, csv, json) = evaluate(&fit, &cfg)?;
    let name = stem(fit.function, fit.entries);
    let csv_path = out_dir.join(format!("eval-{name}.csv"));
    let json_path = out_dir.join(format!("eval-{name}.json"));
    write_atomic(&csv_path, csv.as_bytes())?;
    write_atomic(&json_path, json.as_bytes())?;
    match &report {
        EvalReport::Scaled(r) => println!("{name}: average MSE {:e} over {} scales", r.average_mse, r.per_scale.len()),
        EvalReport::Wide(r) => println!("{name}: wide-range MSE {:e}", r.mse),
    }
    Ok((report, vec![csv_path, json_path]))
}

/// Scores `fit` under the quantization settings of `cfg`; returns the
/// report and its CSV and JSON renderings.
pub fn evaluate(fit: &FitArtifact, cfg: &RunConfig) -> Result<(EvalReport, String, String), CliError> {
    let spec = fit.spec()?;
    let table = fit.table()?;
    if fit.function.is_scale_carrying() {
        let dp = DatapathConfig {
            lambda: fit.lambda,
            ..cfg.datapath
        };
        dp.validate()?;
        let r = sweep_scales(&table, &spec, &cfg.quant.exponents, cfg.quant.spec()?, &dp)?
            .with_function(fit.function)
            .with_method(fit.mutation);
        let csv = r.to_csv();
        let json = to_json(&r);
        Ok((EvalReport::Scaled(r), csv, json))
    } else {
        let plan = cfg
            .quant
            .plan
            .as_ref()
            .ok_or_else(|| Error::config("quant.plan", "missing"))?;
        let mse = wide_range_mse(
            &table,
            &spec,
            plan,
            cfg.quant.subrange_samples,
            fit.lambda,
            cfg.datapath.param_bits,
        )?;
        let r = WideRangeReport {
            function: fit.function,
            entries: fit.entries,
            method: fit.mutation,
            subrange_samples: cfg.quant.subrange_samples,
            mse,
        };
        let csv = format!("metric,value\nwide_range_mse,{mse:e}\n");
        let json = to_json(&r);
        Ok((EvalReport::Wide(r), csv, json))
    }
}

/// Quantizes a fitted table the way the datapath stores it.
pub fn quantize_fit(fit: &FitArtifact, scale_exp: Option<i32>) -> Result<TableExport, CliError> {
    let table = fit.table()?;
    let cfg = &fit.config;
    let q: QuantizedTable = if fit.function.is_scale_carrying() {
        let e = scale_exp.ok_or_else(|| {
            CliError::Usage(format!("{} tables need --scale-exp to be quantized", fit.function))
        })?;
        quantize_table(
            &table,
            PowTwoScale::new(e),
            cfg.quant.spec()?,
            fit.lambda,
            cfg.datapath.param_bits,
        )?
    } else {
        fxp_quantize_table(&table, fit.lambda, cfg.datapath.param_bits)?
    };
    for w in &q.warnings {
        log::warn!("{w}");
    }
    Ok(TableExport::new(fit, q))
}

fn render(e: &TableExport, format: ExportFormat, layout: MemLayout) -> Result<String, CliError> {
    Ok(match format {
        ExportFormat::Data => to_json(e),
        ExportFormat::Header => export::c_header(e),
        ExportFormat::Memh => export::memh(e, layout)?,
    })
}

pub fn cmd_export(a: &ExportArgs) -> Result<PathBuf, CliError> {
    let e = match load_artifact(&a.table)? {
        Artifact::Fit(f) => quantize_fit(&f, a.scale_exp)?,
        Artifact::Table(t) => {
            let stored = t.table.scale().map(|s| s.exponent);
            if a.scale_exp.is_some() && a.scale_exp != stored {
                return Err(CliError::Usage(format!(
                    "table was quantized at scale exponent {stored:?}; refit or export from the fit artifact"
                )));
            }
            *t
        }
    };
    let mut layout = MemLayout::for_table(&e.table);
    if let Some(b) = a.intercept_bits {
        layout.intercept_bits = b;
    }
    let text = render(&e, a.format, layout)?;
    let path = a.out.clone().unwrap_or_else(|| {
        let suffix = e.table.scale().map(|s| format!("-e{}", s.exponent)).unwrap_or_default();
        PathBuf::from(format!(
            "{}{suffix}.{}",
            stem(e.function, e.entries),
            a.format.extension()
        ))
    });
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}
