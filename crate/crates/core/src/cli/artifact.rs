//! On-disk artifacts: fitted tables, quantized table exports and logs.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::CliError;
use crate::error::Result;
use crate::evolve::{EvolveOutcome, MutationKind};
use crate::nonlin::{FunctionKind, NonLinSpec, SearchRange};
use crate::pwl::{BreakpointSet, PwlTable};
use crate::quant::{from_fxp, to_fxp, QPwlTable, QuantWarning, QuantizedTable};

pub const ARTIFACT_VERSION: u32 = 1;

pub fn tool_version() -> String {
    format!("lutfit {}", env!("CARGO_PKG_VERSION"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Fit,
    Table,
}

/// A fitted real-valued table: breakpoints plus fixed-point slopes and
/// intercepts, with the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub artifact: ArtifactKind,
    pub schema_version: u32,
    pub tool: String,
    pub config_hash: String,
    pub seed: u64,
    pub function: FunctionKind,
    pub range: SearchRange,
    pub entries: usize,
    pub lambda: u32,
    pub mutation: MutationKind,
    pub breakpoints: Vec<f64>,
    pub slopes_fxp: Vec<i64>,
    pub intercepts_fxp: Vec<i64>,
    /// Fitness of the unrounded table on the training grid.
    pub best_fitness: f64,
    pub config: RunConfig,
}

impl FitArtifact {
    /// `config` must be the single-seed configuration of the run.
    pub fn new(config: &RunConfig, outcome: &EvolveOutcome) -> Self {
        let lambda = config.ga.fxp_frac_bits;
        let t = &outcome.table;
        Self {
            artifact: ArtifactKind::Fit,
            schema_version: ARTIFACT_VERSION,
            tool: tool_version(),
            config_hash: config.hash(),
            seed: config.ga.seed,
            function: config.function.kind,
            range: config.function.range,
            entries: t.entries(),
            lambda,
            mutation: config.ga.mutation_kind,
            breakpoints: t.breakpoints().points().to_vec(),
            slopes_fxp: t.slopes().iter().map(|&k| to_fxp(k, lambda)).collect(),
            intercepts_fxp: t.intercepts().iter().map(|&b| to_fxp(b, lambda)).collect(),
            best_fitness: outcome.best_fitness,
            config: config.clone(),
        }
    }

    pub fn spec(&self) -> Result<NonLinSpec> {
        NonLinSpec::new(self.function, self.range)
    }

    pub fn table(&self) -> Result<PwlTable> {
        let bps = BreakpointSet::new(self.breakpoints.clone(), self.range)?;
        let fx = |v: &[i64]| v.iter().map(|&r| from_fxp(r, self.lambda)).collect();
        PwlTable::from_parts(fx(&self.slopes_fxp), fx(&self.intercepts_fxp), bps, self.range)
    }
}

/// A quantized table as handed to hardware.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableExport {
    pub artifact: ArtifactKind,
    pub schema_version: u32,
    pub tool: String,
    pub config_hash: String,
    pub seed: u64,
    pub function: FunctionKind,
    /// Entry count of the fitted table before any breakpoint collapse.
    pub entries: usize,
    pub source_entries: Vec<usize>,
    pub warnings: Vec<QuantWarning>,
    pub table: QPwlTable,
}

impl TableExport {
    pub fn new(fit: &FitArtifact, q: QuantizedTable) -> Self {
        Self {
            artifact: ArtifactKind::Table,
            schema_version: ARTIFACT_VERSION,
            tool: tool_version(),
            config_hash: fit.config_hash.clone(),
            seed: fit.seed,
            function: fit.function,
            entries: fit.entries,
            source_entries: q.source_entries,
            warnings: q.warnings,
            table: q.table,
        }
    }
}

/// Either artifact kind, as found on disk.
#[derive(Debug, Clone)]
pub enum Artifact {
    Fit(Box<FitArtifact>),
    Table(Box<TableExport>),
}

#[derive(Deserialize)]
struct Probe {
    artifact: ArtifactKind,
    schema_version: u32,
}

pub fn load_artifact(path: &Path) -> Result<Artifact, CliError> {
    let text = read_text(path)?;
    let probe: Probe = parse_json(path, &text)?;
    if probe.schema_version != ARTIFACT_VERSION {
        return Err(CliError::Parse {
            path: path.to_owned(),
            reason: format!("unsupported artifact version {}", probe.schema_version),
        });
    }
    Ok(match probe.artifact {
        ArtifactKind::Fit => {
            let fit: FitArtifact = parse_json(path, &text)?;
            fit.table()?;
            Artifact::Fit(Box::new(fit))
        }
        ArtifactKind::Table => {
            let t: TableExport = parse_json(path, &text)?;
            t.table.validate()?;
            Artifact::Table(Box::new(t))
        }
    })
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Parse {
        path: path.to_owned(),
        reason: e.to_string(),
    })
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    s
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let io = |source| CliError::Io {
        path: path.to_owned(),
        source,
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_owned(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io)?;
    tmp.write_all(contents).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// `seed,generation,best_mse` rows for every run.
pub fn fit_log_csv(runs: &[(u64, Vec<f64>)]) -> String {
    let mut out = String::from("seed,generation,best_mse\n");
    for (seed, history) in runs {
        for (g, mse) in history.iter().enumerate() {
            out.push_str(&format!("{seed},{},{mse:e}\n", g + 1));
        }
    }
    out
}
