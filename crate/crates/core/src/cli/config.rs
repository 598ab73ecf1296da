//! Run configuration.
//!
//! A config file is a TOML tree carrying `schema_version`. Only the keys a
//! user wants to change need to be present: the file is merged over the
//! defaults of the selected operator and entry count.

use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::evalbench::{DEFAULT_EXPONENTS, SUBRANGE_SAMPLES};
use crate::evolve::{GaConfig, MutationKind};
use crate::intsim::DatapathConfig;
use crate::nonlin::{FunctionKind, NonLinSpec, SearchRange};
use crate::quant::{QuantSpec, RangeScalingPlan};

pub const SCHEMA_VERSION: u32 = 1;

/// Keys that may be absent from the defaults because they default to
/// nothing.
const OPTIONAL_KEYS: &[&str] = &["ga.gaussian_sigma", "quant.plan", "quant.export_exponent"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    /// Structured JSON carrying every table field and its provenance.
    Data,
    /// C header with integer arrays.
    Header,
    /// Hex memory-initialization file.
    Memh,
}

impl ExportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ExportFormat::Data => "table.json",
            ExportFormat::Header => "h",
            ExportFormat::Memh => "memh",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionSection {
    pub kind: FunctionKind,
    pub entries: usize,
    pub range: SearchRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantSection {
    pub bits: u32,
    pub signed: bool,
    /// Scale exponents swept by `eval`.
    pub exponents: Vec<i32>,
    /// Scale exponent of tables exported by `fit`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub export_exponent: Option<i32>,
    /// Folding plan for DIV/RSQRT.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<RangeScalingPlan>,
    pub subrange_samples: usize,
}

impl QuantSection {
    pub fn spec(&self) -> Result<QuantSpec> {
        QuantSpec::new(self.bits, self.signed)
            .map_err(|e| Error::config("quant.bits", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Exports `fit` writes for the best table.
    pub formats: Vec<ExportFormat>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            formats: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub function: FunctionSection,
    pub ga: GaConfig,
    pub quant: QuantSection,
    pub datapath: DatapathConfig,
    pub seeds: Vec<u64>,
    pub output: OutputSection,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub function: Option<FunctionKind>,
    pub entries: Option<usize>,
    pub seeds: Vec<u64>,
    pub mutation: Option<MutationKind>,
    pub exponents: Vec<i32>,
    pub out: Option<PathBuf>,
    pub formats: Vec<ExportFormat>,
    pub export_exponent: Option<i32>,
}

impl RunConfig {
    /// Defaults for an `entries`-entry table of `kind`.
    pub fn defaults(kind: FunctionKind, entries: usize) -> Self {
        let ga = GaConfig::for_function(kind, entries);
        Self {
            schema_version: SCHEMA_VERSION,
            function: FunctionSection {
                kind,
                entries,
                range: kind.default_range(),
            },
            datapath: DatapathConfig::int8(ga.fxp_frac_bits),
            ga,
            quant: QuantSection {
                bits: 8,
                signed: true,
                exponents: DEFAULT_EXPONENTS.to_vec(),
                export_exponent: None,
                plan: RangeScalingPlan::preset_for(kind),
                subrange_samples: SUBRANGE_SAMPLES,
            },
            seeds: vec![0],
            output: OutputSection::default(),
        }
    }

    /// Defaults plus command-line overrides, no file.
    pub fn from_overrides(ov: &Overrides) -> Result<Self> {
        let kind = ov
            .function
            .ok_or_else(|| Error::config("function.kind", "no function given (use --function or a config file)"))?;
        let mut cfg = Self::defaults(kind, ov.entries.unwrap_or(8));
        cfg.apply(ov);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str, ov: &Overrides) -> Result<Self> {
        let user: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("<file>", e.message().to_string()))?;
        match user.get("schema_version") {
            None => return Err(Error::config("schema_version", "missing")),
            Some(Value::Integer(v)) if *v == SCHEMA_VERSION as i64 => {}
            Some(v) => {
                return Err(Error::config(
                    "schema_version",
                    format!("unsupported version {v} (this build reads {SCHEMA_VERSION})"),
                ))
            }
        }
        let section = user.get("function").and_then(Value::as_table);
        let kind = match (ov.function, section.and_then(|t| t.get("kind"))) {
            (Some(k), _) => k,
            (None, Some(Value::String(s))) => s.parse()?,
            (None, Some(_)) => return Err(Error::config("function.kind", "must be a string")),
            (None, None) => return Err(Error::config("function.kind", "missing")),
        };
        let entries = match (ov.entries, section.and_then(|t| t.get("entries"))) {
            (Some(n), _) => n,
            (None, Some(Value::Integer(n))) if *n > 1 => *n as usize,
            (None, Some(_)) => return Err(Error::config("function.entries", "must be an integer above 1")),
            (None, None) => 8,
        };

        let base = Value::try_from(Self::defaults(kind, entries))
            .map_err(|e| Error::config("<defaults>", e.to_string()))?;
        let Value::Table(mut merged) = base else {
            unreachable!("a struct serializes to a table")
        };
        check_known(&user, &merged, "")?;
        merge(&mut merged, user);
        // the kind and entry count were resolved above; keep them
        if let Some(Value::Table(f)) = merged.get_mut("function") {
            f.insert("kind".into(), Value::String(kind.name().into()));
            f.insert("entries".into(), Value::Integer(entries as i64));
        }

        let mut cfg = Self {
            schema_version: SCHEMA_VERSION,
            function: section_of(&merged, "function")?,
            ga: section_of(&merged, "ga")?,
            quant: section_of(&merged, "quant")?,
            datapath: section_of(&merged, "datapath")?,
            seeds: section_of(&merged, "seeds")?,
            output: section_of(&merged, "output")?,
        };
        cfg.apply(ov);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, ov: &Overrides) {
        if !ov.seeds.is_empty() {
            self.seeds = ov.seeds.clone();
        }
        if let Some(m) = ov.mutation {
            self.ga.mutation_kind = m;
        }
        if !ov.exponents.is_empty() {
            self.quant.exponents = ov.exponents.clone();
        }
        if let Some(dir) = &ov.out {
            self.output.dir = dir.clone();
        }
        if !ov.formats.is_empty() {
            self.output.formats = ov.formats.clone();
        }
        if ov.export_exponent.is_some() {
            self.quant.export_exponent = ov.export_exponent;
        }
        if let Some(&s) = self.seeds.first() {
            self.ga.seed = s;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = &self.function;
        if !(f.entries == 8 || f.entries == 16) {
            return Err(Error::config(
                "function.entries",
                format!("{} entries requested; supported sizes are 8 and 16", f.entries),
            ));
        }
        self.spec()?;
        if self.ga.n_breakpoints + 1 != f.entries {
            return Err(Error::config(
                "ga.n_breakpoints",
                format!("{} breakpoints cannot make {} entries", self.ga.n_breakpoints, f.entries),
            ));
        }
        self.ga.validate()?;
        self.quant.spec()?;
        if self.quant.exponents.is_empty() {
            return Err(Error::config("quant.exponents", "at least one exponent is required"));
        }
        if self.quant.subrange_samples == 0 {
            return Err(Error::config("quant.subrange_samples", "must be positive"));
        }
        self.datapath.validate()?;
        if self.datapath.lambda != self.ga.fxp_frac_bits {
            return Err(Error::config(
                "datapath.lambda",
                format!(
                    "{} differs from ga.fxp_frac_bits = {}",
                    self.datapath.lambda, self.ga.fxp_frac_bits
                ),
            ));
        }
        if self.datapath.input_bits != self.quant.bits {
            return Err(Error::config(
                "datapath.input_bits",
                format!("{} differs from quant.bits = {}", self.datapath.input_bits, self.quant.bits),
            ));
        }
        if let Some(e) = self.quant.exponents.iter().find(|e| -**e > self.datapath.max_shift as i32) {
            return Err(Error::config(
                "quant.exponents",
                format!("exponent {e} needs a left shift beyond datapath.max_shift"),
            ));
        }
        if f.kind.is_scale_carrying() {
            if self.quant.plan.is_some() {
                return Err(Error::config("quant.plan", format!("{} takes no folding plan", f.kind)));
            }
        } else {
            let plan = self
                .quant
                .plan
                .as_ref()
                .ok_or_else(|| Error::config("quant.plan", format!("{} needs a folding plan", f.kind)))?;
            plan.validate()?;
            if plan.kind != f.kind || plan.inner != f.range {
                return Err(Error::config(
                    "quant.plan",
                    "plan operator and inner range must match the function section",
                ));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if f.kind.is_scale_carrying()
            && self.quant.export_exponent.is_none()
            && !self.output.formats.is_empty()
        {
            return Err(Error::config(
                "quant.export_exponent",
                "exporting a scale-carrying table needs a scale exponent",
            ));
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<NonLinSpec> {
        NonLinSpec::new(self.function.kind, self.function.range)
            .map_err(|e| Error::config("function.range", e.to_string()))
    }

    /// The configuration of the single-seed run for `seed`.
    pub fn for_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seeds = vec![seed];
        c.ga.seed = seed;
        c
    }

    /// SHA-256 of the canonical JSON form, ignoring where output goes.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputSection::default();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

fn section_of<T: DeserializeOwned>(t: &Table, key: &str) -> Result<T> {
    let v = t
        .get(key)
        .cloned()
        .ok_or_else(|| Error::config(key, "missing"))?;
    v.try_into().map_err(|e: toml::de::Error| Error::config(key, e.message().to_string()))
}

fn check_known(user: &Table, base: &Table, prefix: &str) -> Result<()> {
    for (k, v) in user {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        if OPTIONAL_KEYS.contains(&path.as_str()) {
            continue;
        }
        match (base.get(k), v) {
            (None, _) => return Err(Error::config(path, "unknown key")),
            (Some(Value::Table(b)), Value::Table(u)) => check_known(u, b, &path)?,
            (Some(Value::Table(_)), _) => return Err(Error::config(path, "expected a table")),
            _ => {}
        }
    }
    Ok(())
}

fn merge(base: &mut Table, user: Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(u)) => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(kind: FunctionKind) -> Overrides {
        Overrides {
            function: Some(kind),
            ..Default::default()
        }
    }

    fn field(e: Error) -> String {
        match e {
            Error::Config { field, .. } => field,
            other => panic!("not a config error: {other}"),
        }
    }

    #[test]
    fn per_function_defaults() {
        let exp = RunConfig::defaults(FunctionKind::Exp, 8);
        assert_eq!((exp.function.range.lo, exp.function.range.hi), (-8.0, 0.0));
        assert_eq!(exp.ga.rm_prob, 0.05);
        assert_eq!(exp.ga.rm_range, (2, 6));
        assert_eq!(RunConfig::defaults(FunctionKind::Exp, 16).ga.rm_range, (0, 6));
        assert_eq!(RunConfig::defaults(FunctionKind::Hswish, 16).ga.rm_range, (2, 6));
        let div = RunConfig::defaults(FunctionKind::Div, 8);
        assert_eq!(div.ga.rm_prob, 0.0);
        assert_eq!(div.ga.mutation_kind, MutationKind::Gaussian);
        assert!(div.quant.plan.is_some());
        let g = RunConfig::defaults(FunctionKind::Gelu, 8);
        assert_eq!(
            (g.ga.n_breakpoints, g.ga.population_size, g.ga.iterations, g.ga.fxp_frac_bits),
            (7, 50, 500, 5)
        );
        assert_eq!((g.ga.cross_prob, g.ga.mutate_prob), (0.7, 0.2));
        for k in FunctionKind::ALL {
            for n in [8, 16] {
                RunConfig::defaults(k, n).validate().unwrap();
            }
        }
    }

    #[test]
    fn partial_file_merges_over_defaults() {
        let text = r#"
schema_version = 1
seeds = [3, 4]

[function]
kind = "exp"
entries = 16

[ga]
iterations = 20
"#;
        let c = RunConfig::from_toml_str(text, &Overrides::default()).unwrap();
        assert_eq!(c.function.kind, FunctionKind::Exp);
        assert_eq!(c.ga.n_breakpoints, 15);
        assert_eq!(c.ga.iterations, 20);
        assert_eq!(c.ga.rm_range, (0, 6));
        assert_eq!(c.seeds, vec![3, 4]);
        assert_eq!(c.ga.seed, 3);
    }

    #[test]
    fn round_trips_through_toml() {
        for k in FunctionKind::ALL {
            let c = RunConfig::defaults(k, 16);
            let back = RunConfig::from_toml_str(&c.to_toml(), &Overrides::default()).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn diagnostics_name_the_field() {
        let cases = [
            ("schema_version = 1\n[function]\nkind = \"gelu\"\n[ga]\nrm_prob = 0.5\n", "ga.rm_prob"),
            ("schema_version = 1\n[function]\nkind = \"gelu\"\n[ga]\nbogus = 1\n", "ga.bogus"),
            ("schema_version = 1\n[function]\nkind = \"gelu\"\nentries = 12\n", "function.entries"),
            ("schema_version = 1\n[function]\nkind = \"sigmoid\"\n", "function"),
            ("[function]\nkind = \"gelu\"\n", "schema_version"),
            ("schema_version = 2\n[function]\nkind = \"gelu\"\n", "schema_version"),
            ("schema_version = 1\n[function]\nkind = \"div\"\nrange = { lo = -1.0, hi = 4.0 }\n", "function.range"),
            ("schema_version = 1\n[function]\nkind = \"gelu\"\n[datapath]\nlambda = 6\n", "datapath.lambda"),
            ("schema_version = 1\n[function]\nkind = \"gelu\"\n[ga]\ncross_prob = \"high\"\n", "ga"),
            ("schema_version = 1\nseeds = []\n[function]\nkind = \"gelu\"\n", "seeds"),
        ];
        for (text, want) in cases {
            let err = RunConfig::from_toml_str(text, &Overrides::default()).unwrap_err();
            assert_eq!(field(err), want, "{text}");
        }
    }

    #[test]
    fn overrides_win() {
        let text = "schema_version = 1\nseeds = [1]\n[function]\nkind = \"gelu\"\n";
        let o = Overrides {
            function: Some(FunctionKind::Hswish),
            entries: Some(16),
            seeds: vec![7, 8],
            mutation: Some(MutationKind::Gaussian),
            ..Default::default()
        };
        let c = RunConfig::from_toml_str(text, &o).unwrap();
        assert_eq!(c.function.kind, FunctionKind::Hswish);
        assert_eq!(c.ga.n_breakpoints, 15);
        assert_eq!(c.seeds, vec![7, 8]);
        assert_eq!(c.ga.mutation_kind, MutationKind::Gaussian);
    }

    #[test]
    fn hash_ignores_output_location_only() {
        let a = RunConfig::from_overrides(&ov(FunctionKind::Gelu)).unwrap();
        let mut b = a.clone();
        b.output.dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        assert_ne!(a.hash(), a.for_seed(1).hash());
        b.ga.iterations = 499;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn export_of_scaled_table_needs_exponent() {
        let o = Overrides {
            formats: vec![ExportFormat::Header],
            ..ov(FunctionKind::Gelu)
        };
        assert_eq!(field(RunConfig::from_overrides(&o).unwrap_err()), "quant.export_exponent");
        let o = Overrides {
            formats: vec![ExportFormat::Header],
            ..ov(FunctionKind::Div)
        };
        assert!(RunConfig::from_overrides(&o).is_ok());
    }

    #[test]
    fn inline_plan_is_checked() {
        let text = r#"
schema_version = 1
[function]
kind = "div"
[quant.plan]
kind = "div"
inner = { lo = 0.5, hi = 4.0 }
sub_ranges = [
  { lo = 4.0, hi = 64.0, scale = -3 },
  { lo = 64.0, scale = -6 },
]
"#;
        assert_eq!(field(RunConfig::from_toml_str(text, &Overrides::default()).unwrap_err()), "plan");
        let ok = text.replace("hi = 64.0, scale = -3", "hi = 32.0, scale = -3").replace("lo = 64.0", "lo = 32.0");
        let c = RunConfig::from_toml_str(&ok, &Overrides::default()).unwrap();
        assert_eq!(c.quant.plan.unwrap().sub_ranges.len(), 2);
    }
}
