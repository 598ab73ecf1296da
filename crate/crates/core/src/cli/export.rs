//! Hardware-facing renderings of a quantized table.

use std::fmt::Write;

use super::artifact::TableExport;
use crate::error::{Error, Result};
use crate::quant::{BreakpointFormat, QPwlTable, QuantSpec};

/// Bit widths of the three packed fields of a memory line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemLayout {
    pub slope_bits: u32,
    pub intercept_bits: u32,
    pub breakpoint_bits: u32,
}

impl MemLayout {
    pub fn for_table(t: &QPwlTable) -> Self {
        Self {
            slope_bits: t.param_bits(),
            intercept_bits: t.param_bits(),
            breakpoint_bits: t.breakpoint_bits(),
        }
    }

    pub fn total_bits(&self) -> u32 {
        self.slope_bits + self.intercept_bits + self.breakpoint_bits
    }

    /// Hex digits per line: the packed word padded with zeros on the left
    /// to a whole number of nibbles.
    pub fn hex_digits(&self) -> usize {
        self.total_bits().div_ceil(4) as usize
    }

    fn check(&self) -> Result<()> {
        for (field, bits) in [
            ("layout.slope_bits", self.slope_bits),
            ("layout.intercept_bits", self.intercept_bits),
            ("layout.breakpoint_bits", self.breakpoint_bits),
        ] {
            if !(2..=32).contains(&bits) {
                return Err(Error::config(field, format!("{bits} is outside 2..=32")));
            }
        }
        Ok(())
    }
}

fn twos(v: i64, bits: u32, field: &str) -> Result<u128> {
    let qs = QuantSpec::new(bits, true)?;
    if qs.clip(v) != v {
        return Err(Error::config(field, format!("{v} does not fit in {bits} signed bits")));
    }
    Ok((v as u128) & ((1u128 << bits) - 1))
}

/// Raw breakpoint field of every entry: entry `i > 0` stores its lower
/// bound, entry 0 the most negative code.
fn lower_bounds(t: &QPwlTable, bits: u32) -> Vec<i64> {
    let min = -(1i64 << (bits - 1));
    std::iter::once(min).chain(t.breakpoints().iter().copied()).collect()
}

/// One packed line: `{slope, intercept, breakpoint}`, most significant
/// field first, two's complement.
pub fn pack_line(slope: i64, intercept: i64, breakpoint: i64, layout: MemLayout) -> Result<String> {
    layout.check()?;
    let s = twos(slope, layout.slope_bits, "layout.slope_bits")?;
    let i = twos(intercept, layout.intercept_bits, "layout.intercept_bits")?;
    let b = twos(breakpoint, layout.breakpoint_bits, "layout.breakpoint_bits")?;
    let word = (s << (layout.intercept_bits + layout.breakpoint_bits)) | (i << layout.breakpoint_bits) | b;
    Ok(format!("{word:0width$X}", width = layout.hex_digits()))
}

fn describe_breakpoints(t: &QPwlTable) -> String {
    match t.breakpoint_format() {
        BreakpointFormat::Integer { scale, quant } => format!(
            "breakpoints are {}-bit {} input codes at scale 2^{}",
            quant.bits,
            if quant.signed { "signed" } else { "unsigned" },
            scale.exponent
        ),
        BreakpointFormat::FixedPoint { bits } => format!(
            "breakpoints are {bits}-bit fixed point with {} fractional bits",
            t.lambda()
        ),
    }
}

fn provenance(e: &TableExport) -> String {
    format!(
        "{}: {}, {} entries ({} stored), seed {}, config sha256 {}",
        e.tool,
        e.function,
        e.entries,
        e.table.entries(),
        e.seed,
        e.config_hash
    )
}

pub fn memh(e: &TableExport, layout: MemLayout) -> Result<String> {
    let t = &e.table;
    let (sb, ib, bb) = (layout.slope_bits, layout.intercept_bits, layout.breakpoint_bits);
    let total = layout.total_bits();
    let mut out = String::new();
    let _ = writeln!(out, "// {}", provenance(e));
    let _ = writeln!(out, "// {}", describe_breakpoints(t));
    let _ = writeln!(
        out,
        "// one line per entry, entry 0 first; {total} bits per line, two's complement, most significant field first:"
    );
    let _ = writeln!(
        out,
        "//   [{}:{}] slope, {sb} bits, value * 2^{}",
        total - 1,
        ib + bb,
        t.lambda()
    );
    let _ = writeln!(
        out,
        "//   [{}:{}] intercept, {ib} bits, value * 2^{} (unshifted)",
        ib + bb - 1,
        bb,
        t.lambda()
    );
    let _ = writeln!(
        out,
        "//   [{}:0] lower breakpoint, {bb} bits (entry 0 holds the minimum code)",
        bb - 1
    );
    if layout.hex_digits() * 4 > total as usize {
        let _ = writeln!(out, "//   zero padded to {} hex digits", layout.hex_digits());
    }
    for ((k, b), p) in t.slopes().iter().zip(t.intercepts()).zip(lower_bounds(t, bb)) {
        out.push_str(&pack_line(*k, *b, p, layout)?);
        out.push('\n');
    }
    Ok(out)
}

fn c_type(bits: u32) -> &'static str {
    match bits {
        0..=8 => "int8_t",
        9..=16 => "int16_t",
        17..=32 => "int32_t",
        _ => "int64_t",
    }
}

fn c_list(v: &[i64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

pub fn c_header(e: &TableExport) -> String {
    let t = &e.table;
    let name = format!("{}_lut", e.function);
    let upper = name.to_ascii_uppercase();
    let guard = format!("LUTFIT_{}_{}_H", e.function.name().to_ascii_uppercase(), e.entries);
    let pt = c_type(t.param_bits());
    let bt = c_type(t.breakpoint_bits());
    let mut out = String::new();
    let _ = writeln!(out, "/* {}", provenance(e));
    let _ = writeln!(out, " * {}", describe_breakpoints(t));
    match t.scale() {
        Some(s) if s.exponent <= 0 => {
            let _ = writeln!(
                out,
                " * y = slopes[i] * q + (intercepts[i] << -{upper}_SCALE_EXP); y * 2^({upper}_SCALE_EXP - {upper}_LAMBDA) is the output"
            );
        }
        Some(_) => {
            let _ = writeln!(
                out,
                " * y = slopes[i] * q + round(intercepts[i] / 2^{upper}_SCALE_EXP); y * 2^({upper}_SCALE_EXP - {upper}_LAMBDA) is the output"
            );
        }
        None => {
            let _ = writeln!(
                out,
                " * y = slopes[i] * x + intercepts[i]; all values have {upper}_LAMBDA fractional bits"
            );
        }
    }
    let _ = writeln!(out, " */");
    let _ = writeln!(out, "#ifndef {guard}\n#define {guard}\n\n#include <stdint.h>\n");
    let _ = writeln!(out, "#define {upper}_ENTRIES {}", t.entries());
    let _ = writeln!(out, "#define {upper}_LAMBDA {}", t.lambda());
    match t.scale() {
        Some(s) => {
            let _ = writeln!(out, "#define {upper}_SCALE_EXP ({})", s.exponent);
        }
        None => {
            let _ = writeln!(out, "#define {upper}_BREAKPOINT_FRAC_BITS {}", t.lambda());
        }
    }
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "static const {pt} {name}_slopes[{upper}_ENTRIES] = {{ {} }};",
        c_list(t.slopes())
    );
    let _ = writeln!(
        out,
        "static const {pt} {name}_intercepts[{upper}_ENTRIES] = {{ {} }};",
        c_list(t.intercepts())
    );
    if !t.breakpoints().is_empty() {
        let _ = writeln!(
            out,
            "static const {bt} {name}_breakpoints[{upper}_ENTRIES - 1] = {{ {} }};",
            c_list(t.breakpoints())
        );
    }
    let _ = writeln!(out, "\n#endif /* {guard} */");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::artifact::{tool_version, ArtifactKind, ARTIFACT_VERSION};
    use crate::nonlin::FunctionKind;
    use crate::quant::PowTwoScale;

    fn export(t: QPwlTable) -> TableExport {
        TableExport {
            artifact: ArtifactKind::Table,
            schema_version: ARTIFACT_VERSION,
            tool: tool_version(),
            config_hash: "ab".repeat(32),
            seed: 0,
            function: FunctionKind::Gelu,
            entries: t.entries(),
            source_entries: (0..t.entries()).collect(),
            warnings: vec![],
            table: t,
        }
    }

    fn scaled(slopes: Vec<i64>, intercepts: Vec<i64>, bps: Vec<i64>, bits: u32) -> QPwlTable {
        QPwlTable::new(
            slopes,
            intercepts,
            bps,
            5,
            bits,
            BreakpointFormat::Integer {
                scale: PowTwoScale::new(-3),
                quant: QuantSpec::int8(),
            },
        )
        .unwrap()
    }

    const WIDE: MemLayout = MemLayout {
        slope_bits: 8,
        intercept_bits: 16,
        breakpoint_bits: 8,
    };

    #[test]
    fn hand_packed_line() {
        // 0.25 * 32 = 8, 4.75 * 32 = 152 = 0x98, -5 = 0xFB
        assert_eq!(pack_line(8, 152, -5, WIDE).unwrap(), "080098FB");
    }

    #[test]
    fn minimum_codes_do_not_wrap() {
        assert_eq!(pack_line(-128, -32768, -128, WIDE).unwrap(), "80800080");
        assert_eq!(pack_line(-1, -1, -1, WIDE).unwrap(), "FFFFFFFF");
        assert!(pack_line(128, 0, 0, WIDE).is_err());
        let odd = MemLayout {
            slope_bits: 5,
            intercept_bits: 5,
            breakpoint_bits: 4,
        };
        // 14 bits padded to 4 digits
        assert_eq!(pack_line(-1, 0, 1, odd).unwrap(), "3E01");
    }

    #[test]
    fn memh_file_layout() {
        let e = export(scaled(vec![0, 8], vec![3, 152], vec![-5], 16));
        let text = memh(&e, WIDE).unwrap();
        let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with("//")).collect();
        assert_eq!(lines, ["00000380", "080098FB"]);
        assert!(text.starts_with("// lutfit"));
        assert!(text.contains("[31:24] slope"));
        assert!(text.contains("[23:8] intercept"));
        assert!(text.contains("[7:0] lower breakpoint"));
    }

    #[test]
    fn default_layout_follows_table() {
        let t = scaled(vec![1, 2, 3], vec![4, 5, 6], vec![-1, 7], 8);
        let l = MemLayout::for_table(&t);
        assert_eq!((l.slope_bits, l.intercept_bits, l.breakpoint_bits), (8, 8, 8));
        let text = memh(&export(t), l).unwrap();
        let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with("//")).collect();
        assert_eq!(lines, ["010480", "0205FF", "030607"]);
    }

    #[test]
    fn header_contents() {
        let h = c_header(&export(scaled(vec![0, 8], vec![3, 152], vec![-5], 16)));
        assert!(h.contains("#define GELU_LUT_LAMBDA 5"));
        assert!(h.contains("#define GELU_LUT_SCALE_EXP (-3)"));
        assert!(h.contains("static const int16_t gelu_lut_slopes[GELU_LUT_ENTRIES] = { 0, 8 };"));
        assert!(h.contains("static const int16_t gelu_lut_intercepts[GELU_LUT_ENTRIES] = { 3, 152 };"));
        assert!(h.contains("static const int8_t gelu_lut_breakpoints[GELU_LUT_ENTRIES - 1] = { -5 };"));
        assert!(h.contains("#ifndef LUTFIT_GELU_2_H"));
        assert!(h.trim_end().ends_with("#endif /* LUTFIT_GELU_2_H */"));
    }
}
