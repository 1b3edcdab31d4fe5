//! Surface CSV in long format.
//!
//! ```text
//! # fwdvar-surface format=1
//! # n=4
//! # maturities=0,0.5,1
//! # <key>=<value>            (free-form metadata, e.g. seed, config digest)
//! t_index,T_index,t,T,I
//! 0,1,0,0.5,0.500000000000
//! ...
//! ```
//!
//! Only cells with `j ≥ 1` and `t_i < T_j` are written; every other cell is
//! zero by convention. Readers accept explicit rows for those cells too, in
//! which case the stored value is kept and left to [`validate_surface`]. Numbers
//! are written with the shortest representation that round-trips exactly, padded
//! to at least 12 significant digits.
//!
//! [`validate_surface`]: crate::surface::validate_surface

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::surface::{CumulativeVarianceSurface, MaturityGrid, TimeGrid};

pub const SURFACE_HEADER: &str = "t_index,T_index,t,T,I";
const MAGIC: &str = "fwdvar-surface format=1";
const MIN_SIGNIFICANT_DIGITS: usize = 12;

/// Decimal rendering that round-trips bit-exactly and carries ≥ 12 significant digits.
pub fn format_decimal(x: f64) -> String {
    let mut s = format!("{x}");
    if x == 0.0 || !x.is_finite() {
        return s;
    }
    let significant = s
        .trim_start_matches('-')
        .trim_start_matches(['0', '.'])
        .chars()
        .filter(|c| c.is_ascii_digit())
        .count();
    if significant < MIN_SIGNIFICANT_DIGITS {
        if !s.contains('.') {
            s.push('.');
        }
        s.extend(std::iter::repeat_n('0', MIN_SIGNIFICANT_DIGITS - significant));
    }
    s
}

/// Parsed header metadata of a surface file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurfaceMetadata {
    pub entries: Vec<(String, String)>,
}

impl SurfaceMetadata {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

pub fn write_surface(
    s: &CumulativeVarianceSurface,
    path: impl AsRef<Path>,
    metadata: &[(String, String)],
) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    write_surface_to(s, &mut w, metadata)?;
    w.flush()?;
    Ok(())
}

pub fn write_surface_to<W: Write>(
    s: &CumulativeVarianceSurface,
    w: &mut W,
    metadata: &[(String, String)],
) -> Result<()> {
    writeln!(w, "# {MAGIC}")?;
    writeln!(w, "# n={}", s.n())?;
    let mats: Vec<String> = s.maturities().iter().map(|m| format!("{m}")).collect();
    writeln!(w, "# maturities={}", mats.join(","))?;
    for (k, v) in metadata {
        writeln!(w, "# {k}={v}")?;
    }
    writeln!(w, "{SURFACE_HEADER}")?;
    let tg = s.time_grid();
    for i in 0..=s.n() {
        let t = tg.time(i);
        let row = s.row(i);
        for j in s.first_alive(i)..=s.d() {
            writeln!(
                w,
                "{i},{j},{},{},{}",
                format_decimal(t),
                format_decimal(s.maturities()[j]),
                format_decimal(row[j])
            )?;
        }
    }
    Ok(())
}

pub fn read_surface(path: impl AsRef<Path>) -> Result<CumulativeVarianceSurface> {
    read_surface_with_metadata(path).map(|(s, _)| s)
}

pub fn read_surface_with_metadata(
    path: impl AsRef<Path>,
) -> Result<(CumulativeVarianceSurface, SurfaceMetadata)> {
    let path_str = path.as_ref().display().to_string();
    let file = File::open(path.as_ref())?;
    read_surface_from(BufReader::new(file), &path_str)
}

pub fn read_surface_from<R: BufRead>(
    reader: R,
    source: &str,
) -> Result<(CumulativeVarianceSurface, SurfaceMetadata)> {
    let perr = |line: usize, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };
    let mut meta = SurfaceMetadata::default();
    let mut n: Option<usize> = None;
    let mut maturities: Option<Vec<f64>> = None;
    let mut surface: Option<CumulativeVarianceSurface> = None;
    let mut seen: Vec<bool> = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if surface.is_some() {
                continue;
            }
            let comment = comment.trim();
            if comment == MAGIC {
                continue;
            }
            let Some((k, v)) = comment.split_once('=') else {
                continue;
            };
            let (k, v) = (k.trim(), v.trim());
            match k {
                "n" => {
                    n = Some(
                        v.parse()
                            .map_err(|_| perr(lineno, format!("invalid n `{v}`")))?,
                    )
                }
                "maturities" => {
                    let parsed: std::result::Result<Vec<f64>, _> =
                        v.split(',').map(|x| x.trim().parse::<f64>()).collect();
                    maturities = Some(
                        parsed.map_err(|_| perr(lineno, "invalid maturities list".into()))?,
                    );
                }
                _ => meta.entries.push((k.to_string(), v.to_string())),
            }
            continue;
        }
        let Some(s) = surface.as_mut() else {
            if line != SURFACE_HEADER {
                return Err(perr(
                    lineno,
                    format!("expected header `{SURFACE_HEADER}`, found `{line}`"),
                ));
            }
            let n = n.ok_or_else(|| perr(lineno, "missing `# n=` header line".into()))?;
            let mats = maturities
                .take()
                .ok_or_else(|| perr(lineno, "missing `# maturities=` header line".into()))?;
            let tg = TimeGrid::new(n).map_err(|e| perr(lineno, e.to_string()))?;
            let mg = MaturityGrid::new(mats).map_err(|e| perr(lineno, e.to_string()))?;
            seen = vec![false; (n + 1) * (mg.d() + 1)];
            surface = Some(CumulativeVarianceSurface::zeros(tg, mg));
            continue;
        };

        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(perr(
                lineno,
                format!("expected 5 fields, found {}", fields.len()),
            ));
        }
        let i: usize = fields[0]
            .parse()
            .map_err(|_| perr(lineno, format!("invalid t_index `{}`", fields[0])))?;
        let j: usize = fields[1]
            .parse()
            .map_err(|_| perr(lineno, format!("invalid T_index `{}`", fields[1])))?;
        let parse_f = |k: usize, name: &str| {
            fields[k]
                .parse::<f64>()
                .map_err(|_| perr(lineno, format!("invalid {name} `{}`", fields[k])))
        };
        let (t, big_t, value) = (parse_f(2, "t")?, parse_f(3, "T")?, parse_f(4, "I")?);
        if i > s.n() || j > s.d() {
            return Err(perr(
                lineno,
                format!("cell (i={i}, j={j}) outside the {}×{} grid", s.n(), s.d()),
            ));
        }
        let expected_t = s.time_grid().time(i);
        if (t - expected_t).abs() > 1e-9 {
            return Err(perr(
                lineno,
                format!("t={t} inconsistent with t_index {i} (expected {expected_t})"),
            ));
        }
        let expected_big_t = s.maturities()[j];
        if (big_t - expected_big_t).abs() > 1e-9 {
            return Err(perr(
                lineno,
                format!("T={big_t} inconsistent with T_index {j} (expected {expected_big_t})"),
            ));
        }
        let w = s.d() + 1;
        if std::mem::replace(&mut seen[i * w + j], true) {
            return Err(perr(lineno, format!("duplicate cell (i={i}, j={j})")));
        }
        s.row_mut(i)[j] = value;
    }

    let s = surface.ok_or_else(|| perr(0, "no surface header found".into()))?;
    let w = s.d() + 1;
    let mut missing = Vec::new();
    for i in 0..=s.n() {
        for j in s.first_alive(i)..=s.d() {
            if !seen[i * w + j] {
                missing.push(format!("(i={i}, j={j})"));
            }
        }
    }
    if !missing.is_empty() {
        let shown: Vec<_> = missing.iter().take(10).cloned().collect();
        let more = if missing.len() > 10 {
            format!(" and {} more", missing.len() - 10)
        } else {
            String::new()
        };
        return Err(Error::InvalidSurface(format!(
            "{source}: missing cells {}{more}",
            shown.join(", ")
        )));
    }
    Ok((s, meta))
}

/// Parses `key=value` metadata lines from any of our CSV outputs.
pub fn header_metadata(text: &str) -> HashMap<String, String> {
    text.lines()
        .filter_map(|l| l.strip_prefix('#'))
        .filter_map(|l| l.trim().split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}
