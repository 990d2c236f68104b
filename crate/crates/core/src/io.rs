//! Text formats for spectra, heatmaps, stability masks and run manifests.
//!
//! Numbers are written with 17 significant digits so every file reads
//! back to the same f64 values. Lines starting with `#` are headers.

use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::SystemParams;
use crate::spectra::{FrequencyGrid, Normalization, Quantity, Spectrum};
use crate::stability::{CellState, StabilityMap};
use crate::sweep::{AxisKind, SweepAxis, SweepResult};
use crate::units::TWO_PI;

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_num(s: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("line {line}: `{}` is not a number", s.trim())))
}

fn quantity_from_label(s: &str) -> Option<Quantity> {
    [Quantity::Sqq, Quantity::SYdet].into_iter().find(|q| q.label() == s)
}

fn normalization_from_label(s: &str) -> Option<Normalization> {
    [Normalization::SnlHalf, Normalization::Absolute]
        .into_iter()
        .find(|n| n.label() == s)
}

/// Writes `# quantity, normalization, n_points`, a column line, then
/// `freq_hz,value` rows. Values are two-sided densities per rad/s;
/// multiply by 2π for per-Hz densities.
pub fn write_spectrum<W: Write>(mut w: W, spec: &Spectrum) -> Result<()> {
    writeln!(
        w,
        "# {}, {}, {}",
        spec.quantity.label(),
        spec.normalization.label(),
        spec.values.len()
    )?;
    writeln!(w, "# freq_hz,value_per_rad_per_s")?;
    for (omega, v) in spec.grid.points.iter().zip(&spec.values) {
        writeln!(w, "{},{}", num(omega / TWO_PI), num(*v))?;
    }
    Ok(())
}

pub fn read_spectrum<R: BufRead>(r: R) -> Result<Spectrum> {
    let mut header: Option<(Quantity, Normalization, usize)> = None;
    let mut points = Vec::new();
    let mut values = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(rest) = t.strip_prefix('#') {
            if header.is_none() {
                let f: Vec<&str> = rest.split(',').map(str::trim).collect();
                if f.len() != 3 {
                    return Err(Error::Parse(format!(
                        "line {n}: expected `# quantity, normalization, n_points`"
                    )));
                }
                let q =
                    quantity_from_label(f[0]).ok_or_else(|| Error::Parse(format!("unknown quantity `{}`", f[0])))?;
                let norm = normalization_from_label(f[1])
                    .ok_or_else(|| Error::Parse(format!("unknown normalization `{}`", f[1])))?;
                let count = f[2]
                    .parse::<usize>()
                    .map_err(|_| Error::Parse(format!("line {n}: bad point count `{}`", f[2])))?;
                header = Some((q, norm, count));
            }
            continue;
        }
        if header.is_none() {
            return Err(Error::Parse("missing spectrum header".into()));
        }
        let mut cols = t.split(',');
        let (Some(f), Some(v), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(Error::Parse(format!("line {n}: expected two columns")));
        };
        points.push(parse_num(f, n)? * TWO_PI);
        values.push(parse_num(v, n)?);
    }
    let (quantity, normalization, count) = header.ok_or_else(|| Error::Parse("empty spectrum file".into()))?;
    if count != values.len() {
        return Err(Error::Parse(format!(
            "header declares {count} points, found {}",
            values.len()
        )));
    }
    Ok(Spectrum {
        grid: FrequencyGrid::from_points(points)?,
        values,
        normalization,
        quantity,
    })
}

fn write_axis<W: Write>(w: &mut W, name: &str, axis: &SweepAxis) -> Result<()> {
    write!(w, "# {name}: {}", axis.kind.label())?;
    for v in &axis.values {
        write!(w, ",{}", num(*v))?;
    }
    writeln!(w)?;
    Ok(())
}

fn read_axis(line: &str, name: &str, n: usize) -> Result<SweepAxis> {
    let rest = line
        .trim()
        .strip_prefix('#')
        .and_then(|s| s.trim().strip_prefix(name))
        .and_then(|s| s.strip_prefix(':'))
        .ok_or_else(|| Error::Parse(format!("line {n}: expected `# {name}: label,values...`")))?;
    let mut f = rest.split(',');
    let label = f.next().unwrap_or("").trim();
    let kind = AxisKind::from_label(label).ok_or_else(|| Error::Parse(format!("unknown axis `{label}`")))?;
    let values = f.map(|s| parse_num(s, n)).collect::<Result<Vec<f64>>>()?;
    SweepAxis::from_values(kind, values)
}

/// A matrix over two axes as read back from a heatmap or mask file.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFile<T> {
    pub axis1: SweepAxis,
    pub axis2: SweepAxis,
    /// Rows follow axis1, columns axis2.
    pub cells: Vec<Vec<T>>,
}

fn write_matrix<W: Write, T>(
    mut w: W,
    axis1: &SweepAxis,
    axis2: &SweepAxis,
    cells: &[Vec<T>],
    fmt: impl Fn(&T) -> String,
) -> Result<()> {
    write_axis(&mut w, "axis1", axis1)?;
    write_axis(&mut w, "axis2", axis2)?;
    for row in cells {
        let line: Vec<String> = row.iter().map(&fmt).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

fn read_matrix<R: BufRead, T>(r: R, parse: impl Fn(&str, usize) -> Result<T>) -> Result<GridFile<T>> {
    let mut lines = r.lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, l)) => Ok((i + 1, l?)),
            None => Err(Error::Parse(format!("missing {what}"))),
        }
    };
    let (n1, l1) = next("axis1 header")?;
    let axis1 = read_axis(&l1, "axis1", n1)?;
    let (n2, l2) = next("axis2 header")?;
    let axis2 = read_axis(&l2, "axis2", n2)?;
    let mut cells = Vec::with_capacity(axis1.values.len());
    for (i, l) in lines {
        let l = l?;
        if l.trim().is_empty() {
            continue;
        }
        let row = l.split(',').map(|s| parse(s, i + 1)).collect::<Result<Vec<T>>>()?;
        if row.len() != axis2.values.len() {
            return Err(Error::Parse(format!(
                "line {}: {} columns, axis2 has {}",
                i + 1,
                row.len(),
                axis2.values.len()
            )));
        }
        cells.push(row);
    }
    if cells.len() != axis1.values.len() {
        return Err(Error::Parse(format!(
            "{} rows, axis1 has {}",
            cells.len(),
            axis1.values.len()
        )));
    }
    Ok(GridFile { axis1, axis2, cells })
}

/// n̄ heatmap; the +∞ sentinel of non-stable cells is an empty field.
pub fn write_heatmap<W: Write>(w: W, res: &SweepResult) -> Result<()> {
    write_matrix(w, &res.axis1, &res.axis2, &res.n_bar, |v| {
        if v.is_finite() {
            num(*v)
        } else {
            String::new()
        }
    })
}

pub fn read_heatmap<R: BufRead>(r: R) -> Result<GridFile<f64>> {
    read_matrix(r, |s, n| {
        if s.trim().is_empty() {
            Ok(f64::INFINITY)
        } else {
            parse_num(s, n)
        }
    })
}

/// Cell codes: 0 stable, 1 unstable, 2 undetermined, 3 marginal.
pub fn write_mask<W: Write>(w: W, axis1: &SweepAxis, axis2: &SweepAxis, cells: &[Vec<CellState>]) -> Result<()> {
    write_matrix(w, axis1, axis2, cells, |c| (*c as u8).to_string())
}

pub fn write_stability_map<W: Write>(w: W, map: &StabilityMap) -> Result<()> {
    write_mask(w, &map.axis1, &map.axis2, &map.cells)
}

pub fn read_mask<R: BufRead>(r: R) -> Result<GridFile<CellState>> {
    read_matrix(r, |s, n| match s.trim() {
        "0" => Ok(CellState::Stable),
        "1" => Ok(CellState::Unstable),
        "2" => Ok(CellState::Undetermined),
        "3" => Ok(CellState::Marginal),
        other => Err(Error::Parse(format!("line {n}: bad mask code `{other}`"))),
    })
}

/// Column table: a `# name,name,...` header then one row per line.
/// Non-finite values are written as empty fields.
pub fn write_table<W: Write>(mut w: W, columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    writeln!(w, "# {}", columns.join(","))?;
    for r in rows {
        if r.len() != columns.len() {
            return Err(Error::invalid("table", "row length differs from the column count"));
        }
        let f: Vec<String> = r
            .iter()
            .map(|v| if v.is_finite() { num(*v) } else { String::new() })
            .collect();
        writeln!(w, "{}", f.join(","))?;
    }
    Ok(())
}

/// Reads a column table; empty fields come back as NaN.
pub fn read_table<R: BufRead>(r: R) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut columns: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(h) = t.strip_prefix('#') {
            if columns.is_none() {
                columns = Some(h.split(',').map(|s| s.trim().to_string()).collect());
            }
            continue;
        }
        let cols = columns
            .as_ref()
            .ok_or_else(|| Error::Parse("missing table header".into()))?;
        let row = t
            .split(',')
            .map(|s| {
                if s.trim().is_empty() {
                    Ok(f64::NAN)
                } else {
                    parse_num(s, i + 1)
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != cols.len() {
            return Err(Error::Parse(format!("line {}: expected {} columns", i + 1, cols.len())));
        }
        rows.push(row);
    }
    Ok((columns.ok_or_else(|| Error::Parse("empty table".into()))?, rows))
}

/// Record of one run: the fully resolved parameters and what was written.
/// Only the timestamps differ between repeated identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool_version: String,
    pub command: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    /// False when the run stopped early or some cells failed.
    pub complete: bool,
    pub params_hash: String,
    pub outputs: Vec<String>,
    pub notes: Vec<String>,
    pub params: SystemParams,
    /// Command-specific settings as resolved from the config.
    pub settings: toml::Table,
}

impl Manifest {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }
}

pub fn create_file(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn open_file(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn save_spectrum(path: &Path, spec: &Spectrum) -> Result<()> {
    let mut w = create_file(path)?;
    write_spectrum(&mut w, spec)?;
    w.flush()?;
    Ok(())
}

pub fn load_spectrum(path: &Path) -> Result<Spectrum> {
    read_spectrum(open_file(path)?)
}
