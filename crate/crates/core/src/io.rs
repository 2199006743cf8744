//! Text and image serialization.
//!
//! CSV files start with `# key = value` metadata lines, then a column header,
//! then one record per line. Floats are written in the shortest form that
//! parses back to the same `f64`, so CSV round trips are bit-exact.
//!
//! PGM files are binary 16-bit (`P5`, maxval 65535, big-endian), linearly
//! scaled; `value = offset + scale * pixel` is recorded in a `.scale.txt`
//! sidecar next to the image.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::correlation::CorrelationMap;
use crate::error::{Error, Result};
use crate::field::{ComplexField, Grid, IntensityMap};

/// Shortest round-trip representation, switching to exponent form for very
/// large or small magnitudes.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("line {line}: cannot parse `{}` as a number", s.trim())))
}

/// Metadata and numeric records of a CSV file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            meta: Vec::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert!(self.columns.is_empty() || row.len() == self.columns.len());
        self.rows.push(row);
    }

    /// Build from equal-length columns.
    pub fn from_columns(names: &[&str], cols: &[&[f64]]) -> Self {
        let mut t = Table::new(names);
        let len = cols.first().map_or(0, |c| c.len());
        for i in 0..len {
            t.push(cols.iter().map(|c| c[i]).collect());
        }
        t
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.meta_value(key)
            .ok_or_else(|| Error::Parse(format!("missing metadata `{key}`")))?
            .parse()
            .map_err(|_| Error::Parse(format!("bad metadata `{key}`")))
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k} = {v}");
        }
        if !self.columns.is_empty() {
            out.push_str(&self.columns.join(","));
            out.push('\n');
        }
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut t = Table::default();
        let mut header_seen = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                let (k, v) = meta
                    .split_once('=')
                    .ok_or_else(|| Error::Parse(format!("line {}: metadata needs `key = value`", i + 1)))?;
                t.meta.push((k.trim().to_string(), v.trim().to_string()));
                continue;
            }
            if !header_seen {
                header_seen = true;
                if line.split(',').any(|c| c.trim().parse::<f64>().is_err()) {
                    t.columns = line.split(',').map(|c| c.trim().to_string()).collect();
                    continue;
                }
            }
            let row = line
                .split(',')
                .map(|c| parse_f64(c, i + 1))
                .collect::<Result<Vec<f64>>>()?;
            if !t.columns.is_empty() && row.len() != t.columns.len() {
                return Err(Error::Parse(format!(
                    "line {}: {} fields, expected {}",
                    i + 1,
                    row.len(),
                    t.columns.len()
                )));
            }
            t.rows.push(row);
        }
        Ok(t)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

fn grid_meta(t: Table, kind: &str, grid: &Grid) -> Table {
    t.with_meta("kind", kind)
        .with_meta("dims", grid.dims())
        .with_meta("n", grid.n())
        .with_meta("dx", fmt_f64(grid.dx()))
}

fn read_grid(t: &Table, kind: &str) -> Result<Grid> {
    match t.meta_value("kind") {
        Some(k) if k == kind => {}
        other => {
            return Err(Error::Parse(format!(
                "expected a `{kind}` file, found {}",
                other.unwrap_or("no kind")
            )))
        }
    }
    Grid::new(t.meta_parse("dims")?, t.meta_parse("n")?, t.meta_parse("dx")?)
}

fn coord_columns(grid: &Grid, idx: usize) -> Vec<f64> {
    let n = grid.n();
    match grid.dims() {
        1 => vec![grid.coord(idx)],
        _ => vec![grid.coord(idx % n), grid.coord(idx / n)],
    }
}

fn coord_names(grid: &Grid) -> Vec<&'static str> {
    match grid.dims() {
        1 => vec!["x"],
        _ => vec!["x", "y"],
    }
}

pub fn intensity_to_table(m: &IntensityMap) -> Table {
    let mut cols = coord_names(m.grid());
    cols.push("intensity");
    let mut t = grid_meta(Table::new(&cols), "intensity_map", m.grid());
    for (i, &v) in m.values().iter().enumerate() {
        let mut row = coord_columns(m.grid(), i);
        row.push(v);
        t.push(row);
    }
    t
}

pub fn intensity_from_table(t: &Table) -> Result<IntensityMap> {
    let grid = read_grid(t, "intensity_map")?;
    let values = t
        .column("intensity")
        .ok_or_else(|| Error::Parse("missing `intensity` column".into()))?;
    IntensityMap::new(grid, values)
}

pub fn field_to_table(f: &ComplexField) -> Table {
    let mut cols = coord_names(f.grid());
    cols.extend(["re", "im"]);
    let mut t = grid_meta(Table::new(&cols), "complex_field", f.grid())
        .with_meta("wavelength", fmt_f64(f.wavelength()));
    for (i, c) in f.samples().iter().enumerate() {
        let mut row = coord_columns(f.grid(), i);
        row.extend([c.re, c.im]);
        t.push(row);
    }
    t
}

pub fn field_from_table(t: &Table) -> Result<ComplexField> {
    let grid = read_grid(t, "complex_field")?;
    let wavelength: f64 = t.meta_parse("wavelength")?;
    let re = t.column("re").ok_or_else(|| Error::Parse("missing `re` column".into()))?;
    let im = t.column("im").ok_or_else(|| Error::Parse("missing `im` column".into()))?;
    let samples = re.iter().zip(&im).map(|(&a, &b)| Complex64::new(a, b)).collect();
    ComplexField::new(grid, samples, wavelength)
}

/// Full matrix: one CSV row per x1 sample, one column per x2 sample.
pub fn correlation_to_table(m: &CorrelationMap) -> Table {
    let mut t = Table::default()
        .with_meta("kind", "correlation_map")
        .with_meta("rows", m.rows())
        .with_meta("cols", m.cols())
        .with_meta("dx1", fmt_f64(m.x1_grid.dx()))
        .with_meta("dx2", fmt_f64(m.x2_grid.dx()))
        .with_meta("frames", m.frames_used);
    for row in m.g.chunks_exact(m.cols()) {
        t.push(row.to_vec());
    }
    t
}

pub fn correlation_from_table(t: &Table) -> Result<CorrelationMap> {
    if t.meta_value("kind") != Some("correlation_map") {
        return Err(Error::Parse("not a correlation_map file".into()));
    }
    let rows: usize = t.meta_parse("rows")?;
    let cols: usize = t.meta_parse("cols")?;
    let g1 = Grid::one_d(rows, t.meta_parse("dx1")?)?;
    let g2 = Grid::one_d(cols, t.meta_parse("dx2")?)?;
    let g: Vec<f64> = t.rows.iter().flatten().copied().collect();
    CorrelationMap::new(g, g1, g2, t.meta_parse("frames")?)
}

/// Sidecar path for a PGM image: `image.pgm` -> `image.pgm.scale.txt`.
pub fn scale_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".scale.txt");
    PathBuf::from(s)
}

/// Write a row-major `width x height` array as a 16-bit PGM plus scale sidecar.
pub fn write_pgm(path: &Path, values: &[f64], width: usize, height: usize) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::param("values", "length does not match image size"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("image"));
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = if hi > lo { (hi - lo) / 65535.0 } else { 1.0 };
    let mut bytes = format!("P5\n{width} {height}\n65535\n").into_bytes();
    bytes.reserve(2 * values.len());
    for &v in values {
        let p = ((v - lo) / scale).round().clamp(0.0, 65535.0) as u16;
        bytes.extend_from_slice(&p.to_be_bytes());
    }
    fs::write(path, bytes)?;
    fs::write(
        scale_sidecar(path),
        format!("offset = {}\nscale = {}\n", fmt_f64(lo), fmt_f64(scale)),
    )?;
    Ok(())
}

/// Read a 16-bit PGM and its sidecar back to physical values.
pub fn read_pgm(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let bytes = fs::read(path)?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "65535" {
        return Err(Error::Parse("expected a 16-bit binary PGM".into()));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse("bad PGM size".into()));
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let data = bytes
        .get(pos..pos + 2 * w * h)
        .ok_or_else(|| Error::Parse("truncated PGM data".into()))?;
    let side = Table::parse(&fs::read_to_string(scale_sidecar(path))?.lines().map(|l| format!("# {l}\n")).collect::<String>())?;
    let offset: f64 = side.meta_parse("offset")?;
    let scale: f64 = side.meta_parse("scale")?;
    let values = data
        .chunks_exact(2)
        .map(|b| offset + scale * u16::from_be_bytes([b[0], b[1]]) as f64)
        .collect();
    Ok((values, w, h))
}

pub fn write_intensity_pgm(path: &Path, m: &IntensityMap) -> Result<()> {
    let n = m.grid().n();
    let h = if m.grid().dims() == 1 { 1 } else { n };
    write_pgm(path, m.values(), n, h)
}

pub fn write_correlation_pgm(path: &Path, m: &CorrelationMap) -> Result<()> {
    write_pgm(path, &m.g, m.cols(), m.rows())
}
