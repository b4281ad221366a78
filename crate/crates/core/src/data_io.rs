//! Reading and preparing macro panels.
//!
//! Input CSV layout: a header row of series names, an optional first column
//! of dates, and optionally a second header row of transformation codes
//! whose first cell starts with `transform` (as in FRED-MD files). Empty
//! cells, `NA` and `NaN` are missing. Codes may also come from a sidecar
//! CSV with rows `series,code`.
//!
//! Transformation codes: 1 level, 2 Δx, 3 Δ²x, 4 ln x, 5 Δ ln x,
//! 6 Δ² ln x, 7 Δ(x_t/x_{t-1} − 1).

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::Panel;

/// A raw table: `values[i][t]` is series `i` at period `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub dates: Option<Vec<String>>,
    pub values: Vec<Vec<Option<f64>>>,
    pub codes: Option<Vec<u8>>,
}

impl Table {
    pub fn n_series(&self) -> usize {
        self.values.len()
    }

    pub fn n_periods(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn is_missing(&self, i: usize, t: usize) -> bool {
        self.values[i][t].is_none()
    }

    pub fn from_panel(panel: &Panel<f64>, names: Option<Vec<String>>, dates: Option<Vec<String>>) -> Result<Self> {
        let x = panel.values();
        let names = names.unwrap_or_else(|| default_names(x.ncols()));
        if names.len() != x.ncols() {
            return Err(Error::invalid(format!("{} names for {} series", names.len(), x.ncols())));
        }
        if dates.as_ref().is_some_and(|d| d.len() != x.nrows()) {
            return Err(Error::invalid("date column length differs from the panel"));
        }
        Ok(Table {
            names,
            dates,
            values: (0..x.ncols()).map(|i| x.column(i).iter().map(|&v| Some(v)).collect()).collect(),
            codes: None,
        })
    }

    /// The table as a panel; fails if any cell is missing.
    pub fn to_panel(&self) -> Result<Panel<f64>> {
        let (n_t, n) = (self.n_periods(), self.n_series());
        let mut m = DMatrix::zeros(n_t, n);
        for (i, col) in self.values.iter().enumerate() {
            for (t, v) in col.iter().enumerate() {
                m[(t, i)] = v.ok_or_else(|| {
                    Error::invalid(format!("series {} is missing period {}", self.names[i], t + 1))
                })?;
            }
        }
        Panel::new(m)
    }

    /// Attaches codes from a `series → code` map.
    pub fn set_codes(&mut self, codes: &HashMap<String, u8>) -> Result<()> {
        let missing: Vec<&str> = self
            .names
            .iter()
            .filter(|n| !codes.contains_key(*n))
            .map(String::as_str)
            .collect();
        if !missing.is_empty() {
            return Err(Error::invalid(format!("no transformation code for {}", missing.join(", "))));
        }
        self.codes = Some(self.names.iter().map(|n| codes[n]).collect());
        Ok(())
    }
}

pub fn default_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

/// Whether the first column holds dates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DateColumn {
    /// Dates if the first header cell names a date column or the first
    /// data cell is not numeric.
    #[default]
    Auto,
    Present,
    Absent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    pub has_header: bool,
    pub date_column: DateColumn,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            has_header: true,
            date_column: DateColumn::Auto,
        }
    }
}

const DATE_HEADERS: [&str; 7] = ["date", "sasdate", "period", "quarter", "month", "t", "time"];

fn parse_cell(s: &str) -> std::result::Result<Option<f64>, String> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    s.parse::<f64>()
        .map_err(|_| format!("not a number: {s:?}"))
        .and_then(|v| if v.is_finite() { Ok(Some(v)) } else { Err(format!("not finite: {s:?}")) })
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        line,
        msg: e.to_string(),
    }
}

/// Reads a panel CSV from any reader.
pub fn read_table<R: std::io::Read>(reader: R, opts: LoadOptions) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        records.push((line, rec));
    }
    if records.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "empty file".into(),
        });
    }
    let width = records[0].1.len();
    let header = if opts.has_header {
        Some(records.remove(0))
    } else {
        None
    };
    let has_dates = match opts.date_column {
        DateColumn::Present => true,
        DateColumn::Absent => false,
        DateColumn::Auto => {
            let by_name = header
                .as_ref()
                .is_some_and(|(_, h)| DATE_HEADERS.contains(&h.get(0).unwrap_or("").to_ascii_lowercase().as_str()));
            let by_value = records
                .iter()
                .find(|(_, r)| !r.get(0).unwrap_or("").to_ascii_lowercase().starts_with("transform"))
                .is_some_and(|(_, r)| parse_cell(r.get(0).unwrap_or("")).is_err());
            by_name || by_value
        }
    };
    let skip = usize::from(has_dates);
    if width <= skip {
        return Err(Error::Parse {
            line: 1,
            msg: "no data columns".into(),
        });
    }
    let n = width - skip;
    let names = match &header {
        Some((_, h)) => h.iter().skip(skip).map(str::to_string).collect(),
        None => default_names(n),
    };
    let mut codes = None;
    if let Some((line, first)) = records.first() {
        let lead = first.get(0).unwrap_or("").to_ascii_lowercase();
        if lead.starts_with("transform") {
            let line = *line;
            let row = records.remove(0).1;
            if row.len() != width {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {width} fields, found {}", row.len()),
                });
            }
            let start = if has_dates { 1 } else { 1.max(skip) };
            let parsed = row
                .iter()
                .skip(start)
                .map(|c| parse_code(c).map_err(|msg| Error::Parse { line, msg }))
                .collect::<Result<Vec<u8>>>()?;
            if parsed.len() != n {
                return Err(Error::Parse {
                    line,
                    msg: "the transform row needs a leading label cell".into(),
                });
            }
            codes = Some(parsed);
        }
    }
    let mut values = vec![Vec::with_capacity(records.len()); n];
    let mut dates = has_dates.then(Vec::new);
    for (line, rec) in &records {
        if rec.len() != width {
            return Err(Error::Parse {
                line: *line,
                msg: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        if let Some(d) = dates.as_mut() {
            d.push(rec.get(0).unwrap_or("").to_string());
        }
        for (i, cell) in rec.iter().skip(skip).enumerate() {
            let v = parse_cell(cell).map_err(|msg| Error::Parse {
                line: *line,
                msg: format!("column {}: {msg}", i + skip + 1),
            })?;
            values[i].push(v);
        }
    }
    if records.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "no data rows".into(),
        });
    }
    Ok(Table {
        names,
        dates,
        values,
        codes,
    })
}

fn parse_code(s: &str) -> std::result::Result<u8, String> {
    let s = s.trim();
    // codes are sometimes written as floats
    let v: f64 = s.parse().map_err(|_| format!("bad transformation code {s:?}"))?;
    if v.fract() == 0.0 && (1.0..=7.0).contains(&v) {
        Ok(v as u8)
    } else {
        Err(format!("transformation code must be 1..7, got {s:?}"))
    }
}

/// Loads a panel CSV.
pub fn load_panel(path: &Path, opts: LoadOptions) -> Result<Table> {
    let file = std::fs::File::open(path)?;
    read_table(std::io::BufReader::new(file), opts)
}

/// Reads a sidecar `series,code` file (header optional).
pub fn load_codes(path: &Path) -> Result<HashMap<String, u8>> {
    let file = std::fs::File::open(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file);
    let mut out = HashMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 2 {
            return Err(Error::Parse {
                line,
                msg: "expected series,code".into(),
            });
        }
        match parse_code(&rec[1]) {
            Ok(c) => {
                out.insert(rec[0].to_string(), c);
            }
            Err(_) if k == 0 => continue,
            Err(msg) => return Err(Error::Parse { line, msg }),
        }
    }
    Ok(out)
}

/// Writes a table as CSV. Numbers use the shortest representation that
/// reads back to the same `f64`; missing cells are empty.
pub fn write_table<W: std::io::Write>(table: &Table, out: W) -> Result<()> {
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = Vec::with_capacity(table.n_series() + 1);
    if table.dates.is_some() {
        header.push("date".into());
    }
    header.extend(table.names.iter().cloned());
    w.write_record(&header).map_err(io)?;
    for t in 0..table.n_periods() {
        let mut row = Vec::with_capacity(header.len());
        if let Some(d) = &table.dates {
            row.push(d[t].clone());
        }
        for col in &table.values {
            row.push(col[t].map_or(String::new(), |v| format!("{v:?}")));
        }
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_table(table: &Table, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_table(table, std::io::BufWriter::new(file))
}

/// Writes a matrix as CSV with the given header.
pub fn write_matrix<W: std::io::Write>(header: &[String], m: &DMatrix<f64>, out: W) -> Result<()> {
    if header.len() != m.ncols() {
        return Err(Error::invalid("header width differs from the matrix"));
    }
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(io)?;
    for t in 0..m.nrows() {
        w.write_record(m.row(t).iter().map(|v| format!("{v:?}"))).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

fn diff(x: &[Option<f64>]) -> Vec<Option<f64>> {
    (0..x.len())
        .map(|t| match (t.checked_sub(1).and_then(|s| x[s]), x[t]) {
            (Some(a), Some(b)) => Some(b - a),
            _ => None,
        })
        .collect()
}

/// Applies one transformation code to a series. Logs of non-positive
/// values become missing and are reported in `warnings`.
pub fn transform_series(x: &[Option<f64>], code: u8, name: &str, warnings: &mut Vec<String>) -> Result<Vec<Option<f64>>> {
    let mut log = || -> Vec<Option<f64>> {
        x.iter()
            .enumerate()
            .map(|(t, v)| match v {
                Some(v) if *v > 0.0 => Some(v.ln()),
                Some(v) => {
                    warnings.push(format!("{name}: log of non-positive value {v} at period {}", t + 1));
                    None
                }
                None => None,
            })
            .collect()
    };
    Ok(match code {
        1 => x.to_vec(),
        2 => diff(x),
        3 => diff(&diff(x)),
        4 => log(),
        5 => diff(&log()),
        6 => diff(&diff(&log())),
        7 => {
            let growth: Vec<Option<f64>> = (0..x.len())
                .map(|t| match (t.checked_sub(1).and_then(|s| x[s]), x[t]) {
                    (Some(a), Some(b)) if a != 0.0 => Some(b / a - 1.0),
                    _ => None,
                })
                .collect();
            diff(&growth)
        }
        c => return Err(Error::invalid(format!("{name}: transformation code must be 1..7, got {c}"))),
    })
}

/// Transforms every series by its code. Returns the new table and the
/// warnings raised.
pub fn apply_transforms(table: &Table, codes: &[u8]) -> Result<(Table, Vec<String>)> {
    if codes.len() != table.n_series() {
        return Err(Error::invalid(format!(
            "{} codes for {} series",
            codes.len(),
            table.n_series()
        )));
    }
    let mut warnings = Vec::new();
    let values = table
        .values
        .iter()
        .zip(codes)
        .zip(&table.names)
        .map(|((x, &c), name)| transform_series(x, c, name, &mut warnings))
        .collect::<Result<Vec<_>>>()?;
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((
        Table {
            names: table.names.clone(),
            dates: table.dates.clone(),
            values,
            codes: None,
        },
        warnings,
    ))
}

/// Output of [`balance_and_standardize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub panel: Panel<f64>,
    /// Surviving series, in input order.
    pub names: Vec<String>,
    pub dates: Option<Vec<String>>,
    /// Per surviving series `(mean, std)`; std uses the `T − 1` denominator.
    pub scaling: Vec<(f64, f64)>,
    /// `(series, reason)` for every series dropped.
    pub dropped: Vec<(String, String)>,
}

impl Standardized {
    pub fn table(&self) -> Table {
        Table::from_panel(&self.panel, Some(self.names.clone()), self.dates.clone()).expect("consistent by construction")
    }
}

/// Keeps the series complete over periods `range` (default: all), demeans
/// them and scales to unit sample standard deviation. Incomplete and
/// constant series are dropped with a warning.
pub fn balance_and_standardize(table: &Table, range: Option<(usize, usize)>) -> Result<Standardized> {
    let (start, end) = range.unwrap_or((0, table.n_periods()));
    if start >= end || end > table.n_periods() {
        return Err(Error::invalid(format!(
            "period range {start}..{end} is outside 0..{}",
            table.n_periods()
        )));
    }
    let n_t = end - start;
    if n_t < 2 {
        return Err(Error::InsufficientSample("need at least two periods".into()));
    }
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (i, col) in table.values.iter().enumerate() {
        let name = &table.names[i];
        let window = &col[start..end];
        if window.iter().any(Option::is_none) {
            dropped.push((name.clone(), "missing values".to_string()));
            continue;
        }
        let x: Vec<f64> = window.iter().map(|v| v.unwrap_or(0.0)).collect();
        let mean = x.iter().sum::<f64>() / n_t as f64;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n_t - 1) as f64;
        let std = var.sqrt();
        if !(std > 0.0) || !std.is_finite() {
            dropped.push((name.clone(), "zero variance".to_string()));
            continue;
        }
        kept.push((i, mean, std, x));
    }
    for (name, why) in &dropped {
        log::warn!("dropping {name}: {why}");
    }
    if kept.is_empty() {
        return Err(Error::InsufficientSample("no series survive balancing".into()));
    }
    let m = DMatrix::from_fn(n_t, kept.len(), |t, k| {
        let (_, mean, std, x) = &kept[k];
        (x[t] - mean) / std
    });
    Ok(Standardized {
        panel: Panel::new(m)?,
        names: kept.iter().map(|(i, ..)| table.names[*i].clone()).collect(),
        dates: table.dates.as_ref().map(|d| d[start..end].to_vec()),
        scaling: kept.iter().map(|&(_, m, s, _)| (m, s)).collect(),
        dropped,
    })
}
