//! Small CSV/JSON helpers shared by the subcommands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Shortest representation that reads back to the same value; very small
/// and very large magnitudes use exponent notation.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_csv<I>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Writes `m` with a leading column of row labels.
pub fn write_labeled_matrix(path: &Path, label: &str, rows: &[String], cols: &[String], m: &DMatrix<f64>) -> Result<()> {
    let mut header = vec![label.to_string()];
    header.extend(cols.iter().cloned());
    write_csv(
        path,
        &header,
        (0..m.nrows()).map(|i| {
            let mut r = vec![rows[i].clone()];
            r.extend(m.row(i).iter().map(|&v| num(v)));
            r
        }),
    )
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

pub fn read_json(path: &Path) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// A CSV file read as strings.
pub struct Sheet {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Sheet {
    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)
            .with_context(|| format!("opening {}", path.display()))?;
        let header = r.headers()?.iter().map(str::to_string).collect::<Vec<_>>();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.with_context(|| format!("reading {}", path.display()))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Sheet { header, rows })
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Column `c` as strings.
    pub fn strings(&self, c: usize) -> Vec<String> {
        self.rows.iter().map(|r| r[c].clone()).collect()
    }

    /// Column `c` as numbers; empty cells are `None`.
    pub fn optional(&self, c: usize) -> Result<Vec<Option<f64>>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let s = r[c].as_str();
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse::<f64>()
                    .map(Some)
                    .with_context(|| format!("row {}, column {:?}: not a number: {s:?}", i + 2, self.header[c]))
            })
            .collect()
    }

    pub fn numbers(&self, c: usize) -> Result<Vec<f64>> {
        self.optional(c)?
            .into_iter()
            .enumerate()
            .map(|(i, v)| v.with_context(|| format!("row {}, column {:?} is empty", i + 2, self.header[c])))
            .collect()
    }

    /// Columns `first..` as a matrix.
    pub fn matrix(&self, first: usize) -> Result<DMatrix<f64>> {
        let cols = self.header.len().saturating_sub(first);
        if cols == 0 {
            bail!("no numeric columns");
        }
        let mut m = DMatrix::zeros(self.rows.len(), cols);
        for c in 0..cols {
            for (t, v) in self.numbers(first + c)?.into_iter().enumerate() {
                m[(t, c)] = v;
            }
        }
        Ok(m)
    }
}

/// `prefix1`, `prefix2`, ... up to `n`.
pub fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}
