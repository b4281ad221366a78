use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Deserialize;
use switchfactor::evaluate::{table1_run, write_table1_csv, McFitSettings, Table1Cell, Table1Config};

use crate::config::{self, overlay};
use crate::Status;

/// Cartesian grid of cells.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    dgp: Vec<u8>,
    pattern: Vec<u8>,
    smoothed: Vec<bool>,
    /// `[N, T]` pairs.
    size: Vec<(usize, usize)>,
    rho: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl Grid {
    fn cells(&self) -> Vec<Table1Cell> {
        let or = |v: &Vec<f64>| if v.is_empty() { vec![0.0] } else { v.clone() };
        let smoothed = if self.smoothed.is_empty() { vec![true] } else { self.smoothed.clone() };
        let (rho, alpha, beta) = (or(&self.rho), or(&self.alpha), or(&self.beta));
        let mut out = Vec::new();
        for &dgp in &self.dgp {
            for &pattern in &self.pattern {
                for &sm in &smoothed {
                    for &(n, t) in &self.size {
                        for &r in &rho {
                            for &a in &alpha {
                                for &b in &beta {
                                    out.push(Table1Cell { dgp, pattern, smoothed: sm, n, t, rho: r, alpha: a, beta: b });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Table1Args {
    /// Output CSV
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    /// Replications per cell [default: 100]
    #[arg(long)]
    replications: Option<usize>,
    /// Base seed [default: $REGIME_FACTOR_SEED or 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Restarts per fit [default: 30 for pattern 1, 5 for patterns 2-3, 15 for pattern 4]
    #[arg(long)]
    trials: Option<usize>,
    /// Estimate σ² instead of holding it at 1
    #[arg(long)]
    estimate_sigma2: bool,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Grid DGPs, e.g. `1,3`
    #[arg(long, value_delimiter = ',')]
    #[serde(skip)]
    dgp: Vec<u8>,
    /// Grid patterns, e.g. `2,4`
    #[arg(long, value_delimiter = ',')]
    #[serde(skip)]
    pattern: Vec<u8>,
    /// Grid sizes as `NxT`, e.g. `100x300,200x300`
    #[arg(long, value_delimiter = ',')]
    #[serde(skip)]
    size: Vec<String>,
    /// Grid estimators: `smoothed`, `unsmoothed` or both
    #[arg(long, value_delimiter = ',')]
    #[serde(skip)]
    estimator: Vec<String>,
    #[arg(skip)]
    cells: Vec<Table1Cell>,
    #[arg(skip)]
    grid: Option<Grid>,
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let (n, t) = s.split_once('x').with_context(|| format!("size {s:?} is not NxT"))?;
    Ok((n.trim().parse()?, t.trim().parse()?))
}

pub fn run(mut a: Table1Args, cfg: Option<&Path>) -> Result<Status> {
    let mut file: Table1Args = config::section(cfg, "table1")?;
    overlay!(a, file; replications, seed, trials, tol, max_iter, grid);
    a.estimate_sigma2 |= file.estimate_sigma2;

    let mut cells = if a.dgp.is_empty() && a.pattern.is_empty() {
        let mut c = file.cells;
        if let Some(g) = &a.grid {
            c.extend(g.cells());
        }
        c
    } else {
        let smoothed = a
            .estimator
            .iter()
            .map(|e| match e.as_str() {
                "smoothed" => Ok(true),
                "unsmoothed" => Ok(false),
                other => bail!("unknown estimator {other:?}"),
            })
            .collect::<Result<Vec<_>>>()?;
        let size = if a.size.is_empty() {
            vec![(100, 300)]
        } else {
            a.size.iter().map(|s| parse_size(s)).collect::<Result<_>>()?
        };
        Grid {
            dgp: if a.dgp.is_empty() { vec![1] } else { a.dgp.clone() },
            pattern: if a.pattern.is_empty() { vec![2] } else { a.pattern.clone() },
            smoothed,
            size,
            ..Grid::default()
        }
        .cells()
    };
    if cells.is_empty() {
        bail!("no cells: give [[table1.cells]], [table1.grid] or --dgp/--pattern");
    }
    cells.dedup();

    let d = McFitSettings::default();
    let config = Table1Config {
        cells,
        replications: a.replications.unwrap_or(100),
        seed: config::resolve_seed(a.seed)?,
        fit: McFitSettings {
            sigma2: if a.estimate_sigma2 { None } else { d.sigma2 },
            tol: a.tol.unwrap_or(d.tol),
            max_iter: a.max_iter.unwrap_or(d.max_iter),
            n_trials: a.trials,
            ..d
        },
    };
    let rows = table1_run(&config)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        crate::io::ensure_dir(parent)?;
    }
    let file = std::fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_table1_csv(&rows, std::io::BufWriter::new(file))?;
    Ok(Status::Done)
}
