//! Plot data: CSV series plus a static SVG rendering of each.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use switchfactor::detect::moving_average;
use switchfactor::evaluate::Moments;
use switchfactor::simulate::load_labels;

use crate::io::{ensure_dir, num, write_csv, Sheet};
use crate::Status;

#[derive(Args, Debug)]
pub struct PlotArgs {
    #[command(subcommand)]
    kind: PlotKind,
}

#[derive(Subcommand, Debug)]
enum PlotKind {
    /// Regime probability path with the true regime shaded
    Probs {
        /// probs.csv from `fit`
        probs: PathBuf,
        /// Column to plot [default: p2]
        #[arg(long)]
        column: Option<String>,
        /// True labels (`t,state` or one 1-based label per line)
        #[arg(long)]
        states: Option<PathBuf>,
        /// Also plot the trailing moving average over this window
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Histogram of one column, against the standard normal density
    Hist {
        input: PathBuf,
        /// Column to bin [default: the last]
        #[arg(long)]
        column: Option<String>,
        #[arg(long, default_value_t = 30)]
        bins: usize,
        /// Demean and scale the sample first
        #[arg(long)]
        standardize: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

const W: f64 = 800.0;
const H: f64 = 300.0;
const PAD: f64 = 40.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        let span = if self.x1 > self.x0 { self.x1 - self.x0 } else { 1.0 };
        PAD + (v - self.x0) / span * (W - 2.0 * PAD)
    }

    fn y(&self, v: f64) -> f64 {
        let span = if self.y1 > self.y0 { self.y1 - self.y0 } else { 1.0 };
        H - PAD - (v - self.y0) / span * (H - 2.0 * PAD)
    }

    fn open(&self, title: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<title>{title}</title>"#);
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        s
    }

    fn axes(&self, s: &mut String) {
        let (l, r, b, t) = (PAD, W - PAD, H - PAD, PAD);
        let _ = writeln!(s, r#"<path d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="black"/>"#);
        for (v, anchor, x, y) in [
            (self.y0, "end", l - 4.0, b),
            (self.y1, "end", l - 4.0, t + 4.0),
            (self.x0, "start", l, b + 14.0),
            (self.x1, "end", r, b + 14.0),
        ] {
            let _ = writeln!(s, r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}">{}</text>"#, short(v));
        }
    }

    fn polyline(&self, s: &mut String, pts: impl Iterator<Item = (f64, f64)>, color: &str) {
        let mut d = String::new();
        for (x, y) in pts {
            let _ = write!(d, "{:.2},{:.2} ", self.x(x), self.y(y));
        }
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.2"/>"#, d.trim_end());
    }
}

fn short(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

pub fn run(a: PlotArgs) -> Result<Status> {
    match a.kind {
        PlotKind::Probs { probs, column, states, d, out } => prob_path(&probs, column, states.as_deref(), d, &out),
        PlotKind::Hist { input, column, bins, standardize, out } => histogram(&input, column, bins, standardize, &out),
    }
}

fn prob_path(path: &Path, column: Option<String>, states: Option<&Path>, d: Option<usize>, out: &Path) -> Result<Status> {
    let sheet = Sheet::read(path)?;
    let name = column.unwrap_or_else(|| "p2".into());
    let c = sheet.index(&name).with_context(|| format!("{} has no column {name:?}", path.display()))?;
    let p = sheet.numbers(c)?;
    let z = states.map(load_labels).transpose()?;
    if let Some(z) = &z {
        if z.len() != p.len() {
            bail!("{} labels for {} periods", z.len(), p.len());
        }
    }
    let ma = d.map(|d| moving_average(&p, d));
    ensure_dir(out)?;

    let mut header = vec!["t".to_string(), "prob".into(), "true_state".into()];
    if ma.is_some() {
        header.push("moving_average".into());
    }
    let rows = (0..p.len()).map(|t| {
        let mut r = vec![(t + 1).to_string(), num(p[t]), z.as_ref().map_or(String::new(), |z| (z[t] + 1).to_string())];
        if let Some(m) = &ma {
            r.push(num(m[t]));
        }
        r
    });
    write_csv(&out.join("prob_path.csv"), &header, rows)?;

    let frame = Frame { x0: 1.0, x1: p.len() as f64, y0: 0.0, y1: 1.0 };
    let mut s = frame.open(&format!("{name} by period"));
    if let Some(z) = &z {
        // shade spans in regime 2 and above
        let mut t = 0;
        while t < z.len() {
            if z[t] == 0 {
                t += 1;
                continue;
            }
            let start = t;
            while t < z.len() && z[t] != 0 {
                t += 1;
            }
            let (x0, x1) = (frame.x(start as f64 + 0.5), frame.x(t as f64 + 0.5));
            let _ = writeln!(
                s,
                r##"<rect x="{x0:.2}" y="{PAD}" width="{:.2}" height="{}" fill="#d9d9d9"/>"##,
                x1 - x0,
                H - 2.0 * PAD
            );
        }
    }
    frame.axes(&mut s);
    frame.polyline(&mut s, p.iter().enumerate().map(|(t, &v)| ((t + 1) as f64, v)), "#1f4e99");
    if let Some(m) = &ma {
        frame.polyline(&mut s, m.iter().enumerate().map(|(t, &v)| ((t + 1) as f64, v)), "#c0392b");
    }
    s.push_str("</svg>\n");
    std::fs::write(out.join("prob_path.svg"), s).context("writing prob_path.svg")?;
    Ok(Status::Done)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn histogram(path: &Path, column: Option<String>, bins: usize, standardize: bool, out: &Path) -> Result<Status> {
    if bins == 0 {
        bail!("--bins must be positive");
    }
    let sheet = Sheet::read(path)?;
    let c = match &column {
        Some(name) => sheet.index(name).with_context(|| format!("{} has no column {name:?}", path.display()))?,
        None => sheet.header.len().checked_sub(1).context("empty header")?,
    };
    let mut x: Vec<f64> = sheet.optional(c)?.into_iter().flatten().collect();
    if x.len() < 2 {
        bail!("need at least two values to bin");
    }
    if standardize {
        let m = Moments::of(&x);
        if !(m.std > 0.0) {
            bail!("sample has zero variance");
        }
        x.iter_mut().for_each(|v| *v = (*v - m.mean) / m.std);
    }
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for v in &x {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let n = x.len() as f64;
    let edges: Vec<(f64, f64)> = (0..bins).map(|k| (lo + k as f64 * width, lo + (k + 1) as f64 * width)).collect();
    let density: Vec<f64> = counts.iter().map(|&k| k as f64 / (n * width)).collect();
    ensure_dir(out)?;
    write_csv(
        &out.join("hist.csv"),
        &["lower", "upper", "count", "density", "normal_pdf"].map(String::from),
        (0..bins).map(|k| {
            let (a, b) = edges[k];
            vec![num(a), num(b), counts[k].to_string(), num(density[k]), num(normal_pdf(0.5 * (a + b)))]
        }),
    )?;

    let top = density.iter().copied().fold(normal_pdf(0.0), f64::max);
    let frame = Frame { x0: lo, x1: lo + bins as f64 * width, y0: 0.0, y1: top };
    let mut s = frame.open("histogram");
    for k in 0..bins {
        let (a, b) = edges[k];
        let (x0, x1) = (frame.x(a), frame.x(b));
        let y = frame.y(density[k]);
        let _ = writeln!(
            s,
            r##"<rect x="{x0:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="#9ecae1" stroke="white"/>"##,
            x1 - x0,
            frame.y(0.0) - y
        );
    }
    frame.axes(&mut s);
    let grid = (0..=200).map(|i| frame.x0 + (frame.x1 - frame.x0) * i as f64 / 200.0);
    frame.polyline(&mut s, grid.map(|v| (v, normal_pdf(v))), "#c0392b");
    s.push_str("</svg>\n");
    std::fs::write(out.join("hist.svg"), s).context("writing hist.svg")?;
    Ok(Status::Done)
}
