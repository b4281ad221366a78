use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Deserialize;
use switchfactor::detect::{
    detect_turning_points, format_report, realtime_detect, reference_points, DetectorConfig, Phase, RealtimeConfig,
    TurningPoint,
};
use switchfactor::simulate::load_labels;
use switchfactor::{FitConfig, Sigma2Mode};

use crate::config::{self, overlay};
use crate::fit::{chain_from_stay, prepare_panel, resolve_dims, PanelArgs};
use crate::io::{ensure_dir, num, write_csv, Sheet};
use crate::Status;

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectArgs {
    /// probs.csv written by `fit`, or a panel CSV with --realtime
    #[serde(skip)]
    input: PathBuf,
    /// Output directory
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    /// Probability column to read [default: p2]
    #[arg(long)]
    column: Option<String>,
    /// Moving-average window [default: 0]
    #[arg(long)]
    d: Option<usize>,
    /// Threshold to enter regime 2 [default: 0.9, or 0.8 with --empirical]
    #[arg(long)]
    enter: Option<f64>,
    /// Threshold to leave regime 2 [default: 0.1, or 0.2 with --empirical]
    #[arg(long)]
    exit: Option<f64>,
    /// Use the 0.8/0.2 thresholds (implied by --realtime)
    #[arg(long)]
    empirical: bool,
    /// Regime at the start of the sample, 1 or 2 [default: 1]
    #[arg(long)]
    start_regime: Option<u8>,
    /// Reference labels (`t,state` or one 1-based label per line) for the lag table
    #[arg(long)]
    states: Option<PathBuf>,
    /// Reference turning points per report row [default: 6]
    #[arg(long)]
    report_columns: Option<usize>,

    /// Re-estimate on an expanding window and filter one period ahead
    #[arg(long)]
    realtime: bool,
    /// Factors per regime for --realtime, `r1,r2` or one value
    #[arg(long, value_delimiter = ',')]
    factors: Option<Vec<usize>>,
    /// First evaluated period, 0-based; the first window fits periods before it [default: 20·max r]
    #[arg(long)]
    warmup: Option<usize>,
    /// Re-estimate every this many periods [default: 1]
    #[arg(long)]
    stride: Option<usize>,
    /// Known 1-based labels for a prefix of the sample; seeds the windows they cover
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Random restarts per window [default: 5]
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Seed [default: $REGIME_FACTOR_SEED or 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Hold σ² fixed (1 when no value is given)
    #[arg(long, num_args = 0..=1, default_missing_value = "1")]
    fix_sigma2: Option<f64>,
    /// Stay probabilities `Q11,Q22` of the filter [default: 0.5,0.5]
    #[arg(long, value_delimiter = ',')]
    stay: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    initial: Option<Vec<f64>>,
    /// Standardize every window with its own moments
    #[arg(long)]
    restandardize: bool,
    /// Start every window from random loadings instead of the previous estimates
    #[arg(long)]
    cold_start: bool,
    #[arg(long)]
    transform: bool,
    #[arg(long)]
    codes: Option<PathBuf>,
    #[arg(long)]
    standardize: bool,
}

fn phase(start: Option<u8>) -> Result<Phase> {
    match start.unwrap_or(1) {
        1 => Ok(Phase::Regime1),
        2 => Ok(Phase::Regime2),
        other => bail!("--start-regime must be 1 or 2, got {other}"),
    }
}

pub fn run(mut a: DetectArgs, cfg: Option<&Path>) -> Result<Status> {
    let mut file: DetectArgs = config::section(cfg, "detect")?;
    overlay!(a, file; column, d, enter, exit, start_regime, states, report_columns, factors, warmup, stride,
        labels, trials, tol, max_iter, seed, fix_sigma2, stay, initial, codes);
    a.empirical |= file.empirical;
    a.realtime |= file.realtime;
    a.restandardize |= file.restandardize;
    a.cold_start |= file.cold_start;
    a.transform |= file.transform;
    a.standardize |= file.standardize;

    let base = if a.empirical || a.realtime {
        DetectorConfig::empirical()
    } else {
        DetectorConfig::simulation(0)
    };
    let detector = DetectorConfig {
        d: a.d.unwrap_or(base.d),
        enter_threshold: a.enter.unwrap_or(base.enter_threshold),
        exit_threshold: a.exit.unwrap_or(base.exit_threshold),
        initial_phase: phase(a.start_regime)?,
    };
    detector.validate()?;
    let reference = a.states.as_deref().map(load_labels).transpose()?;

    ensure_dir(&a.out)?;
    let (points, dates, first) = if a.realtime {
        realtime(&a, &detector)?
    } else {
        let sheet = Sheet::read(&a.input)?;
        let name = a.column.clone().unwrap_or_else(|| "p2".into());
        let c = sheet
            .index(&name)
            .with_context(|| format!("{} has no column {name:?}", a.input.display()))?;
        let probs = sheet.numbers(c)?;
        let dates = (sheet.header[0] == "date").then(|| sheet.strings(0));
        (detect_turning_points(&probs, &detector)?, dates, 0)
    };

    let mut header: Vec<String> = vec!["t".into()];
    if dates.is_some() {
        header.push("date".into());
    }
    header.extend(["direction", "trigger", "lag"].map(String::from));
    let row = |p: &TurningPoint| {
        let mut r = vec![(p.t + 1).to_string()];
        if let Some(d) = &dates {
            r.push(d.get(p.t).cloned().unwrap_or_default());
        }
        r.extend([p.direction.name().to_string(), (p.trigger + 1).to_string(), p.lag.to_string()]);
        r
    };
    write_csv(&a.out.join("turning_points.csv"), &header, points.iter().map(row))?;

    let refs = reference
        .map(|l| reference_points(&l).into_iter().filter(|r| r.t >= first).collect::<Vec<_>>())
        .unwrap_or_default();
    let report = format_report(&points, &refs, dates.as_deref(), a.report_columns.unwrap_or(6));
    std::fs::write(a.out.join("report.txt"), report).context("writing report.txt")?;
    Ok(Status::Done)
}

/// Returns the turning points, the period labels and the first evaluated
/// period.
fn realtime(a: &DetectArgs, detector: &DetectorConfig) -> Result<(Vec<TurningPoint>, Option<Vec<String>>, usize)> {
    let prep = PanelArgs {
        transform: a.transform,
        codes: a.codes.clone(),
        standardize: a.standardize,
    };
    let prepared = prepare_panel(&a.input, &prep)?;
    let dims = resolve_dims(Some(2), a.factors.as_deref())?;
    let chain = chain_from_stay(a.stay.as_deref(), a.initial.as_deref(), 2)?;
    let mut cfg = RealtimeConfig::new(chain);
    let d = FitConfig::<f64>::default();
    cfg.fit = FitConfig {
        n_trials: a.trials.unwrap_or(5),
        tol: a.tol.unwrap_or(d.tol),
        max_iter: a.max_iter.unwrap_or(d.max_iter),
        sigma2: a.fix_sigma2.map_or(d.sigma2, Sigma2Mode::Fixed),
        seed: config::resolve_seed(a.seed)?,
        ..d
    };
    cfg.stride = a.stride.unwrap_or(1);
    cfg.restandardize = a.restandardize;
    cfg.warm_start = !a.cold_start;
    cfg.labels = a.labels.as_deref().map(load_labels).transpose()?;
    let max_r = dims.iter().copied().max().unwrap_or(1);
    let warmup = a.warmup.unwrap_or(cfg.warmup_factor * dims.len() * max_r);
    let out = realtime_detect(&prepared.panel, &dims, detector, &cfg, warmup)?;
    for (s, e) in &out.failures {
        log::warn!("window ending at period {}: {e}", s + 1);
    }
    write_csv(
        &a.out.join("realtime_probs.csv"),
        &["t".into(), "prob".into()],
        out.periods
            .iter()
            .zip(&out.probs)
            .map(|(s, p)| vec![(s + 1).to_string(), p.map(num).unwrap_or_default()]),
    )?;
    Ok((out.turning_points, prepared.dates, warmup))
}
