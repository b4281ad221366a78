//! Turning-point detection from regime probabilities.
//!
//! The probability of regime 2 is smoothed by a trailing moving average of
//! order `d` and passed through a hysteresis rule: a turning point into
//! regime 2 is recorded the first time the averaged probability exceeds the
//! upper threshold, after which only the lower threshold is armed, and so
//! on. A trigger at period `t` dates the turning point at `t - d`.
//!
//! [`realtime_detect`] runs the rule out of sample on an expanding window.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::em_dynamic::{fit_dynamic, hamilton_filter};
use crate::error::{Error, Result};
use crate::evaluate::match_labels;
use crate::fit::{FitConfig, Init};
use crate::model::{FitResult, MarkovChain, Panel, StateModel};
use crate::scalar::Scalar;

/// Regime the detector believes the economy is in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Phase {
    Regime1,
    Regime2,
}

impl Phase {
    pub fn label(self) -> usize {
        match self {
            Phase::Regime1 => 0,
            Phase::Regime2 => 1,
        }
    }
}

/// `Enter` is a switch into regime 2 (a recession in the business-cycle
/// reading), `Exit` a switch back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Direction {
    Enter,
    Exit,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Enter => "enter",
            Direction::Exit => "exit",
        }
    }

    fn business_cycle_name(self) -> &'static str {
        match self {
            Direction::Enter => "Recession",
            Direction::Exit => "Expansion",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DetectorConfig {
    /// Moving-average order.
    pub d: usize,
    pub enter_threshold: f64,
    pub exit_threshold: f64,
    pub initial_phase: Phase,
}

impl DetectorConfig {
    /// Thresholds 0.9 / 0.1 used on simulated data.
    pub fn simulation(d: usize) -> Self {
        DetectorConfig {
            d,
            enter_threshold: 0.9,
            exit_threshold: 0.1,
            initial_phase: Phase::Regime1,
        }
    }

    /// Thresholds 0.8 / 0.2 on raw probabilities, used in real time.
    pub fn empirical() -> Self {
        DetectorConfig {
            d: 0,
            enter_threshold: 0.8,
            exit_threshold: 0.2,
            initial_phase: Phase::Regime1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = (self.exit_threshold, self.enter_threshold);
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::invalid(format!(
                "thresholds must satisfy 0 < exit < enter < 1, got exit {lo}, enter {hi}"
            )));
        }
        Ok(())
    }
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self::simulation(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct TurningPoint {
    /// Dated turning point, `trigger - d` (0-based).
    pub t: usize,
    pub direction: Direction,
    /// Period whose data crossed the threshold.
    pub trigger: usize,
    /// `trigger - t`.
    pub lag: usize,
}

/// Trailing moving average; the first `d` entries average over the terms
/// available.
pub fn moving_average(probs: &[f64], d: usize) -> Vec<f64> {
    (0..probs.len())
        .map(|t| {
            let window = &probs[t.saturating_sub(d)..=t];
            window.iter().sum::<f64>() / window.len() as f64
        })
        .collect()
}

/// Moving average over a series with gaps: each entry averages the
/// available values among the last `d + 1` periods, and stays a gap if
/// there are none.
pub fn moving_average_sparse(probs: &[Option<f64>], d: usize) -> Vec<Option<f64>> {
    (0..probs.len())
        .map(|t| {
            let window = &probs[t.saturating_sub(d)..=t];
            let vals: Vec<f64> = window.iter().flatten().copied().collect();
            if vals.is_empty() {
                None
            } else {
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            }
        })
        .collect()
}

fn run_hysteresis(values: impl Iterator<Item = (usize, f64)>, config: &DetectorConfig) -> Vec<TurningPoint> {
    let mut phase = config.initial_phase;
    let mut out: Vec<TurningPoint> = Vec::new();
    for (t, p) in values {
        let direction = match phase {
            Phase::Regime1 if p > config.enter_threshold => Direction::Enter,
            Phase::Regime2 if p < config.exit_threshold => Direction::Exit,
            _ => continue,
        };
        let mut date = t.saturating_sub(config.d);
        // near the left edge two triggers can map to the same date
        if let Some(prev) = out.last() {
            date = date.max(prev.t + 1).min(t);
        }
        out.push(TurningPoint {
            t: date,
            direction,
            trigger: t,
            lag: t - date,
        });
        phase = match direction {
            Direction::Enter => Phase::Regime2,
            Direction::Exit => Phase::Regime1,
        };
    }
    out
}

/// Hysteresis detection on the moving average of `probs` (regime-2
/// probabilities).
pub fn detect_turning_points(probs: &[f64], config: &DetectorConfig) -> Result<Vec<TurningPoint>> {
    config.validate()?;
    let ma = moving_average(probs, config.d);
    Ok(run_hysteresis(ma.into_iter().enumerate(), config))
}

/// Same as [`detect_turning_points`] on a series with gaps; gaps leave the
/// detector state unchanged.
pub fn detect_turning_points_sparse(probs: &[Option<f64>], config: &DetectorConfig) -> Result<Vec<TurningPoint>> {
    config.validate()?;
    let ma = moving_average_sparse(probs, config.d);
    Ok(run_hysteresis(
        ma.into_iter().enumerate().filter_map(|(t, p)| p.map(|v| (t, v))),
        config,
    ))
}

/// Per-period regime labels (0-based) implied by a set of turning points.
pub fn labels_from_turning_points(n_periods: usize, points: &[TurningPoint], initial: Phase) -> Vec<usize> {
    let mut labels = vec![initial.label(); n_periods];
    for (k, tp) in points.iter().enumerate() {
        let end = points.get(k + 1).map_or(n_periods, |next| next.t);
        let label = match tp.direction {
            Direction::Enter => 1,
            Direction::Exit => 0,
        };
        for l in labels.iter_mut().take(end).skip(tp.t) {
            *l = label;
        }
    }
    labels
}

/// A dated reference turning point, for instance an official business-cycle
/// date.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReferencePoint {
    /// First period of the new regime (0-based).
    pub t: usize,
    pub direction: Direction,
}

/// Reference turning points implied by a label sequence.
pub fn reference_points(labels: &[usize]) -> Vec<ReferencePoint> {
    labels
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] != w[1])
        .map(|(t, w)| ReferencePoint {
            t: t + 1,
            direction: if w[1] > w[0] { Direction::Enter } else { Direction::Exit },
        })
        .collect()
}

/// Detection lag for each reference point: periods from the reference date
/// until the signal is available, i.e. `trigger + 1 - reference`. A
/// reference point is matched to the first detected turning point of the
/// same direction triggered on or after it and before the next reference
/// point; unmatched points give `None`.
pub fn detection_lags(points: &[TurningPoint], reference: &[ReferencePoint]) -> Vec<Option<usize>> {
    reference
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let end = reference.get(k + 1).map_or(usize::MAX, |n| n.t);
            points
                .iter()
                .find(|p| p.direction == r.direction && p.trigger >= r.t && p.trigger < end)
                .map(|p| p.trigger + 1 - r.t)
        })
        .collect()
}

/// Human-readable report: a table in the layout of the out-of-sample
/// turning-point table (direction, reference date, lag), followed by every
/// detected turning point. `dates` labels periods; 1-based indices are used
/// when it is `None`.
pub fn format_report(
    points: &[TurningPoint],
    reference: &[ReferencePoint],
    dates: Option<&[String]>,
    columns: usize,
) -> String {
    use std::fmt::Write;
    let date = |t: usize| match dates {
        Some(d) if t < d.len() => d[t].clone(),
        _ => (t + 1).to_string(),
    };
    let mut s = String::new();
    let lags = detection_lags(points, reference);
    if !reference.is_empty() {
        let columns = columns.max(1);
        let width = 12;
        for (chunk, lag_chunk) in reference.chunks(columns).zip(lags.chunks(columns)) {
            let mut rows = [format!("{:<12}", ""), format!("{:<12}", ""), format!("{:<12}", "Detected")];
            for (r, lag) in chunk.iter().zip(lag_chunk) {
                let _ = write!(rows[0], "{:>width$}", r.direction.business_cycle_name());
                let _ = write!(rows[1], "{:>width$}", date(r.t));
                let lag = lag.map_or("N.A.".to_string(), |l| l.to_string());
                let _ = write!(rows[2], "{lag:>width$}");
            }
            for row in rows {
                s.push_str(row.trim_end());
                s.push('\n');
            }
            s.push('\n');
        }
        let mean = |dir: Direction| {
            let v: Vec<usize> = reference
                .iter()
                .zip(&lags)
                .filter(|(r, _)| r.direction == dir)
                .filter_map(|(_, l)| *l)
                .collect();
            (!v.is_empty()).then(|| v.iter().sum::<usize>() as f64 / v.len() as f64)
        };
        for dir in [Direction::Enter, Direction::Exit] {
            if let Some(m) = mean(dir) {
                let _ = writeln!(s, "mean lag ({}): {m:.2}", dir.business_cycle_name().to_lowercase());
            }
        }
        s.push('\n');
    }
    let _ = writeln!(s, "detected turning points: {}", points.len());
    for p in points {
        let _ = writeln!(
            s,
            "  {:<6} {:>10}  triggered {:>10}  lag {}",
            p.direction.name(),
            date(p.t),
            date(p.trigger),
            p.lag
        );
    }
    s
}

/// Settings for [`realtime_detect`].
#[derive(Debug, Clone)]
pub struct RealtimeConfig<T: Scalar> {
    /// EM settings for each window. `init` is ignored; windows start from
    /// known labels, the previous window's estimates, or random loadings.
    pub fit: FitConfig<T>,
    /// Transition matrix used by the E-step and the one-step filter.
    pub chain: MarkovChain<T>,
    /// Re-estimate every `stride` periods.
    pub stride: usize,
    /// Demean and standardize each window with its own moments.
    pub restandardize: bool,
    /// Known 0-based labels for a prefix of the sample.
    pub labels: Option<Vec<usize>>,
    /// Start each window from the previous window's estimates.
    pub warm_start: bool,
    /// Required warmup is at least this many periods per regime and factor.
    pub warmup_factor: usize,
}

impl<T: Scalar> RealtimeConfig<T> {
    pub fn new(chain: MarkovChain<T>) -> Self {
        RealtimeConfig {
            fit: FitConfig::default(),
            chain,
            stride: 1,
            restandardize: false,
            labels: None,
            warm_start: true,
            warmup_factor: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealtimeOutput {
    /// Evaluated periods (0-based).
    pub periods: Vec<usize>,
    /// Filtered regime-2 probability per evaluated period; `None` where the
    /// window's estimation failed.
    pub probs: Vec<Option<f64>>,
    pub turning_points: Vec<TurningPoint>,
    /// `(period, error)` for every failed window.
    pub failures: Vec<(usize, String)>,
}

impl RealtimeOutput {
    /// Probabilities on the full period axis, gaps where not evaluated.
    pub fn dense_probs(&self, n_periods: usize) -> Vec<Option<f64>> {
        let mut out = vec![None; n_periods];
        for (&s, &p) in self.periods.iter().zip(&self.probs) {
            out[s] = p;
        }
        out
    }
}

fn window_panel<T: Scalar>(panel: &Panel<T>, end: usize, fit_len: usize, restandardize: bool) -> Result<Panel<T>> {
    let window = panel.periods(0, end)?;
    if !restandardize {
        return Ok(window);
    }
    let x = window.values();
    let n = x.ncols();
    let t_fit = T::of_usize(fit_len);
    let mut out = x.clone();
    for i in 0..n {
        let col = x.column(i);
        let head = col.rows(0, fit_len);
        let mean = head.sum() / t_fit;
        let var = head.iter().map(|&v| (v - mean) * (v - mean)).fold(T::zero(), |a, b| a + b)
            / T::of_usize(fit_len.saturating_sub(1).max(1));
        let sd = if var > T::zero() { var.sqrt() } else { T::one() };
        for t in 0..end {
            out[(t, i)] = (x[(t, i)] - mean) / sd;
        }
    }
    Panel::new(out)
}

struct WindowFit<T: Scalar> {
    fit: FitResult<T>,
    prob: f64,
}

fn fit_window<T: Scalar>(
    panel: &Panel<T>,
    dims: &[usize],
    s: usize,
    cfg: &RealtimeConfig<T>,
    prev: Option<&FitResult<T>>,
) -> Result<WindowFit<T>> {
    let data = window_panel(panel, s + 1, s, cfg.restandardize)?;
    let train = data.periods(0, s)?;
    let j = dims.len();
    let known = cfg.labels.as_ref().filter(|l| l.len() >= s).map(|l| &l[..s]);
    let mut fit_cfg = cfg.fit.clone();
    fit_cfg.init = match (known, prev) {
        (Some(labels), _) => {
            Init::Probs(DMatrix::from_fn(s, j, |t, c| if labels[t] == c { T::one() } else { T::zero() }))
        }
        (None, Some(p)) if cfg.warm_start => {
            fit_cfg.n_trials = 1;
            Init::Params(p.params.clone())
        }
        _ => Init::Random,
    };
    let mut fit = fit_dynamic(&train, dims, &cfg.chain, &fit_cfg)?;
    // keep regime identities stable across windows
    let anchor: Option<Vec<usize>> = match (known, prev) {
        (Some(labels), _) => Some(labels.to_vec()),
        (None, Some(p)) => Some(p.probs.argmax()),
        (None, None) => None,
    };
    let perm = match anchor {
        Some(a) => {
            let n = a.len().min(s);
            let m = fit.probs.marginal.rows(0, n).map(|v| v.as_f64());
            match_labels(&a[..n], &m)?
        }
        None => {
            // the larger regime is regime 1
            let mass = fit.probs.regime_mass();
            let mut order: Vec<usize> = (0..j).collect();
            order.sort_by(|&a, &b| mass[b].partial_cmp(&mass[a]).unwrap_or(std::cmp::Ordering::Equal));
            let mut perm = vec![0; j];
            for (new, &old) in order.iter().enumerate() {
                perm[old] = new;
            }
            perm
        }
    };
    fit = fit.permuted(&perm);
    let chain = match &fit.state {
        StateModel::Markov(c) => c.clone(),
        StateModel::Static { .. } => cfg.chain.clone(),
    };
    let filt = hamilton_filter(&data, &fit.params, &chain)?;
    let prob = filt.filtered[(s, 1)].as_f64();
    Ok(WindowFit { fit, prob })
}

/// Out-of-sample detection on an expanding window.
///
/// For every evaluated period `s ≥ warmup` (0-based) the model is fit on
/// periods `0..s` and the filtered regime-2 probability of period `s` is
/// computed from a filter pass over `0..=s`. Failed windows become gaps.
/// With `warm_start` the windows run sequentially; otherwise in parallel.
pub fn realtime_detect<T: Scalar>(
    panel: &Panel<T>,
    dims: &[usize],
    detector: &DetectorConfig,
    config: &RealtimeConfig<T>,
    warmup: usize,
) -> Result<RealtimeOutput> {
    detector.validate()?;
    if dims.len() != 2 {
        return Err(Error::invalid("real-time detection needs exactly two regimes"));
    }
    if config.chain.n_states() != 2 {
        return Err(Error::invalid("the chain must have two states"));
    }
    if config.stride == 0 {
        return Err(Error::invalid("stride must be positive"));
    }
    let max_r = dims.iter().copied().max().unwrap_or(0);
    let min_warmup = config.warmup_factor * dims.len() * max_r;
    if warmup < min_warmup.max(2) {
        return Err(Error::InsufficientSample(format!(
            "warmup of {warmup} periods is below the required {min_warmup}"
        )));
    }
    let n_t = panel.n_periods();
    if warmup >= n_t {
        return Err(Error::InsufficientSample(format!("warmup {warmup} leaves no periods of {n_t} to evaluate")));
    }
    let periods: Vec<usize> = (warmup..n_t).step_by(config.stride).collect();
    let results: Vec<Result<WindowFit<T>>> = if config.warm_start {
        let mut prev: Option<FitResult<T>> = None;
        periods
            .iter()
            .map(|&s| {
                let r = fit_window(panel, dims, s, config, prev.as_ref());
                match &r {
                    Ok(w) => prev = Some(w.fit.clone()),
                    Err(e) => log::warn!("window ending at {s} failed: {e}"),
                }
                r
            })
            .collect()
    } else {
        periods
            .par_iter()
            .map(|&s| fit_window(panel, dims, s, config, None))
            .collect()
    };
    let mut probs = Vec::with_capacity(periods.len());
    let mut failures = Vec::new();
    for (&s, r) in periods.iter().zip(results) {
        match r {
            Ok(w) => probs.push(Some(w.prob)),
            Err(e) => {
                probs.push(None);
                failures.push((s, e.to_string()));
            }
        }
    }
    let dense = {
        let mut d = vec![None; n_t];
        for (&s, &p) in periods.iter().zip(&probs) {
            d[s] = p;
        }
        d
    };
    let turning_points = detect_turning_points_sparse(&dense, detector)?;
    Ok(RealtimeOutput {
        periods,
        probs,
        turning_points,
        failures,
    })
}
