use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use serde_json::{json, Value};
use switchfactor::data_io::{apply_transforms, balance_and_standardize, load_codes, load_panel, LoadOptions};
use switchfactor::{
    estimate_q, estimate_transition, fit_dynamic, fit_static, FitConfig, FitResult, MarkovChain, Panel, ProbSeries,
    RegimeParams, Scalar, Sigma2Mode, StateModel,
};

use crate::config::{self, overlay};
use crate::io::{ensure_dir, num, numbered, write_csv, write_json, write_labeled_matrix};
use crate::Status;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Regimes drawn independently with fixed weights q
    Static,
    /// Regimes follow a Markov chain; smoothed probabilities
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F64,
    F32,
}

/// Panel preparation shared by `fit` and real-time `detect`.
#[derive(Debug, Default, Clone)]
pub struct PanelArgs {
    pub transform: bool,
    pub codes: Option<PathBuf>,
    pub standardize: bool,
}

pub struct Prepared {
    pub panel: Panel<f64>,
    pub names: Vec<String>,
    pub dates: Option<Vec<String>>,
    pub notes: Value,
}

pub fn prepare_panel(path: &Path, opts: &PanelArgs) -> Result<Prepared> {
    let mut table = load_panel(path, LoadOptions::default()).with_context(|| format!("loading {}", path.display()))?;
    let mut warnings = Vec::new();
    if opts.transform {
        if let Some(c) = &opts.codes {
            table.set_codes(&load_codes(c)?)?;
        }
        let Some(codes) = table.codes.clone() else {
            bail!("--transform needs a codes row in the panel or --codes");
        };
        let (t, w) = apply_transforms(&table, &codes)?;
        table = t;
        warnings = w;
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let mut notes = json!({
        "panel": path.display().to_string(),
        "transform": opts.transform,
        "codes": opts.codes.as_ref().map(|p| p.display().to_string()),
        "standardize": opts.standardize,
        "warnings": warnings,
    });
    if opts.standardize {
        let s = balance_and_standardize(&table, None)?;
        notes["dropped"] = json!(s.dropped);
        return Ok(Prepared {
            panel: s.panel,
            names: s.names,
            dates: s.dates,
            notes,
        });
    }
    Ok(Prepared {
        panel: table.to_panel()?,
        names: table.names,
        dates: table.dates,
        notes,
    })
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitArgs {
    /// Panel CSV: series in columns, optional leading date column
    #[serde(skip)]
    panel: PathBuf,
    /// Output directory
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    /// Estimator [default: static]
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Number of regimes J [default: length of --factors, else 2]
    #[arg(long)]
    regimes: Option<usize>,
    /// Factors per regime, `r1,...,rJ`; a single value applies to all regimes
    #[arg(long, value_delimiter = ',')]
    factors: Option<Vec<usize>>,
    /// Random restarts [default: 30]
    #[arg(long)]
    trials: Option<usize>,
    /// Relative log-likelihood change that stops EM [default: 1e-7]
    #[arg(long)]
    tol: Option<f64>,
    /// Iteration cap per restart [default: 500]
    #[arg(long)]
    max_iter: Option<usize>,
    /// Seed [default: $REGIME_FACTOR_SEED or 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Hold σ² fixed instead of estimating it (1 when no value is given)
    #[arg(long, num_args = 0..=1, default_missing_value = "1")]
    fix_sigma2: Option<f64>,
    /// σ² is kept in [1/C², C²] when estimated [default: 10]
    #[arg(long)]
    sigma2_bound: Option<f64>,
    /// Static regime weights `q1,...,qJ` [default: uniform]
    #[arg(long, value_delimiter = ',')]
    q: Option<Vec<f64>>,
    /// Stay probabilities `Q11,...,QJJ`; leaving mass is split evenly [default: uniform rows]
    #[arg(long, value_delimiter = ',')]
    stay: Option<Vec<f64>>,
    /// Initial regime distribution [default: uniform]
    #[arg(long, value_delimiter = ',')]
    initial: Option<Vec<f64>>,
    /// Re-estimate q (or Q and the initial distribution) at every M-step
    #[arg(long)]
    reestimate: bool,
    /// Floating-point precision of the fit [default: f64]
    #[arg(long, value_enum)]
    precision: Option<Precision>,
    /// Apply the transformation codes (codes row of the panel or --codes)
    #[arg(long)]
    transform: bool,
    /// CSV of `series,code` rows
    #[arg(long)]
    codes: Option<PathBuf>,
    /// Drop incomplete series and periods, then demean and scale each series
    #[arg(long)]
    standardize: bool,
}

/// Regime dimensions from `--regimes` and `--factors`.
pub fn resolve_dims(regimes: Option<usize>, factors: Option<&[usize]>) -> Result<Vec<usize>> {
    let j = regimes.unwrap_or(match factors {
        Some(f) if f.len() > 1 => f.len(),
        _ => 2,
    });
    if j == 0 {
        bail!("--regimes must be at least 1");
    }
    match factors {
        None => Ok(vec![1; j]),
        Some([r]) => Ok(vec![*r; j]),
        Some(f) if f.len() == j => Ok(f.to_vec()),
        Some(f) => bail!("--factors lists {} values for {j} regimes", f.len()),
    }
}

fn simplex(v: Option<&[f64]>, j: usize, what: &str) -> Result<DVector<f64>> {
    match v {
        None => Ok(DVector::from_element(j, 1.0 / j as f64)),
        Some(v) if v.len() == j => Ok(DVector::from_column_slice(v)),
        Some(v) => bail!("--{what} lists {} values for {j} regimes", v.len()),
    }
}

/// Column-stochastic matrix with the given diagonal; leaving mass is split
/// evenly across the other regimes.
pub fn chain_from_stay(stay: Option<&[f64]>, initial: Option<&[f64]>, j: usize) -> Result<MarkovChain<f64>> {
    let q = match stay {
        None => DMatrix::from_element(j, j, 1.0 / j as f64),
        Some(s) if s.len() == j => DMatrix::from_fn(j, j, |a, b| {
            if a == b {
                s[b]
            } else {
                (1.0 - s[b]) / (j - 1) as f64
            }
        }),
        Some(s) => bail!("--stay lists {} values for {j} regimes", s.len()),
    };
    Ok(MarkovChain::new(q, simplex(initial, j, "initial")?)?)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn state_json(state: &StateModel<f64>) -> Value {
    match state {
        StateModel::Static { q } => json!({ "q": q.as_slice() }),
        StateModel::Markov(c) => json!({ "transition": rows(&c.transition), "initial": c.initial.as_slice() }),
    }
}

fn narrow<T: Scalar>(m: &DMatrix<f64>) -> DMatrix<T> {
    m.map(T::of)
}

fn widen<T: Scalar>(m: &DMatrix<T>) -> DMatrix<f64> {
    m.map(|v| v.as_f64())
}

fn widen_fit<T: Scalar>(f: FitResult<T>) -> FitResult<f64> {
    let v = |x: &DVector<T>| x.map(|e| e.as_f64());
    FitResult {
        params: RegimeParams {
            loadings: f.params.loadings.iter().map(widen).collect(),
            sigma2: f.params.sigma2.as_f64(),
        },
        state: match &f.state {
            StateModel::Static { q } => StateModel::Static { q: v(q) },
            StateModel::Markov(c) => StateModel::Markov(MarkovChain {
                transition: widen(&c.transition),
                initial: v(&c.initial),
            }),
        },
        probs: ProbSeries {
            marginal: widen(&f.probs.marginal),
            pairwise: f.probs.pairwise.as_ref().map(|p| p.iter().map(widen).collect()),
        },
        factors: widen(&f.factors),
        loglik_trace: f.loglik_trace.iter().map(|v| v.as_f64()).collect(),
        iterations: f.iterations,
        converged: f.converged,
        trial_index: f.trial_index,
        diagnostics: f.diagnostics,
    }
}

struct Plan {
    mode: Mode,
    dims: Vec<usize>,
    q: DVector<f64>,
    chain: MarkovChain<f64>,
    config: FitConfig<f64>,
}

fn estimate<T: Scalar>(panel: &Panel<f64>, plan: &Plan) -> switchfactor::Result<FitResult<f64>> {
    let c = &plan.config;
    let panel = Panel::new(narrow::<T>(panel.values()))?;
    let config = FitConfig::<T> {
        n_trials: c.n_trials,
        tol: c.tol,
        max_iter: c.max_iter,
        sigma2: match c.sigma2 {
            Sigma2Mode::Fixed(v) => Sigma2Mode::Fixed(T::of(v)),
            Sigma2Mode::Estimate { bound } => Sigma2Mode::Estimate { bound: T::of(bound) },
        },
        seed: c.seed,
        reestimate_state: c.reestimate_state,
        ..FitConfig::default()
    };
    let fit = match plan.mode {
        Mode::Static => fit_static(&panel, &plan.dims, &plan.q.map(T::of), &config)?,
        Mode::Dynamic => {
            let chain = MarkovChain::new(narrow(&plan.chain.transition), plan.chain.initial.map(T::of))?;
            fit_dynamic(&panel, &plan.dims, &chain, &config)?
        }
    };
    Ok(widen_fit(fit))
}

pub fn run(mut a: FitArgs, cfg: Option<&Path>) -> Result<Status> {
    let mut file: FitArgs = config::section(cfg, "fit")?;
    overlay!(a, file; mode, regimes, factors, trials, tol, max_iter, seed, fix_sigma2, sigma2_bound, q, stay, initial, precision, codes);
    a.reestimate |= file.reestimate;
    let prep = PanelArgs {
        transform: a.transform || file.transform,
        codes: a.codes.clone(),
        standardize: a.standardize || file.standardize,
    };

    let dims = resolve_dims(a.regimes, a.factors.as_deref())?;
    let j = dims.len();
    let mode = a.mode.unwrap_or(Mode::Static);
    let precision = a.precision.unwrap_or(Precision::F64);
    let d = FitConfig::<f64>::default();
    let plan = Plan {
        mode,
        q: simplex(a.q.as_deref(), j, "q")?,
        chain: chain_from_stay(a.stay.as_deref(), a.initial.as_deref(), j)?,
        config: FitConfig {
            n_trials: a.trials.unwrap_or(d.n_trials),
            tol: a.tol.unwrap_or(d.tol),
            max_iter: a.max_iter.unwrap_or(d.max_iter),
            sigma2: match a.fix_sigma2 {
                Some(v) => Sigma2Mode::Fixed(v),
                None => Sigma2Mode::Estimate {
                    bound: a.sigma2_bound.unwrap_or(10.0),
                },
            },
            seed: config::resolve_seed(a.seed)?,
            reestimate_state: a.reestimate,
            ..d
        },
        dims,
    };

    let prepared = prepare_panel(&a.panel, &prep)?;
    let c = &plan.config;
    let config_json = json!({
        "mode": match mode { Mode::Static => "static", Mode::Dynamic => "dynamic" },
        "factors": plan.dims,
        "trials": c.n_trials,
        "tol": c.tol,
        "max_iter": c.max_iter,
        "seed": c.seed,
        "sigma2": match c.sigma2 {
            Sigma2Mode::Fixed(v) => json!({ "fixed": v }),
            Sigma2Mode::Estimate { bound } => json!({ "estimate": { "bound": bound } }),
        },
        "state": match mode {
            Mode::Static => state_json(&StateModel::Static { q: plan.q.clone() }),
            Mode::Dynamic => state_json(&StateModel::Markov(plan.chain.clone())),
        },
        "reestimate": c.reestimate_state,
        "precision": match precision { Precision::F64 => "f64", Precision::F32 => "f32" },
    });

    ensure_dir(&a.out)?;
    let result = match precision {
        Precision::F64 => estimate::<f64>(&prepared.panel, &plan),
        Precision::F32 => estimate::<f32>(&prepared.panel, &plan),
    };
    let fit = match result {
        Ok(f) => f,
        Err(e) => {
            let trials = match &e {
                switchfactor::Error::FitFailure(t) => json!(t),
                _ => Value::Null,
            };
            let diag = json!({
                "input": prepared.notes,
                "config": config_json,
                "result": { "error": e.to_string(), "trials": trials },
            });
            write_json(&a.out.join("fit.json"), &diag)?;
            return Err(e.into());
        }
    };

    write_outputs(&a.out, &fit, &prepared)?;
    let any_converged = fit.diagnostics.trials.iter().any(|t| t.converged);
    let d = &fit.diagnostics;
    write_json(
        &a.out.join("fit.json"),
        &json!({
            "input": prepared.notes,
            "config": config_json,
            "result": {
                "winning_trial": fit.trial_index,
                "converged": fit.converged,
                "iterations": fit.iterations,
                "loglik": fit.loglik(),
                "sigma2": fit.params.sigma2,
                "state": state_json(&fit.state),
                "foc_residual": d.foc_residual,
                "eigen_ties": d.eigen_ties,
                "floor_hits": d.floor_hits,
                "trials": d.trials,
            },
        }),
    )?;
    Ok(if any_converged { Status::Done } else { Status::NotConverged })
}

fn period_column(dates: Option<&Vec<String>>, n_t: usize) -> (String, Vec<String>) {
    match dates {
        Some(d) => ("date".into(), d.clone()),
        None => ("t".into(), (1..=n_t).map(|t| t.to_string()).collect()),
    }
}

fn write_outputs(out: &Path, fit: &FitResult<f64>, prepared: &Prepared) -> Result<()> {
    let n_t = fit.probs.marginal.nrows();
    let j = fit.params.loadings.len();
    let (label, periods) = period_column(prepared.dates.as_ref(), n_t);
    for (k, l) in fit.params.loadings.iter().enumerate() {
        let path = out.join(format!("loadings_{}.csv", k + 1));
        write_labeled_matrix(&path, "series", &prepared.names, &numbered("f", l.ncols()), l)?;
    }
    write_labeled_matrix(&out.join("probs.csv"), &label, &periods, &numbered("p", j), &fit.probs.marginal)?;
    write_labeled_matrix(
        &out.join("factors.csv"),
        &label,
        &periods,
        &numbered("f", fit.factors.ncols()),
        &fit.factors,
    )?;
    match &fit.probs.pairwise {
        Some(pw) => {
            // P(z_t = to, z_{t-1} = from)
            let header = [label.clone(), "from".into(), "to".into(), "prob".into()];
            let rows = pw.iter().enumerate().flat_map(|(s, m)| {
                let period = periods[s + 1].clone();
                (0..j).flat_map(move |from| {
                    let period = period.clone();
                    (0..j).map(move |to| vec![period.clone(), (from + 1).to_string(), (to + 1).to_string(), num(m[(to, from)])])
                })
            });
            write_csv(&out.join("pairwise_probs.csv"), &header, rows)?;
            let chain = estimate_transition(&fit.probs)?;
            let mut m = chain.transition.clone();
            m = m.insert_column(j, 0.0);
            m.set_column(j, &chain.initial);
            let mut cols = numbered("from_", j);
            cols.push("initial".into());
            write_labeled_matrix(&out.join("Q.csv"), "to", &numbered("", j), &cols, &m)?;
        }
        None => {
            let q = estimate_q(&fit.probs);
            write_csv(
                &out.join("qhat.csv"),
                &["regime".into(), "q".into()],
                q.iter().enumerate().map(|(k, v)| vec![(k + 1).to_string(), num(*v)]),
            )?;
        }
    }
    write_csv(
        &out.join("loglik_trace.csv"),
        &["iteration".into(), "loglik".into()],
        fit.loglik_trace.iter().enumerate().map(|(i, v)| vec![i.to_string(), num(*v)]),
    )?;
    Ok(())
}
