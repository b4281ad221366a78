//! EM driver shared by the static and Markov estimators: random restarts,
//! the E/M loop, convergence, and selection of the winning trial.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::em_dynamic::{estimate_transition, filter_log_densities, smoother};
use crate::em_static::{foc_residual, m_step_with, posterior_from_log_densities, posterior_factors, weighted_covariance};
use crate::error::{Error, Result, TrialSummary};
use crate::model::{log_density_matrix, FitDiagnostics, FitResult, Panel, ProbSeries, RegimeParams, StateModel};
use crate::scalar::Scalar;

/// Regime mass below which a regime is considered empty.
pub const EMPTY_REGIME_MASS: f64 = 1e-12;

/// How the idiosyncratic variance is handled in the M-step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sigma2Mode<T: Scalar> {
    /// Estimate σ² by the trace condition, clamped to `[1/C², C²]`.
    Estimate { bound: T },
    /// Hold σ² at the given value (the usual choice is 1).
    Fixed(T),
}

impl<T: Scalar> Default for Sigma2Mode<T> {
    fn default() -> Self {
        Sigma2Mode::Estimate { bound: T::of(10.0) }
    }
}

impl<T: Scalar> Sigma2Mode<T> {
    pub fn bounds(&self) -> (T, T) {
        match *self {
            Sigma2Mode::Estimate { bound } => (T::one() / (bound * bound), bound * bound),
            Sigma2Mode::Fixed(v) => (v, v),
        }
    }

    pub(crate) fn start(&self) -> T {
        match *self {
            Sigma2Mode::Estimate { .. } => T::one(),
            Sigma2Mode::Fixed(v) => v,
        }
    }
}

/// Starting point for trial 0. Remaining trials always start from random
/// loadings.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Init<T: Scalar> {
    #[default]
    Random,
    /// Warm start from given parameters.
    Params(RegimeParams<T>),
    /// Start with an M-step on these `T × J` regime probabilities.
    Probs(DMatrix<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig<T: Scalar> {
    pub n_trials: usize,
    /// Stop when `|Δℓ| / (1 + |ℓ|)` falls below this.
    pub tol: f64,
    pub max_iter: usize,
    pub sigma2: Sigma2Mode<T>,
    pub seed: u64,
    pub init: Init<T>,
    /// Re-estimate `q` (static) or `(Q, φ)` (Markov) inside the EM loop.
    pub reestimate_state: bool,
}

impl<T: Scalar> Default for FitConfig<T> {
    fn default() -> Self {
        FitConfig {
            n_trials: 30,
            tol: 1e-7,
            max_iter: 500,
            sigma2: Sigma2Mode::default(),
            seed: 0,
            init: Init::Random,
            reestimate_state: false,
        }
    }
}

/// Random initial loadings for one trial: i.i.d. N(0,1) entries drawn from
/// a ChaCha20 stream keyed by `(seed, trial)`.
pub fn random_loadings<T: Scalar>(n: usize, dims: &[usize], seed: u64, trial: usize) -> Vec<DMatrix<T>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    dims.iter()
        .map(|&r| {
            DMatrix::from_fn(n, r, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                T::of(z)
            })
        })
        .collect()
}

pub(crate) struct EStep<T: Scalar> {
    pub probs: ProbSeries<T>,
    pub loglik: T,
}

pub(crate) fn e_step<T: Scalar>(panel: &Panel<T>, params: &RegimeParams<T>, state: &StateModel<T>) -> Result<EStep<T>> {
    let dens = log_density_matrix(panel, params)?;
    match state {
        StateModel::Static { q } => {
            let (probs, loglik) = posterior_from_log_densities(&dens, q)?;
            Ok(EStep { probs, loglik })
        }
        StateModel::Markov(chain) => {
            let filt = filter_log_densities(&dens, chain)?;
            let loglik = filt.cond_loglik.sum();
            let probs = smoother(&filt, chain)?;
            Ok(EStep { probs, loglik })
        }
    }
}

fn update_state<T: Scalar>(state: &StateModel<T>, probs: &ProbSeries<T>) -> Result<StateModel<T>> {
    Ok(match state {
        StateModel::Static { .. } => StateModel::Static {
            q: crate::em_static::estimate_q(probs),
        },
        StateModel::Markov(_) => StateModel::Markov(estimate_transition(probs)?),
    })
}

struct TrialOutcome<T: Scalar> {
    params: RegimeParams<T>,
    state: StateModel<T>,
    probs: ProbSeries<T>,
    trace: Vec<T>,
    iterations: usize,
    converged: bool,
    eigen_ties: usize,
    floor_hits: usize,
}

enum TrialEnd<T: Scalar> {
    Done(Box<TrialOutcome<T>>),
    Degenerate { iterations: usize, message: String },
    Failed { iterations: usize, error: Error },
}

fn initial_params<T: Scalar>(
    panel: &Panel<T>,
    dims: &[usize],
    config: &FitConfig<T>,
    trial: usize,
) -> Result<RegimeParams<T>> {
    let sigma2 = config.sigma2.start();
    match (&config.init, trial) {
        (Init::Params(p), 0) => {
            if p.dims() != dims || p.n_series() != panel.n_series() {
                return Err(Error::invalid("warm-start parameters do not match the requested dims"));
            }
            let s2 = match config.sigma2 {
                Sigma2Mode::Fixed(v) => v,
                Sigma2Mode::Estimate { .. } => p.sigma2,
            };
            RegimeParams::new(p.loadings.clone(), s2)
        }
        (Init::Probs(m), 0) => {
            if m.ncols() != dims.len() || m.nrows() != panel.n_periods() {
                return Err(Error::invalid("initial probabilities have the wrong shape"));
            }
            let probs = ProbSeries::new(m.clone(), None)?;
            Ok(m_step_with(panel, &probs, dims, config.sigma2, sigma2)?.params)
        }
        _ => RegimeParams::new(random_loadings(panel.n_series(), dims, config.seed, trial), sigma2),
    }
}

fn run_trial<T: Scalar>(
    panel: &Panel<T>,
    dims: &[usize],
    state0: &StateModel<T>,
    config: &FitConfig<T>,
    trial: usize,
) -> TrialEnd<T> {
    let mut params = match initial_params(panel, dims, config, trial) {
        Ok(p) => p,
        Err(error) => return TrialEnd::Failed { iterations: 0, error },
    };
    let mut state = state0.clone();
    let mut trace: Vec<T> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let (mut eigen_ties, mut floor_hits) = (0, 0);
    let probs = loop {
        let es = match e_step(panel, &params, &state) {
            Ok(es) => es,
            Err(error) => return TrialEnd::Failed { iterations, error },
        };
        if !es.loglik.is_finite() {
            return TrialEnd::Failed {
                iterations,
                error: Error::Domain("log-likelihood is not finite".into()),
            };
        }
        if let Some(&prev) = trace.last() {
            let rel = (es.loglik - prev).abs().as_f64() / (1.0 + es.loglik.abs().as_f64());
            if rel < config.tol {
                converged = true;
            }
        }
        trace.push(es.loglik);
        if converged || iterations >= config.max_iter {
            break es.probs;
        }
        if let Some((j, m)) = es
            .probs
            .regime_mass()
            .iter()
            .enumerate()
            .find(|(_, m)| m.as_f64() < EMPTY_REGIME_MASS)
        {
            return TrialEnd::Degenerate {
                iterations,
                message: format!("regime {} emptied (mass {:e}) at iteration {iterations}", j + 1, m.as_f64()),
            };
        }
        if config.reestimate_state {
            state = match update_state(&state, &es.probs) {
                Ok(s) => s,
                Err(Error::DegenerateFit(message)) => return TrialEnd::Degenerate { iterations, message },
                Err(error) => return TrialEnd::Failed { iterations, error },
            };
        }
        match m_step_with(panel, &es.probs, dims, config.sigma2, params.sigma2) {
            Ok(m) => {
                params = m.params;
                eigen_ties += m.eigen_ties;
                floor_hits += m.floor_hits;
            }
            Err(Error::DegenerateWeights(message)) => return TrialEnd::Degenerate { iterations, message },
            Err(error) => return TrialEnd::Failed { iterations, error },
        }
        iterations += 1;
    };
    TrialEnd::Done(Box::new(TrialOutcome {
        params,
        state,
        probs,
        trace,
        iterations,
        converged,
        eigen_ties,
        floor_hits,
    }))
}

fn summarize<T: Scalar>(trial: usize, end: &TrialEnd<T>) -> TrialSummary {
    match end {
        TrialEnd::Done(o) => TrialSummary {
            trial,
            loglik: o.trace.last().map(|v| v.as_f64()),
            iterations: o.iterations,
            converged: o.converged,
            degenerate: false,
            message: None,
        },
        TrialEnd::Degenerate { iterations, message } => TrialSummary {
            trial,
            loglik: None,
            iterations: *iterations,
            converged: false,
            degenerate: true,
            message: Some(message.clone()),
        },
        TrialEnd::Failed { iterations, error } => TrialSummary {
            trial,
            loglik: None,
            iterations: *iterations,
            converged: false,
            degenerate: false,
            message: Some(error.to_string()),
        },
    }
}

pub(crate) fn validate_fit_inputs<T: Scalar>(panel: &Panel<T>, dims: &[usize], config: &FitConfig<T>) -> Result<()> {
    if dims.is_empty() {
        return Err(Error::invalid("at least one regime is required"));
    }
    if let Some(&r) = dims.iter().find(|&&r| r == 0 || r > panel.n_series()) {
        return Err(Error::invalid(format!(
            "factor count {r} must lie in 1..={}",
            panel.n_series()
        )));
    }
    if config.n_trials == 0 {
        return Err(Error::invalid("n_trials must be at least 1"));
    }
    if !(config.tol > 0.0) {
        return Err(Error::invalid("tol must be positive"));
    }
    if let Sigma2Mode::Fixed(v) = config.sigma2 {
        crate::model::check_sigma2(v)?;
    }
    if let Sigma2Mode::Estimate { bound } = config.sigma2 {
        if !(bound >= T::one()) {
            return Err(Error::invalid("sigma2 bound C must be at least 1"));
        }
    }
    Ok(())
}

/// Runs every trial and returns the one with the largest final likelihood.
pub(crate) fn run_em<T: Scalar>(
    panel: &Panel<T>,
    dims: &[usize],
    state0: StateModel<T>,
    config: &FitConfig<T>,
) -> Result<FitResult<T>> {
    validate_fit_inputs(panel, dims, config)?;
    if state0.n_states() != dims.len() {
        return Err(Error::invalid(format!(
            "state model has {} regimes, dims has {}",
            state0.n_states(),
            dims.len()
        )));
    }
    let ends: Vec<TrialEnd<T>> = (0..config.n_trials)
        .into_par_iter()
        .map(|trial| run_trial(panel, dims, &state0, config, trial))
        .collect();
    let summaries: Vec<TrialSummary> = ends.iter().enumerate().map(|(i, e)| summarize(i, e)).collect();

    let mut best: Option<(usize, f64)> = None;
    for (i, s) in summaries.iter().enumerate() {
        if let Some(ll) = s.loglik {
            if best.is_none_or(|(_, b)| ll > b) {
                best = Some((i, ll));
            }
        }
    }
    let Some((winner, _)) = best else {
        return Err(Error::FitFailure(summaries));
    };
    let TrialEnd::Done(outcome) = ends.into_iter().nth(winner).expect("winner index in range") else {
        unreachable!("only completed trials carry a likelihood")
    };
    let o = *outcome;

    let mut foc = Vec::with_capacity(dims.len());
    for (j, lambda) in o.params.loadings.iter().enumerate() {
        let w = o.probs.marginal.column(j).into_owned();
        let res = match weighted_covariance(panel, &w) {
            Ok(s) => foc_residual(&s, lambda, o.params.sigma2).as_f64(),
            Err(_) => f64::NAN,
        };
        foc.push(res);
    }
    let factors = posterior_factors(panel, &o.params, &o.probs)?;
    Ok(FitResult {
        params: o.params,
        state: o.state,
        probs: o.probs,
        factors,
        loglik_trace: o.trace,
        iterations: o.iterations,
        converged: o.converged,
        trial_index: winner,
        diagnostics: FitDiagnostics {
            trials: summaries,
            foc_residual: foc,
            eigen_ties: o.eigen_ties,
            floor_hits: o.floor_hits,
        },
    })
}

/// Default state prior for `J` regimes in static mode.
pub fn uniform_weights<T: Scalar>(j: usize) -> DVector<T> {
    DVector::from_element(j, T::one() / T::of_usize(j))
}
