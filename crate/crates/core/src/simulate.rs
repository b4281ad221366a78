//! Synthetic panels with regime-switching loadings.
//!
//! Factors and idiosyncratic errors are stationary AR(1) processes; errors
//! are cross-sectionally correlated with `Ω_ij = β^{|i-j|}`. Loading
//! variances are calibrated to a target regression R². Four regime
//! patterns are available: the NBER quarterly business cycle 1945Q2–2020Q1,
//! a single break at `T/2`, two breaks at `T/3` and `2T/3` with a switch
//! back, and a two-state Markov chain.
//!
//! Randomness comes from `ChaCha20Rng::seed_from_u64(seed)` with normal
//! draws from `rand_distr::StandardNormal`, so seeds reproduce across
//! platforms.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{MarkovChain, Panel};
use crate::scalar::Scalar;

/// NBER quarterly expansion (1) / recession (2) labels, 1945Q2–2020Q1.
pub const NBER_QUARTERLY_CSV: &str = include_str!("../data/nber_quarterly_1945q2_2020q1.csv");

/// Staying probabilities of the business-cycle chain used by pattern 4.
pub const CYCLE_STAY: (f64, f64) = (0.95, 0.72);

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Dgp {
    /// Two factors, both loading columns switch.
    TwoFactorsBothSwitch,
    /// Two factors, only the second loading column switches.
    TwoFactorsSecondSwitches,
    /// One factor whose loadings switch.
    OneFactor,
}

impl Dgp {
    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            1 => Ok(Dgp::TwoFactorsBothSwitch),
            2 => Ok(Dgp::TwoFactorsSecondSwitches),
            3 => Ok(Dgp::OneFactor),
            _ => Err(Error::invalid(format!("dgp must be 1, 2 or 3, got {i}"))),
        }
    }

    pub fn index(self) -> u8 {
        match self {
            Dgp::TwoFactorsBothSwitch => 1,
            Dgp::TwoFactorsSecondSwitches => 2,
            Dgp::OneFactor => 3,
        }
    }

    pub fn n_factors(self) -> usize {
        match self {
            Dgp::OneFactor => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Pattern {
    /// NBER business cycle, `T = 300`.
    BusinessCycle,
    /// Regime 2 after `⌊T/2⌋`.
    SingleBreak,
    /// Regime 2 on `(⌊T/3⌋, ⌊2T/3⌋]`.
    TwoBreaks,
    /// Markov chain with staying probabilities [`CYCLE_STAY`].
    Markov,
}

impl Pattern {
    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            1 => Ok(Pattern::BusinessCycle),
            2 => Ok(Pattern::SingleBreak),
            3 => Ok(Pattern::TwoBreaks),
            4 => Ok(Pattern::Markov),
            _ => Err(Error::invalid(format!("pattern must be 1..=4, got {i}"))),
        }
    }

    pub fn index(self) -> u8 {
        match self {
            Pattern::BusinessCycle => 1,
            Pattern::SingleBreak => 2,
            Pattern::TwoBreaks => 3,
            Pattern::Markov => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub t: usize,
    pub dgp: Dgp,
    pub rho: f64,
    pub alpha: f64,
    pub beta: f64,
    pub r2: f64,
    pub pattern: Pattern,
    pub seed: u64,
    /// Multiplies the idiosyncratic errors; 1 in normal use.
    pub noise_scale: f64,
    /// 0-based regime labels replacing the pattern's own sequence.
    pub labels: Option<Vec<usize>>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 100,
            t: 300,
            dgp: Dgp::TwoFactorsBothSwitch,
            rho: 0.0,
            alpha: 0.0,
            beta: 0.0,
            r2: 0.5,
            pattern: Pattern::SingleBreak,
            seed: 0,
            noise_scale: 1.0,
            labels: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t < 2 {
            return Err(Error::invalid("need N >= 1 and T >= 2"));
        }
        for (name, v) in [("rho", self.rho), ("alpha", self.alpha)] {
            if !(v.abs() < 1.0) {
                return Err(Error::invalid(format!("|{name}| must be < 1, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::invalid(format!("beta must lie in [0,1), got {}", self.beta)));
        }
        if !(self.r2 > 0.0 && self.r2 < 1.0) {
            return Err(Error::invalid(format!("r2 must lie in (0,1), got {}", self.r2)));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::invalid("noise_scale must be nonnegative"));
        }
        Ok(())
    }
}

/// How the regime sequence was produced.
#[derive(Debug, Clone, PartialEq)]
pub enum PatternMeta {
    /// Fixed label sequence (NBER chronology or user file).
    Labels,
    /// 0-based indices of the first period of each new segment.
    Breaks(Vec<usize>),
    /// Column-stochastic transition matrix of the simulated chain.
    Markov(DMatrix<f64>),
}

/// Simulated panel plus everything needed to evaluate a fit against it.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth<T: Scalar> {
    pub panel: Panel<T>,
    /// `T × r` true factors.
    pub factors: DMatrix<T>,
    /// `N × r` true loadings per regime.
    pub loadings: Vec<DMatrix<T>>,
    /// 0-based regime label per period.
    pub states: Vec<usize>,
    pub pattern_meta: PatternMeta,
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Independent stationary AR(1) factor columns, `f_t = ρ f_{t-1} + ε_t`.
pub fn gen_factors(t: usize, r: usize, rho: f64, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
    if !(rho.abs() < 1.0) {
        return Err(Error::invalid(format!("|rho| must be < 1, got {rho}")));
    }
    let mut f = DMatrix::zeros(t, r);
    let sd0 = 1.0 / (1.0 - rho * rho).sqrt();
    for p in 0..r {
        for s in 0..t {
            let e = normal(rng);
            f[(s, p)] = if s == 0 { sd0 * e } else { rho * f[(s - 1, p)] + e };
        }
    }
    Ok(f)
}

/// Draws `v ~ N(0, Ω)` with `Ω_ij = β^{|i-j|}` through the AR(1)
/// recursion along the cross-section.
fn toeplitz_draw(n: usize, beta: f64, rng: &mut impl Rng) -> DVector<f64> {
    let innov = (1.0 - beta * beta).sqrt();
    let mut v = DVector::zeros(n);
    for i in 0..n {
        let u = normal(rng);
        v[i] = if i == 0 { u } else { beta * v[i - 1] + innov * u };
    }
    v
}

/// Stationary AR(1) errors with Toeplitz cross-sectional correlation.
pub fn gen_errors(t: usize, n: usize, alpha: f64, beta: f64, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
    if !(alpha.abs() < 1.0) || !(0.0..1.0).contains(&beta) {
        return Err(Error::invalid(format!("need |alpha| < 1 and beta in [0,1), got {alpha}, {beta}")));
    }
    let mut e = DMatrix::zeros(t, n);
    let sd0 = 1.0 / (1.0 - alpha * alpha).sqrt();
    for s in 0..t {
        let v = toeplitz_draw(n, beta, rng);
        for i in 0..n {
            e[(s, i)] = if s == 0 { sd0 * v[i] } else { alpha * e[(s - 1, i)] + v[i] };
        }
    }
    Ok(e)
}

/// Per-entry loading variance giving the target R².
pub fn loading_variance(dgp: Dgp, rho: f64, alpha: f64, r2: f64) -> f64 {
    let base = (1.0 - rho * rho) / (1.0 - alpha * alpha) * r2 / (1.0 - r2);
    match dgp {
        Dgp::OneFactor => base,
        _ => 2.0 * base,
    }
}

/// True loadings for the two regimes.
pub fn gen_loadings(
    n: usize,
    dgp: Dgp,
    rho: f64,
    alpha: f64,
    r2: f64,
    rng: &mut impl Rng,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let sd = loading_variance(dgp, rho, alpha, r2).sqrt();
    let r = dgp.n_factors();
    let mut draw = |rows: usize, cols: usize| DMatrix::from_fn(rows, cols, |_, _| sd * normal(rng));
    Ok(match dgp {
        Dgp::TwoFactorsBothSwitch | Dgp::OneFactor => {
            let l1 = draw(n, r);
            let l2 = draw(n, r);
            (l1, l2)
        }
        Dgp::TwoFactorsSecondSwitches => {
            let l1 = draw(n, 2);
            let second = draw(n, 1);
            let mut l2 = l1.clone();
            l2.set_column(1, &second.column(0));
            (l1, l2)
        }
    })
}

/// NBER quarterly labels, 0-based (0 = expansion, 1 = recession).
pub fn nber_labels() -> Vec<usize> {
    parse_label_lines(NBER_QUARTERLY_CSV).expect("embedded label file is well formed")
}

fn parse_label_lines(text: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let field = line.rsplit(',').next().unwrap_or(line).trim();
        match field.parse::<usize>() {
            Ok(0) => {
                return Err(Error::Parse {
                    line: lineno as u64 + 1,
                    msg: "labels are 1-based".into(),
                })
            }
            Ok(v) => out.push(v - 1),
            // header line
            Err(_) if out.is_empty() => continue,
            Err(e) => {
                return Err(Error::Parse {
                    line: lineno as u64 + 1,
                    msg: format!("bad label {field:?}: {e}"),
                })
            }
        }
    }
    Ok(out)
}

/// Reads a label file: one 1-based integer label per line (an optional
/// leading `name,` column and a header line are tolerated). Returns 0-based
/// labels.
pub fn load_labels(path: &std::path::Path) -> Result<Vec<usize>> {
    parse_label_lines(&std::fs::read_to_string(path)?)
}

/// Regime sequence for a pattern.
pub fn gen_states(t: usize, pattern: Pattern, rng: &mut impl Rng) -> Result<(Vec<usize>, PatternMeta)> {
    match pattern {
        Pattern::BusinessCycle => {
            let labels = nber_labels();
            if t != labels.len() {
                return Err(Error::invalid(format!(
                    "the business-cycle pattern has {} quarters; T = {t} needs a label file",
                    labels.len()
                )));
            }
            Ok((labels, PatternMeta::Labels))
        }
        Pattern::SingleBreak => {
            let b = t / 2;
            Ok(((0..t).map(|s| usize::from(s >= b)).collect(), PatternMeta::Breaks(vec![b])))
        }
        Pattern::TwoBreaks => {
            let (b1, b2) = (t / 3, 2 * t / 3);
            Ok((
                (0..t).map(|s| usize::from(s >= b1 && s < b2)).collect(),
                PatternMeta::Breaks(vec![b1, b2]),
            ))
        }
        Pattern::Markov => {
            let chain = cycle_chain();
            let pi = chain.stationary();
            let mut z = Vec::with_capacity(t);
            let u: f64 = rng.random();
            z.push(usize::from(u >= pi[0]));
            for s in 1..t {
                let prev = z[s - 1];
                let u: f64 = rng.random();
                z.push(usize::from(u >= chain.transition[(0, prev)]));
            }
            Ok((z, PatternMeta::Markov(chain.transition)))
        }
    }
}

/// The two-state chain with staying probabilities [`CYCLE_STAY`] and its
/// stationary initial distribution.
pub fn cycle_chain() -> MarkovChain<f64> {
    let (a, b) = CYCLE_STAY;
    let pi1 = (1.0 - b) / (2.0 - a - b);
    MarkovChain::two_state(a, b, DVector::from_vec(vec![pi1, 1.0 - pi1])).expect("valid chain")
}

/// Generates a full synthetic panel. Draw order: loadings, factors,
/// errors, states.
pub fn simulate_panel<T: Scalar>(config: &SimConfig) -> Result<SimTruth<T>> {
    config.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let (l1, l2) = gen_loadings(config.n, config.dgp, config.rho, config.alpha, config.r2, &mut rng)?;
    let r = config.dgp.n_factors();
    let f = gen_factors(config.t, r, config.rho, &mut rng)?;
    let e = gen_errors(config.t, config.n, config.alpha, config.beta, &mut rng)?;
    let (states, meta) = match &config.labels {
        Some(labels) => {
            if labels.len() != config.t {
                return Err(Error::invalid(format!("{} labels for T = {}", labels.len(), config.t)));
            }
            if labels.iter().any(|&z| z > 1) {
                return Err(Error::invalid("simulated panels have two regimes; labels must be 1 or 2"));
            }
            (labels.clone(), PatternMeta::Labels)
        }
        None => gen_states(config.t, config.pattern, &mut rng)?,
    };
    let loadings = [l1, l2];
    let x = DMatrix::from_fn(config.t, config.n, |s, i| {
        let lam = &loadings[states[s]];
        let common: f64 = (0..r).map(|p| f[(s, p)] * lam[(i, p)]).sum();
        common + config.noise_scale * e[(s, i)]
    });
    let cast = |m: &DMatrix<f64>| m.map(T::of);
    Ok(SimTruth {
        panel: Panel::new(cast(&x))?,
        factors: cast(&f),
        loadings: loadings.iter().map(cast).collect(),
        states,
        pattern_meta: meta,
    })
}
