//! Evaluation of fits against simulated ground truth.
//!
//! Estimated regimes are first matched to true regimes by the permutation
//! maximizing `Σ_t p_tj 1{z_t = π(j)}`. Loadings and factors are identified
//! only up to a regime-specific rotation `H_j`:
//!
//! ```text
//! W_j = (Λ̂_j'Λ̂_j/N + σ̂²/N·I) · T⁻¹Σ_t p̂_tj
//! H_j = (T⁻¹Σ_t f_t f_t' 1{z_t=j}) (Λ_j'Λ̂_j/N) W_j⁻¹
//! ```
//!
//! so that `Λ̂_j ≈ Λ_j H_j` and `f̂_t ≈ H_{z_t}⁻¹ f_t`.
//!
//! R² values are uncentered projection R²: `‖P_B A‖²_F / ‖A‖²_F` for the
//! projection of `A` on the column space of `B`. Everything here works in
//! `f64` regardless of the scalar type of the fit.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::em_dynamic::{estimate_transition, fit_dynamic};
use crate::em_static::fit_static;
use crate::error::{Error, Result};
use crate::fit::{FitConfig, Sigma2Mode};
use crate::model::{FitResult, MarkovChain};
use crate::scalar::Scalar;
use crate::simulate::{self, Dgp, Pattern, SimConfig, SimTruth};

fn to64<T: Scalar>(m: &DMatrix<T>) -> DMatrix<f64> {
    m.map(|v| v.as_f64())
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

/// Permutation `perm` with `perm[fitted] = true` maximizing the overlap
/// `Σ_t p_tj 1{z_t = perm[j]}`. Ties go to the lexicographically smallest
/// permutation, so the identity wins when nothing distinguishes regimes.
pub fn match_labels(states: &[usize], probs: &DMatrix<f64>) -> Result<Vec<usize>> {
    let j = probs.ncols();
    if states.len() != probs.nrows() {
        return Err(Error::invalid(format!(
            "{} labels for {} periods of probabilities",
            states.len(),
            probs.nrows()
        )));
    }
    if let Some(&bad) = states.iter().find(|&&z| z >= j) {
        return Err(Error::invalid(format!("label {} exceeds the {j} fitted regimes", bad + 1)));
    }
    if j > 8 {
        return Err(Error::invalid("label matching enumerates permutations; at most 8 regimes"));
    }
    // overlap[(fitted, true)]
    let mut overlap = DMatrix::<f64>::zeros(j, j);
    for (t, &z) in states.iter().enumerate() {
        for a in 0..j {
            overlap[(a, z)] += probs[(t, a)];
        }
    }
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for p in permutations(j) {
        let score: f64 = p.iter().enumerate().map(|(a, &b)| overlap[(a, b)]).sum();
        if score > best.0 + 1e-12 {
            best = (score, p);
        }
    }
    Ok(best.1)
}

/// Relabels the fit's regimes to match the true ones.
pub fn align<T: Scalar>(truth: &SimTruth<T>, fit: &FitResult<T>) -> Result<FitResult<T>> {
    let perm = match_labels(&truth.states, &to64(&fit.probs.marginal))?;
    Ok(fit.permuted(&perm))
}

/// Regime-specific rotation matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationSet {
    pub w: Vec<DMatrix<f64>>,
    pub h: Vec<DMatrix<f64>>,
}

/// Smallest eigenvalue of `W` accepted as invertible.
pub const W_MIN_EIGENVALUE: f64 = 1e-10;

/// Rotation matrices for an aligned fit (see [`align`]).
pub fn compute_rotations<T: Scalar>(truth: &SimTruth<T>, fit: &FitResult<T>) -> Result<RotationSet> {
    let j_count = truth.loadings.len();
    if fit.params.n_regimes() != j_count {
        return Err(Error::invalid(format!(
            "fit has {} regimes, truth has {j_count}",
            fit.params.n_regimes()
        )));
    }
    let (n_t, n) = (truth.panel.n_periods(), truth.panel.n_series());
    if fit.probs.n_periods() != n_t || fit.params.n_series() != n {
        return Err(Error::invalid("fit and truth dimensions differ"));
    }
    let f0 = to64(&truth.factors);
    let sigma2 = fit.params.sigma2.as_f64();
    let (nf, tf) = (n as f64, n_t as f64);
    let mut w_all = Vec::with_capacity(j_count);
    let mut h_all = Vec::with_capacity(j_count);
    for j in 0..j_count {
        let lam_hat = to64(&fit.params.loadings[j]);
        let lam0 = to64(&truth.loadings[j]);
        let r = lam_hat.ncols();
        if lam0.ncols() != r {
            return Err(Error::invalid(format!(
                "regime {}: fitted {r} factors, true {}",
                j + 1,
                lam0.ncols()
            )));
        }
        let pbar = (0..n_t).map(|t| fit.probs.marginal[(t, j)].as_f64()).sum::<f64>() / tf;
        let w = (lam_hat.tr_mul(&lam_hat) / nf + DMatrix::identity(r, r) * (sigma2 / nf)) * pbar;
        let min_eig = w.clone().symmetric_eigenvalues().min();
        if !(min_eig > W_MIN_EIGENVALUE) {
            return Err(Error::DegenerateFit(format!(
                "regime {}: W has smallest eigenvalue {min_eig:e}",
                j + 1
            )));
        }
        let w_inv = w
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::DegenerateFit(format!("regime {}: W is singular", j + 1)))?;
        let mut sf = DMatrix::<f64>::zeros(r, r);
        for t in 0..n_t {
            if truth.states[t] == j {
                let f = f0.row(t);
                sf += f.transpose() * f;
            }
        }
        sf /= tf;
        let h = sf * (lam0.tr_mul(&lam_hat) / nf) * w_inv;
        w_all.push(w);
        h_all.push(h);
    }
    Ok(RotationSet { w: w_all, h: h_all })
}

/// `‖Λ̂_j − Λ_j H_j‖_F / √N` per regime.
pub fn rotation_residual<T: Scalar>(truth: &SimTruth<T>, fit: &FitResult<T>, rot: &RotationSet) -> Vec<f64> {
    let n = truth.panel.n_series() as f64;
    (0..rot.h.len())
        .map(|j| (to64(&fit.params.loadings[j]) - to64(&truth.loadings[j]) * &rot.h[j]).norm() / n.sqrt())
        .collect()
}

/// Uncentered R² of the projection of `target`'s columns on the column
/// space of `basis`.
pub fn projection_r2(target: &DMatrix<f64>, basis: &DMatrix<f64>) -> Result<f64> {
    if target.nrows() != basis.nrows() {
        return Err(Error::invalid("projection needs matching row counts"));
    }
    if basis.ncols() == 0 || basis.ncols() > basis.nrows() {
        return Err(Error::invalid("projection basis is rank deficient"));
    }
    let sv = basis.clone().svd(false, false).singular_values;
    if !(sv.min() > 1e-10 * sv.max().max(1e-300)) {
        return Err(Error::invalid("projection basis is rank deficient"));
    }
    let total = target.norm_squared();
    if total == 0.0 {
        return Err(Error::invalid("projected matrix is zero"));
    }
    let gram = basis.tr_mul(basis);
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::invalid("projection basis is rank deficient"))?;
    let coef = chol.solve(&basis.tr_mul(target));
    let fitted = basis * coef;
    Ok((fitted.norm_squared() / total).clamp(0.0, 1.0))
}

/// R² of the fitted regime-`j` loadings on the true ones.
pub fn r2_loading_space<T: Scalar>(truth: &SimTruth<T>, fit: &FitResult<T>, j: usize) -> Result<f64> {
    if j >= truth.loadings.len() || j >= fit.params.n_regimes() {
        return Err(Error::invalid(format!("no regime {}", j + 1)));
    }
    projection_r2(&to64(&fit.params.loadings[j]), &to64(&truth.loadings[j]))
}

/// R² of the fitted factors on the true factors (`rotations = None`) or on
/// `H_{z_t}⁻¹ f_t`.
pub fn r2_factors<T: Scalar>(truth: &SimTruth<T>, fit: &FitResult<T>, rotations: Option<&RotationSet>) -> Result<f64> {
    let f_hat = to64(&fit.factors);
    let f0 = to64(&truth.factors);
    let basis = match rotations {
        None => f0,
        Some(rot) => {
            let inv: Vec<DMatrix<f64>> = rot
                .h
                .iter()
                .map(|h| h.clone().try_inverse().ok_or_else(|| Error::DegenerateFit("H is singular".into())))
                .collect::<Result<_>>()?;
            let r = f0.ncols();
            let mut g = DMatrix::zeros(f0.nrows(), r);
            for t in 0..f0.nrows() {
                let hinv = &inv[truth.states[t]];
                if hinv.nrows() != r {
                    return Err(Error::invalid("rotation and factor dimensions differ"));
                }
                let row = hinv * f0.row(t).transpose();
                g.set_row(t, &row.transpose());
            }
            g
        }
    };
    projection_r2(&f_hat, &basis)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    /// Mean over t of `½ Σ_j |p_tj − 1{z_t=j}|`; for two regimes this is
    /// `|p_t2 − 1{z_t=2}|`.
    pub mean_abs_error: f64,
    pub sup_abs_error: f64,
    /// Inclusive 0-based spans where the thresholded labels are wrong.
    pub misclassified_spans: Vec<(usize, usize)>,
    /// Labels from the hysteresis rule (two regimes) or argmax.
    pub labels: Vec<usize>,
}

/// Classification accuracy of aligned probabilities. `thresholds` is the
/// `(enter, exit)` pair of the hysteresis rule applied to regime 2 when
/// there are two regimes.
pub fn classification_report(
    states: &[usize],
    probs: &DMatrix<f64>,
    thresholds: (f64, f64),
) -> Result<ClassificationReport> {
    let (n_t, j) = (probs.nrows(), probs.ncols());
    if states.len() != n_t || n_t == 0 {
        return Err(Error::invalid("labels and probabilities differ in length"));
    }
    if states.iter().any(|&z| z >= j) {
        return Err(Error::invalid("label outside the fitted regimes"));
    }
    let errs: Vec<f64> = (0..n_t)
        .map(|t| 0.5 * (0..j).map(|a| (probs[(t, a)] - f64::from(u8::from(states[t] == a))).abs()).sum::<f64>())
        .collect();
    let mean_abs_error = errs.iter().sum::<f64>() / n_t as f64;
    let sup_abs_error = errs.iter().copied().fold(0.0, f64::max);
    let labels = if j == 2 {
        let cfg = crate::detect::DetectorConfig {
            d: 0,
            enter_threshold: thresholds.0,
            exit_threshold: thresholds.1,
            initial_phase: if states[0] == 1 {
                crate::detect::Phase::Regime2
            } else {
                crate::detect::Phase::Regime1
            },
        };
        let p2: Vec<f64> = probs.column(1).iter().copied().collect();
        let tp = crate::detect::detect_turning_points(&p2, &cfg)?;
        crate::detect::labels_from_turning_points(n_t, &tp, cfg.initial_phase)
    } else {
        (0..n_t).map(|t| probs.row(t).transpose().argmax().0).collect()
    };
    let mut spans = Vec::new();
    let mut start = None;
    for t in 0..=n_t {
        let wrong = t < n_t && labels[t] != states[t];
        match (wrong, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                spans.push((s, t - 1));
                start = None;
            }
            _ => {}
        }
    }
    Ok(ClassificationReport {
        mean_abs_error,
        sup_abs_error,
        misclassified_spans: spans,
        labels,
    })
}

/// Which estimate to study in [`standardized_estimates`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// Component `component` of `λ̂_{j,i} − H_j'λ_{j,i}`.
    Loading { i: usize, regime: usize, component: usize },
    /// Component `component` of `f̂_t − H_{z_t}⁻¹ f_t`.
    Factor { t: usize, component: usize },
}

/// Minimum number of replications for [`standardized_estimates`].
pub const MIN_REPLICATIONS: usize = 30;

/// Estimation error of one aligned replication.
pub fn estimation_error<T: Scalar>(truth: &SimTruth<T>, fit: &FitResult<T>, target: Target) -> Result<f64> {
    let rot = compute_rotations(truth, fit)?;
    match target {
        Target::Loading { i, regime, component } => {
            let lam_hat = to64(&fit.params.loadings.get(regime).ok_or_else(|| Error::invalid("no such regime"))?.clone());
            let lam0 = to64(&truth.loadings[regime]);
            if i >= lam0.nrows() || component >= lam0.ncols() {
                return Err(Error::invalid("loading target out of range"));
            }
            let rotated = rot.h[regime].transpose() * lam0.row(i).transpose();
            Ok(lam_hat[(i, component)] - rotated[component])
        }
        Target::Factor { t, component } => {
            if t >= truth.states.len() || component >= truth.factors.ncols() {
                return Err(Error::invalid("factor target out of range"));
            }
            let h = &rot.h[truth.states[t]];
            let hinv = h.clone().try_inverse().ok_or_else(|| Error::DegenerateFit("H is singular".into()))?;
            let f0: DVector<f64> = to64(&truth.factors).row(t).transpose();
            let rotated = hinv * f0;
            Ok(fit.factors[(t, component)].as_f64() - rotated[component])
        }
    }
}

/// Standardizes a sample by its own mean and standard deviation (`n − 1`
/// denominator).
pub fn standardize(sample: &[f64]) -> Result<Vec<f64>> {
    if sample.len() < 2 {
        return Err(Error::InsufficientSample("need at least two values".into()));
    }
    let m = Moments::of(sample);
    if !(m.std > 0.0) {
        return Err(Error::invalid("sample has zero variance"));
    }
    Ok(sample.iter().map(|v| (v - m.mean) / m.std).collect())
}

/// Standardized estimation errors across replications. Fits are aligned
/// to the truth before the rotation is computed.
pub fn standardized_estimates<T: Scalar>(pairs: &[(SimTruth<T>, FitResult<T>)], target: Target) -> Result<Vec<f64>> {
    if pairs.len() < MIN_REPLICATIONS {
        return Err(Error::InsufficientSample(format!(
            "{} replications, need at least {MIN_REPLICATIONS}",
            pairs.len()
        )));
    }
    let errors = pairs
        .iter()
        .map(|(truth, fit)| estimation_error(truth, &align(truth, fit)?, target))
        .collect::<Result<Vec<f64>>>()?;
    standardize(&errors)
}

/// Sample moments with `n − 1` variance and the moment-ratio skewness and
/// excess kurtosis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

impl Moments {
    pub fn of(sample: &[f64]) -> Self {
        let n = sample.len();
        let nf = n as f64;
        let mean = sample.iter().sum::<f64>() / nf;
        let central = |k: i32| sample.iter().map(|v| (v - mean).powi(k)).sum::<f64>() / nf;
        let m2 = central(2);
        let std = if n > 1 { (m2 * nf / (nf - 1.0)).sqrt() } else { 0.0 };
        let (skewness, excess_kurtosis) = if m2 > 0.0 {
            (central(3) / m2.powf(1.5), central(4) / (m2 * m2) - 3.0)
        } else {
            (0.0, 0.0)
        };
        Moments {
            n,
            mean,
            std,
            skewness,
            excess_kurtosis,
        }
    }
}

/// Metrics of one aligned replication.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ReplicationMetrics {
    pub r2_loadings: Vec<f64>,
    pub r2_f: f64,
    pub r2_hf: f64,
    pub class_error: f64,
    /// `(|Q̃₁₁ − Q₁₁|, |Q̃₂₂ − Q₂₂|)` when a reference chain is given and the
    /// fit has pairwise probabilities.
    pub q_error: Option<(f64, f64)>,
    pub rotation_residual: Vec<f64>,
}

/// Full evaluation of one fit. The fit is aligned first. `reference_q` is
/// the column-stochastic transition matrix to compare against.
pub fn evaluate_replication<T: Scalar>(
    truth: &SimTruth<T>,
    fit: &FitResult<T>,
    reference_q: Option<&DMatrix<f64>>,
) -> Result<ReplicationMetrics> {
    let fit = align(truth, fit)?;
    let rot = compute_rotations(truth, &fit)?;
    let r2_loadings = (0..truth.loadings.len())
        .map(|j| r2_loading_space(truth, &fit, j))
        .collect::<Result<Vec<_>>>()?;
    let r2_f = r2_factors(truth, &fit, None)?;
    let r2_hf = r2_factors(truth, &fit, Some(&rot))?;
    let class = classification_report(&truth.states, &to64(&fit.probs.marginal), (0.9, 0.1))?;
    let q_error = match (reference_q, &fit.probs.pairwise) {
        (Some(q0), Some(_)) if q0.nrows() >= 2 => {
            let chain = estimate_transition(&fit.probs)?;
            let q = to64(&chain.transition);
            Some(((q[(0, 0)] - q0[(0, 0)]).abs(), (q[(1, 1)] - q0[(1, 1)]).abs()))
        }
        _ => None,
    };
    Ok(ReplicationMetrics {
        r2_loadings,
        r2_f,
        r2_hf,
        class_error: class.mean_abs_error,
        q_error,
        rotation_residual: rotation_residual(truth, &fit, &rot),
    })
}

/// Empirical column-stochastic transition frequencies of a label sequence.
pub fn empirical_transition(states: &[usize], j: usize) -> DMatrix<f64> {
    let mut counts = DMatrix::<f64>::zeros(j, j);
    for w in states.windows(2) {
        counts[(w[1], w[0])] += 1.0;
    }
    for k in 0..j {
        let s = counts.column(k).sum();
        if s > 0.0 {
            counts.column_mut(k).scale_mut(1.0 / s);
        }
    }
    counts
}

/// Transition matrix that the `Q` errors are measured against: the
/// chain's own for pattern 4, the empirical frequencies of the label
/// sequence for pattern 1, none otherwise.
pub fn reference_transition<T: Scalar>(pattern: Pattern, truth: &SimTruth<T>) -> Option<DMatrix<f64>> {
    match pattern {
        Pattern::Markov => Some(simulate::cycle_chain().transition),
        Pattern::BusinessCycle => Some(empirical_transition(&truth.states, 2)),
        _ => None,
    }
}

/// Estimation settings shared by Monte Carlo runs.
#[derive(Debug, Clone, PartialEq)]
pub struct McFitSettings {
    /// `None` estimates σ²; the default holds it at 1.
    pub sigma2: Option<f64>,
    /// Fixed regime weights of the static E-step.
    pub q: Vec<f64>,
    /// `(Q₁₁, Q₂₂)` and `φ` of the Markov E-step.
    pub stay: (f64, f64),
    pub initial: Vec<f64>,
    pub tol: f64,
    pub max_iter: usize,
    /// Restarts; `None` picks by pattern (30 / 5 / 5 / 15).
    pub n_trials: Option<usize>,
}

impl Default for McFitSettings {
    fn default() -> Self {
        McFitSettings {
            sigma2: Some(1.0),
            q: vec![0.5, 0.5],
            stay: (0.95, 0.72),
            initial: vec![0.5, 0.5],
            tol: 1e-7,
            max_iter: 500,
            n_trials: None,
        }
    }
}

/// Default number of restarts per pattern.
pub fn default_trials(pattern: Pattern) -> usize {
    match pattern {
        Pattern::BusinessCycle => 30,
        Pattern::SingleBreak | Pattern::TwoBreaks => 5,
        Pattern::Markov => 15,
    }
}

/// Fits a simulated panel with the static (`smoothed = false`) or Markov
/// estimator.
pub fn fit_simulated(
    truth: &SimTruth<f64>,
    pattern: Pattern,
    smoothed: bool,
    settings: &McFitSettings,
    seed: u64,
) -> Result<FitResult<f64>> {
    let r = truth.factors.ncols();
    let j = truth.loadings.len();
    let config = FitConfig {
        n_trials: settings.n_trials.unwrap_or_else(|| default_trials(pattern)),
        tol: settings.tol,
        max_iter: settings.max_iter,
        sigma2: settings.sigma2.map_or(Sigma2Mode::default(), Sigma2Mode::Fixed),
        seed,
        ..FitConfig::default()
    };
    let dims = vec![r; j];
    if smoothed {
        let chain = MarkovChain::two_state(settings.stay.0, settings.stay.1, DVector::from_vec(settings.initial.clone()))?;
        fit_dynamic(&truth.panel, &dims, &chain, &config)
    } else {
        fit_static(&truth.panel, &dims, &DVector::from_vec(settings.q.clone()), &config)
    }
}

/// Mixes three integers into a seed (SplitMix64 finalizer).
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One cell of the Monte Carlo grid.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Table1Cell {
    pub dgp: u8,
    pub pattern: u8,
    pub smoothed: bool,
    pub n: usize,
    pub t: usize,
    #[serde(default)]
    pub rho: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table1Config {
    pub cells: Vec<Table1Cell>,
    pub replications: usize,
    pub seed: u64,
    pub fit: McFitSettings,
}

/// Averages over the successful replications of one cell.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Table1Row {
    pub cell: Table1Cell,
    pub replications: usize,
    pub failed: usize,
    pub r2_l1: f64,
    pub r2_l2: f64,
    pub r2_f: f64,
    pub r2_hf: f64,
    pub class_error: f64,
    /// Only for patterns 1 and 4.
    pub q11_error: Option<f64>,
    pub q22_error: Option<f64>,
}

impl Table1Row {
    pub const HEADER: [&'static str; 17] = [
        "dgp", "pattern", "smoothed", "N", "T", "rho", "alpha", "beta", "replications", "failed", "R2_l1", "R2_l2",
        "R2_f", "R2_Hf", "class_error", "Q11_error", "Q22_error",
    ];

    pub fn record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map_or("N.A.".to_string(), |x| x.to_string());
        let c = &self.cell;
        vec![
            c.dgp.to_string(),
            c.pattern.to_string(),
            c.smoothed.to_string(),
            c.n.to_string(),
            c.t.to_string(),
            c.rho.to_string(),
            c.alpha.to_string(),
            c.beta.to_string(),
            self.replications.to_string(),
            self.failed.to_string(),
            self.r2_l1.to_string(),
            self.r2_l2.to_string(),
            self.r2_f.to_string(),
            self.r2_hf.to_string(),
            self.class_error.to_string(),
            opt(self.q11_error),
            opt(self.q22_error),
        ]
    }
}

/// Simulation settings of replication `rep` in a cell.
pub fn cell_sim_config(cell: &Table1Cell, base_seed: u64, cell_index: usize, rep: usize) -> Result<SimConfig> {
    Ok(SimConfig {
        n: cell.n,
        t: cell.t,
        dgp: Dgp::from_index(cell.dgp)?,
        rho: cell.rho,
        alpha: cell.alpha,
        beta: cell.beta,
        pattern: Pattern::from_index(cell.pattern)?,
        seed: derive_seed(base_seed, cell_index as u64, 2 * rep as u64),
        ..SimConfig::default()
    })
}

/// Simulates and fits one replication.
pub fn run_replication(
    cell: &Table1Cell,
    settings: &McFitSettings,
    base_seed: u64,
    cell_index: usize,
    rep: usize,
) -> Result<(SimTruth<f64>, FitResult<f64>)> {
    let sim = cell_sim_config(cell, base_seed, cell_index, rep)?;
    let truth = simulate::simulate_panel::<f64>(&sim)?;
    let fit_seed = derive_seed(base_seed, cell_index as u64, 2 * rep as u64 + 1);
    let fit = fit_simulated(&truth, sim.pattern, cell.smoothed, settings, fit_seed)?;
    Ok((truth, fit))
}

/// Replication metrics for one cell, in replication order; failures are
/// kept as errors.
pub fn run_cell(
    cell: &Table1Cell,
    cell_index: usize,
    replications: usize,
    seed: u64,
    settings: &McFitSettings,
) -> Result<Vec<Result<ReplicationMetrics>>> {
    let pattern = Pattern::from_index(cell.pattern)?;
    Dgp::from_index(cell.dgp)?;
    Ok((0..replications)
        .into_par_iter()
        .map(|rep| {
            let (truth, fit) = run_replication(cell, settings, seed, cell_index, rep)?;
            let q0 = reference_transition(pattern, &truth);
            evaluate_replication(&truth, &fit, q0.as_ref())
        })
        .collect())
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Runs the whole grid.
pub fn table1_run(config: &Table1Config) -> Result<Vec<Table1Row>> {
    if config.replications == 0 {
        return Err(Error::invalid("need at least one replication"));
    }
    let mut rows = Vec::with_capacity(config.cells.len());
    for (ci, cell) in config.cells.iter().enumerate() {
        let results = run_cell(cell, ci, config.replications, config.seed, &config.fit)?;
        let ok: Vec<&ReplicationMetrics> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
        for e in results.iter().filter_map(|r| r.as_ref().err()) {
            log::warn!("cell {ci}: replication failed: {e}");
        }
        let show_q = matches!(cell.pattern, 1 | 4) && cell.smoothed;
        let q = |k: usize| {
            show_q.then(|| mean(ok.iter().filter_map(|m| m.q_error.map(|q| if k == 0 { q.0 } else { q.1 }))))
        };
        rows.push(Table1Row {
            cell: cell.clone(),
            replications: config.replications,
            failed: results.len() - ok.len(),
            r2_l1: mean(ok.iter().map(|m| m.r2_loadings[0])),
            r2_l2: mean(ok.iter().map(|m| m.r2_loadings.get(1).copied().unwrap_or(f64::NAN))),
            r2_f: mean(ok.iter().map(|m| m.r2_f)),
            r2_hf: mean(ok.iter().map(|m| m.r2_hf)),
            class_error: mean(ok.iter().map(|m| m.class_error)),
            q11_error: q(0),
            q22_error: q(1),
        });
    }
    Ok(rows)
}

/// Writes rows as CSV with [`Table1Row::HEADER`].
pub fn write_table1_csv<W: std::io::Write>(rows: &[Table1Row], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(Table1Row::HEADER).map_err(io)?;
    for r in rows {
        w.write_record(r.record()).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn permutations_are_complete() {
        let p = permutations(3);
        assert_eq!(p.len(), 6);
        assert_eq!(p[0], vec![0, 1, 2]);
    }

    #[test]
    fn label_matching_swaps() {
        let states = [0, 0, 1, 1];
        let probs = DMatrix::from_row_slice(4, 2, &[0.1, 0.9, 0.2, 0.8, 0.9, 0.1, 0.7, 0.3]);
        assert_eq!(match_labels(&states, &probs).unwrap(), vec![1, 0]);
        let flat = DMatrix::from_element(4, 2, 0.5);
        assert_eq!(match_labels(&states, &flat).unwrap(), vec![0, 1]);
    }

    #[test]
    fn projection_r2_cases() {
        let b = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, -1.0]);
        let mix = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, -1.0, 3.0]);
        assert_relative_eq!(projection_r2(&(&b * mix), &b).unwrap(), 1.0, epsilon = 1e-12);
        // orthogonal complement of the columns of b
        let c = DMatrix::from_column_slice(4, 1, &[-1.0, -1.0, 1.0, 0.0]);
        assert_eq!(b.tr_mul(&c).norm(), 0.0);
        assert_relative_eq!(projection_r2(&c, &b).unwrap(), 0.0, epsilon = 1e-12);
        let rank1 = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(projection_r2(&c.rows(0, 3).into_owned(), &rank1).is_err());
    }

    #[test]
    fn classification_extremes() {
        let states = [0, 0, 1, 1, 0];
        let ind = indicators(&states);
        let r = classification_report(&states, &ind, (0.9, 0.1)).unwrap();
        assert_eq!(r.mean_abs_error, 0.0);
        assert!(r.misclassified_spans.is_empty());
        let flipped = ind.map(|v| 1.0 - v);
        let r = classification_report(&states, &flipped, (0.9, 0.1)).unwrap();
        assert_eq!(r.mean_abs_error, 1.0);
        assert_eq!(r.sup_abs_error, 1.0);
        assert_eq!(r.misclassified_spans, vec![(0, 4)]);
    }

    fn indicators(states: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(states.len(), 2, |t, j| f64::from(u8::from(states[t] == j)))
    }

    #[test]
    fn moments_and_standardize() {
        let m = Moments::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert_relative_eq!(m.std, (5.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_eq!(m.skewness, 0.0);
        let z = standardize(&[3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0]).unwrap();
        let mz = Moments::of(&z);
        assert_relative_eq!(mz.mean, 0.0, epsilon = 1e-15);
        assert_relative_eq!(mz.std, 1.0, epsilon = 1e-15);
        assert!(standardize(&[2.0; 40]).is_err());
    }

    #[test]
    fn empirical_transition_counts() {
        let q = empirical_transition(&[0, 0, 1, 1, 1, 0, 0, 0, 1, 0], 2);
        assert_relative_eq!(q[(0, 0)], 0.6, epsilon = 1e-15);
        assert_relative_eq!(q[(1, 1)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0, 0), derive_seed(1, 0, 1));
        assert_ne!(derive_seed(1, 1, 0), derive_seed(1, 0, 1));
        assert_eq!(derive_seed(5, 3, 2), derive_seed(5, 3, 2));
    }
}
