//! EM ignoring state dynamics: per-observation regime posteriors, weighted
//! principal components per regime, and the shared-variance update.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::fit::{run_em, FitConfig, Sigma2Mode, EMPTY_REGIME_MASS};
use crate::model::{log_density_matrix, log_sum_exp, FitResult, Panel, ProbSeries, ReducedRegime, RegimeParams, StateModel};
use crate::scalar::Scalar;

/// Floor on the squared column norm `μ_l − σ²` of a loading column.
pub const LOADING_NORM_FLOOR: f64 = 1e-8;

const INNER_TOL: f64 = 1e-8;
const INNER_MAX: usize = 100;

/// Posterior regime probabilities `q_j L_tj / Σ_k q_k L_tk`.
pub fn e_step_static<T: Scalar>(panel: &Panel<T>, params: &RegimeParams<T>, q: &DVector<T>) -> Result<ProbSeries<T>> {
    if q.len() != params.n_regimes() {
        return Err(Error::invalid(format!("{} weights for {} regimes", q.len(), params.n_regimes())));
    }
    let dens = log_density_matrix(panel, params)?;
    Ok(posterior_from_log_densities(&dens, q)?.0)
}

/// Posterior probabilities and the mixture log-likelihood from a `T × J`
/// matrix of log densities.
pub(crate) fn posterior_from_log_densities<T: Scalar>(
    log_dens: &DMatrix<T>,
    q: &DVector<T>,
) -> Result<(ProbSeries<T>, T)> {
    let j = q.len();
    let log_q: Vec<T> = q.iter().map(|v| v.ln()).collect();
    let mut marginal = DMatrix::zeros(log_dens.nrows(), j);
    let mut loglik = T::zero();
    for t in 0..log_dens.nrows() {
        let a: Vec<T> = (0..j).map(|k| log_dens[(t, k)] + log_q[k]).collect();
        let c = log_sum_exp(a.iter().copied());
        if !c.is_finite() {
            return Err(Error::Underflow {
                t,
                what: "every regime has zero density".into(),
            });
        }
        for k in 0..j {
            marginal[(t, k)] = (a[k] - c).exp();
        }
        loglik += c;
    }
    Ok((ProbSeries { marginal, pairwise: None }, loglik))
}

/// `S = Σ_t w_t x_t x_t' / Σ_t w_t`.
pub fn weighted_covariance<T: Scalar>(panel: &Panel<T>, weights: &DVector<T>) -> Result<DMatrix<T>> {
    if weights.len() != panel.n_periods() {
        return Err(Error::invalid(format!(
            "{} weights for {} periods",
            weights.len(),
            panel.n_periods()
        )));
    }
    if weights.iter().any(|&w| !w.is_finite() || w < T::zero()) {
        return Err(Error::invalid("weights must be finite and nonnegative"));
    }
    let total = weights.sum();
    if total.as_f64() < EMPTY_REGIME_MASS {
        return Err(Error::DegenerateWeights(format!("total weight {total:e} is zero")));
    }
    let x = panel.values();
    let mut y = x.clone();
    for (t, mut row) in y.row_iter_mut().enumerate() {
        row *= weights[t].sqrt();
    }
    let mut s = y.tr_mul(&y) / total;
    // exact symmetry
    let n = s.nrows();
    for a in 0..n {
        for b in (a + 1)..n {
            let v = (s[(a, b)] + s[(b, a)]) * T::of(0.5);
            s[(a, b)] = v;
            s[(b, a)] = v;
        }
    }
    Ok(s)
}

/// Leading eigenpairs of a symmetric matrix, in descending order.
#[derive(Debug, Clone)]
pub(crate) struct TopEigen<T: Scalar> {
    pub values: Vec<T>,
    pub vectors: DMatrix<T>,
    /// Whether the `r`-th and `(r+1)`-th eigenvalues (or two leading ones)
    /// coincide up to rounding.
    pub tie: bool,
}

pub(crate) fn top_eigen<T: Scalar>(s: &DMatrix<T>, r: usize) -> Result<TopEigen<T>> {
    let n = s.nrows();
    if r > n {
        return Err(Error::invalid(format!("requested {r} factors from a {n}x{n} matrix")));
    }
    let eig = SymmetricEigen::new(s.clone());
    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal eigenvalues keep solver order
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let scale = eig.eigenvalues.amax().max(T::one());
    let tie_tol = scale * T::of(1e-12);
    let upto = (r + 1).min(n);
    let tie = (1..upto).any(|l| (eig.eigenvalues[order[l - 1]] - eig.eigenvalues[order[l]]).abs() <= tie_tol);
    let mut vectors = DMatrix::zeros(n, r);
    for (c, &idx) in order.iter().take(r).enumerate() {
        let mut v = eig.eigenvectors.column(idx).into_owned();
        // sign: largest-magnitude entry (first on ties) is nonnegative
        let mut best = 0;
        for i in 1..n {
            if v[i].abs() > v[best].abs() {
                best = i;
            }
        }
        if v[best] < T::zero() {
            v = -v;
        }
        vectors.set_column(c, &v);
    }
    Ok(TopEigen {
        values: order.iter().take(r).map(|&i| eig.eigenvalues[i]).collect(),
        vectors,
        tie,
    })
}

/// Scales unit eigenvectors to column norms `√max(μ_l − σ², floor)`.
/// Returns the loadings and how many columns hit the floor.
pub(crate) fn scale_loadings<T: Scalar>(eig: &TopEigen<T>, sigma2: T) -> (DMatrix<T>, usize) {
    let floor = T::of(LOADING_NORM_FLOOR);
    let mut hits = 0;
    let mut out = eig.vectors.clone();
    for (l, &mu) in eig.values.iter().enumerate() {
        let excess = mu - sigma2;
        let sq = if excess < floor {
            hits += 1;
            floor
        } else {
            excess
        };
        let mut col = out.column_mut(l);
        col *= sq.sqrt();
    }
    (out, hits)
}

/// Loadings solving `SΛ = Λ(Λ'Λ + σ²I)` from the `r` largest eigenpairs of `S`.
pub fn m_step_loadings<T: Scalar>(s: &DMatrix<T>, r: usize, sigma2: T) -> Result<DMatrix<T>> {
    if s.nrows() != s.ncols() {
        return Err(Error::invalid("covariance matrix must be square"));
    }
    if r == 0 || r > s.nrows() {
        return Err(Error::invalid(format!("r = {r} must lie in 1..={}", s.nrows())));
    }
    crate::model::check_sigma2(sigma2)?;
    Ok(scale_loadings(&top_eigen(s, r)?, sigma2).0)
}

/// `σ² = tr((1/T) Σ_t x_t x_t' − Σ_j q̄_j Λ_j Λ_j') / N` with
/// `q̄_j = (1/T) Σ_t w_tj`, clamped to `[1/C², C²]`.
pub fn sigma2_update<T: Scalar>(panel: &Panel<T>, loadings: &[DMatrix<T>], weights: &DMatrix<T>, bound: T) -> T {
    let n = T::of_usize(panel.n_series());
    let t = T::of_usize(panel.n_periods());
    let total = panel.values().norm_squared() / (n * t);
    let explained = loadings
        .iter()
        .enumerate()
        .fold(T::zero(), |acc, (j, l)| acc + weights.column(j).sum() / t * l.norm_squared());
    let raw = total - explained / n;
    let lo = T::one() / (bound * bound);
    let hi = bound * bound;
    if raw.is_finite() {
        raw.max(lo).min(hi)
    } else {
        lo
    }
}

/// M-step output with bookkeeping used by the driver and tests.
#[derive(Debug, Clone)]
pub struct MStep<T: Scalar> {
    pub params: RegimeParams<T>,
    /// σ²/Λ alternations performed (0 when σ² is fixed).
    pub inner_iterations: usize,
    /// Number of eigenvector-scaling solves across all regimes.
    pub loading_solves: usize,
    pub floor_hits: usize,
    pub eigen_ties: usize,
}

/// M-step given regime probabilities, starting the σ² iteration at 1.
pub fn m_step<T: Scalar>(
    panel: &Panel<T>,
    probs: &ProbSeries<T>,
    dims: &[usize],
    sigma2_mode: Sigma2Mode<T>,
) -> Result<RegimeParams<T>> {
    Ok(m_step_with(panel, probs, dims, sigma2_mode, T::one())?.params)
}

/// M-step with an explicit starting σ² for the inner fixed-point loop.
pub fn m_step_with<T: Scalar>(
    panel: &Panel<T>,
    probs: &ProbSeries<T>,
    dims: &[usize],
    sigma2_mode: Sigma2Mode<T>,
    sigma2_start: T,
) -> Result<MStep<T>> {
    if probs.n_regimes() != dims.len() || probs.n_periods() != panel.n_periods() {
        return Err(Error::invalid("probabilities do not match panel and dims"));
    }
    let mut eigs = Vec::with_capacity(dims.len());
    for (j, &r) in dims.iter().enumerate() {
        let w = probs.marginal.column(j).into_owned();
        let s = weighted_covariance(panel, &w).map_err(|e| match e {
            Error::DegenerateWeights(m) => Error::DegenerateWeights(format!("regime {}: {m}", j + 1)),
            other => other,
        })?;
        eigs.push(top_eigen(&s, r)?);
    }
    let eigen_ties = eigs.iter().filter(|e| e.tie).count();
    let solve_all = |s2: T| -> (Vec<DMatrix<T>>, usize) {
        let mut hits = 0;
        let ls = eigs
            .iter()
            .map(|e| {
                let (l, h) = scale_loadings(e, s2);
                hits += h;
                l
            })
            .collect();
        (ls, hits)
    };
    match sigma2_mode {
        Sigma2Mode::Fixed(v) => {
            crate::model::check_sigma2(v)?;
            let (loadings, floor_hits) = solve_all(v);
            Ok(MStep {
                params: RegimeParams { loadings, sigma2: v },
                inner_iterations: 0,
                loading_solves: dims.len(),
                floor_hits,
                eigen_ties,
            })
        }
        Sigma2Mode::Estimate { bound } => {
            let (lo, hi) = sigma2_mode.bounds();
            let mut s2 = sigma2_start.max(lo).min(hi);
            let mut solves = 0;
            let mut inner = 0;
            let (mut loadings, mut hits) = solve_all(s2);
            solves += dims.len();
            while inner < INNER_MAX {
                inner += 1;
                let next = sigma2_update(panel, &loadings, &probs.marginal, bound);
                let delta = (next - s2).abs();
                s2 = next;
                (loadings, hits) = solve_all(s2);
                solves += dims.len();
                if delta.as_f64() < INNER_TOL {
                    break;
                }
            }
            Ok(MStep {
                params: RegimeParams { loadings, sigma2: s2 },
                inner_iterations: inner,
                loading_solves: solves,
                floor_hits: hits,
                eigen_ties,
            })
        }
    }
}

/// `‖SΛ − Λ(Λ'Λ + σ²I)‖_F / max(1, ‖Λ‖_F)`.
pub fn foc_residual<T: Scalar>(s: &DMatrix<T>, lambda: &DMatrix<T>, sigma2: T) -> T {
    let mut m = lambda.tr_mul(lambda);
    for l in 0..m.nrows() {
        m[(l, l)] += sigma2;
    }
    let resid = s * lambda - lambda * m;
    resid.norm() / lambda.norm().max(T::one())
}

/// EM ignoring state dynamics with mixing weights `q`.
pub fn fit_static<T: Scalar>(
    panel: &Panel<T>,
    dims: &[usize],
    q: &DVector<T>,
    config: &FitConfig<T>,
) -> Result<FitResult<T>> {
    let state = StateModel::static_weights(q.clone())?;
    run_em(panel, dims, state, config)
}

/// `q̂_j = (1/T) Σ_t p_tj`.
pub fn estimate_q<T: Scalar>(probs: &ProbSeries<T>) -> DVector<T> {
    probs.regime_mass() / T::of_usize(probs.n_periods())
}

/// Conditional factor means `Σ_j p_tj (σ²I + Λ_j'Λ_j)^{-1} Λ_j' x_t`.
pub fn estimate_factors_static<T: Scalar>(
    panel: &Panel<T>,
    params: &RegimeParams<T>,
    probs: &ProbSeries<T>,
) -> Result<DMatrix<T>> {
    posterior_factors(panel, params, probs)
}

pub(crate) fn posterior_factors<T: Scalar>(
    panel: &Panel<T>,
    params: &RegimeParams<T>,
    probs: &ProbSeries<T>,
) -> Result<DMatrix<T>> {
    params.validate()?;
    if probs.n_periods() != panel.n_periods() || probs.n_regimes() != params.n_regimes() {
        return Err(Error::invalid("probabilities do not match panel and parameters"));
    }
    if params.n_series() != panel.n_series() {
        return Err(Error::invalid("loadings do not match the panel"));
    }
    let width = params.max_dim();
    let mut out = DMatrix::zeros(panel.n_periods(), width);
    for (j, lambda) in params.loadings.iter().enumerate() {
        let reduced = ReducedRegime::new(lambda, params.sigma2)?;
        // r × T matrix of regime-j factor means
        let f = reduced.solve(&lambda.tr_mul(&panel.values().transpose()));
        for t in 0..panel.n_periods() {
            let p = probs.marginal[(t, j)];
            for l in 0..lambda.ncols() {
                out[(t, l)] += p * f[(l, t)];
            }
        }
    }
    Ok(out)
}
