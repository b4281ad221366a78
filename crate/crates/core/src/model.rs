//! Domain types and the regime-conditional Gaussian density.
//!
//! Under regime `j` the observation `x_t` is `N(0, Λ_j Λ_j' + σ² I_N)`. The
//! density is evaluated in the `r_j`-dimensional reduced form given by the
//! Woodbury identity, so nothing of size `N × N` is ever formed.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result, TrialSummary};
use crate::scalar::Scalar;

/// Tolerance used when validating that probability rows sum to one.
pub const PROB_SUM_TOL: f64 = 1e-10;

/// `T × N` panel of observations, time-major (row `t` is `x_t'`).
#[derive(Debug, Clone, PartialEq)]
pub struct Panel<T: Scalar> {
    values: DMatrix<T>,
}

impl<T: Scalar> Panel<T> {
    pub fn new(values: DMatrix<T>) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(Error::invalid(format!(
                "panel needs at least 2 periods, got {}",
                values.nrows()
            )));
        }
        if values.ncols() < 1 {
            return Err(Error::invalid("panel needs at least one series"));
        }
        if let Some((idx, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let (t, i) = (idx % values.nrows(), idx / values.nrows());
            return Err(Error::invalid(format!("non-finite panel entry at t={t}, i={i}")));
        }
        Ok(Panel { values })
    }

    /// Builds a panel from a slice of rows (one per period).
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let t = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("ragged panel rows"));
        }
        Self::new(DMatrix::from_fn(t, n, |i, j| rows[i][j]))
    }

    #[inline]
    pub fn values(&self) -> &DMatrix<T> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<T> {
        self.values
    }

    #[inline]
    pub fn n_periods(&self) -> usize {
        self.values.nrows()
    }

    #[inline]
    pub fn n_series(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, t: usize) -> DVector<T> {
        self.values.row(t).transpose()
    }

    /// Rows `start..end` as a new panel.
    pub fn periods(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_periods() {
            return Err(Error::invalid(format!(
                "period range {start}..{end} outside 0..{}",
                self.n_periods()
            )));
        }
        Self::new(self.values.rows(start, end - start).into_owned())
    }

    /// `‖x_t‖²` for every period.
    pub fn row_norms_sq(&self) -> DVector<T> {
        DVector::from_iterator(
            self.n_periods(),
            self.values.row_iter().map(|r| r.norm_squared()),
        )
    }
}

/// Loadings per regime plus the shared idiosyncratic variance.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeParams<T: Scalar> {
    pub loadings: Vec<DMatrix<T>>,
    pub sigma2: T,
}

impl<T: Scalar> RegimeParams<T> {
    pub fn new(loadings: Vec<DMatrix<T>>, sigma2: T) -> Result<Self> {
        let p = RegimeParams { loadings, sigma2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self
            .loadings
            .first()
            .map(|l| l.nrows())
            .ok_or_else(|| Error::invalid("at least one regime is required"))?;
        for (j, l) in self.loadings.iter().enumerate() {
            if l.nrows() != n {
                return Err(Error::invalid(format!(
                    "regime {j} loadings have {} rows, expected {n}",
                    l.nrows()
                )));
            }
            if l.ncols() == 0 {
                return Err(Error::invalid(format!("regime {j} has zero factors")));
            }
            if l.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("regime {j} loadings are not finite")));
            }
        }
        check_sigma2(self.sigma2)
    }

    #[inline]
    pub fn n_regimes(&self) -> usize {
        self.loadings.len()
    }

    #[inline]
    pub fn n_series(&self) -> usize {
        self.loadings[0].nrows()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.loadings.iter().map(|l| l.ncols()).collect()
    }

    pub fn max_dim(&self) -> usize {
        self.dims().into_iter().max().unwrap_or(0)
    }
}

/// Markov chain over regimes. `transition[(j, k)]` is the probability of
/// moving from state `k` to state `j`, so every column sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain<T: Scalar> {
    pub transition: DMatrix<T>,
    pub initial: DVector<T>,
}

impl<T: Scalar> MarkovChain<T> {
    /// Accepts nonnegative column-stochastic matrices; estimation routines
    /// additionally require [`MarkovChain::is_strictly_positive`].
    pub fn new(transition: DMatrix<T>, initial: DVector<T>) -> Result<Self> {
        let j = initial.len();
        if j == 0 || transition.nrows() != j || transition.ncols() != j {
            return Err(Error::invalid(format!(
                "transition matrix is {}x{} but initial distribution has {j} entries",
                transition.nrows(),
                transition.ncols()
            )));
        }
        check_prob_vector(initial.as_slice(), "initial distribution")?;
        for k in 0..j {
            let col: Vec<T> = transition.column(k).iter().copied().collect();
            check_prob_vector(&col, &format!("transition column {k}"))?;
        }
        Ok(MarkovChain {
            transition,
            initial,
        })
    }

    /// Every state equally likely to be visited next, `Q_jk = φ_k = 1/J`.
    pub fn uniform(j: usize) -> Self {
        let p = T::one() / T::of_usize(j);
        MarkovChain {
            transition: DMatrix::from_element(j, j, p),
            initial: DVector::from_element(j, p),
        }
    }

    /// Two-state chain from its staying probabilities `Q_11`, `Q_22`.
    pub fn two_state(stay1: T, stay2: T, initial: DVector<T>) -> Result<Self> {
        let one = T::one();
        let q = DMatrix::from_row_slice(2, 2, &[stay1, one - stay2, one - stay1, stay2]);
        Self::new(q, initial)
    }

    /// I.i.d. chain whose every column equals `q`.
    pub fn iid(q: &DVector<T>) -> Result<Self> {
        let j = q.len();
        Self::new(DMatrix::from_fn(j, j, |r, _| q[r]), q.clone())
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.initial.len()
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.transition.iter().all(|&v| v > T::zero()) && self.initial.iter().all(|&v| v > T::zero())
    }

    /// Stationary distribution (normalised eigenvector for eigenvalue 1),
    /// obtained by power iteration.
    pub fn stationary(&self) -> DVector<T> {
        let mut p = DVector::from_element(self.n_states(), T::one() / T::of_usize(self.n_states()));
        for _ in 0..10_000 {
            let next = &self.transition * &p;
            let diff = (&next - &p).amax();
            p = next;
            if diff < T::of(1e-15) {
                break;
            }
        }
        let s = p.sum();
        p / s
    }
}

/// Prior over regimes: i.i.d. mixing weights or a Markov chain.
#[derive(Debug, Clone, PartialEq)]
pub enum StateModel<T: Scalar> {
    Static { q: DVector<T> },
    Markov(MarkovChain<T>),
}

impl<T: Scalar> StateModel<T> {
    pub fn static_weights(q: DVector<T>) -> Result<Self> {
        check_prob_vector(q.as_slice(), "mixing weights")?;
        if q.iter().any(|&v| v <= T::zero()) {
            return Err(Error::invalid("mixing weights must be strictly positive"));
        }
        Ok(StateModel::Static { q })
    }

    pub fn n_states(&self) -> usize {
        match self {
            StateModel::Static { q } => q.len(),
            StateModel::Markov(m) => m.n_states(),
        }
    }
}

/// Regime probabilities over time.
///
/// `marginal[(t, j)]` is `Pr(z_t = j | ·)`. When present, `pairwise[t - 1]`
/// holds `Pr(z_t = j, z_{t-1} = k | ·)` at `(j, k)` for `t = 1..T-1`
/// (0-based), so it has `T - 1` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbSeries<T: Scalar> {
    pub marginal: DMatrix<T>,
    pub pairwise: Option<Vec<DMatrix<T>>>,
}

impl<T: Scalar> ProbSeries<T> {
    pub fn new(marginal: DMatrix<T>, pairwise: Option<Vec<DMatrix<T>>>) -> Result<Self> {
        let p = ProbSeries { marginal, pairwise };
        p.validate(T::of(PROB_SUM_TOL))?;
        Ok(p)
    }

    /// One-hot probabilities from 0-based labels.
    pub fn from_labels(labels: &[usize], n_regimes: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&z| z >= n_regimes) {
            return Err(Error::invalid(format!("label {bad} out of range for {n_regimes} regimes")));
        }
        let marginal =
            DMatrix::from_fn(labels.len(), n_regimes, |t, j| if labels[t] == j { T::one() } else { T::zero() });
        let pairwise = (1..labels.len())
            .map(|t| {
                DMatrix::from_fn(n_regimes, n_regimes, |j, k| {
                    if labels[t] == j && labels[t - 1] == k {
                        T::one()
                    } else {
                        T::zero()
                    }
                })
            })
            .collect();
        Ok(ProbSeries {
            marginal,
            pairwise: Some(pairwise),
        })
    }

    #[inline]
    pub fn n_periods(&self) -> usize {
        self.marginal.nrows()
    }

    #[inline]
    pub fn n_regimes(&self) -> usize {
        self.marginal.ncols()
    }

    /// Column sums `Σ_t p_tj`.
    pub fn regime_mass(&self) -> DVector<T> {
        DVector::from_iterator(self.n_regimes(), self.marginal.column_iter().map(|c| c.sum()))
    }

    /// Most probable regime per period (first index on ties).
    pub fn argmax(&self) -> Vec<usize> {
        self.marginal
            .row_iter()
            .map(|r| {
                let mut best = 0;
                for j in 1..r.len() {
                    if r[j] > r[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    /// Checks row-stochasticity, range, and pairwise/marginal consistency.
    pub fn validate(&self, tol: T) -> Result<()> {
        let j = self.n_regimes();
        if j == 0 {
            return Err(Error::invalid("probabilities have no regimes"));
        }
        for (t, row) in self.marginal.row_iter().enumerate() {
            if row.iter().any(|&v| !v.is_finite() || v < -tol || v > T::one() + tol) {
                return Err(Error::invalid(format!("probability out of [0,1] at t={t}")));
            }
            if (row.sum() - T::one()).abs() > tol {
                return Err(Error::invalid(format!("probabilities at t={t} do not sum to 1")));
            }
        }
        if let Some(pw) = &self.pairwise {
            if pw.len() + 1 != self.n_periods() {
                return Err(Error::invalid(format!(
                    "pairwise has {} slices, expected {}",
                    pw.len(),
                    self.n_periods().saturating_sub(1)
                )));
            }
            for (s, m) in pw.iter().enumerate() {
                if m.nrows() != j || m.ncols() != j {
                    return Err(Error::invalid("pairwise slice has wrong shape"));
                }
                for jj in 0..j {
                    let sum: T = m.row(jj).sum();
                    if (sum - self.marginal[(s + 1, jj)]).abs() > tol {
                        return Err(Error::invalid(format!(
                            "pairwise row sum disagrees with marginal at t={}",
                            s + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Reorders regimes: new regime `perm[j]` takes old regime `j`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let j = self.n_regimes();
        let inv = invert_perm(perm);
        let marginal = DMatrix::from_fn(self.n_periods(), j, |t, c| self.marginal[(t, inv[c])]);
        let pairwise = self.pairwise.as_ref().map(|pw| {
            pw.iter()
                .map(|m| DMatrix::from_fn(j, j, |a, b| m[(inv[a], inv[b])]))
                .collect()
        });
        ProbSeries { marginal, pairwise }
    }
}

pub(crate) fn invert_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (old, &new) in perm.iter().enumerate() {
        inv[new] = old;
    }
    inv
}

/// Diagnostics collected alongside a fit.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitDiagnostics {
    /// One entry per random restart, in trial order.
    pub trials: Vec<TrialSummary>,
    /// `‖S_j Λ_j − Λ_j(Λ_j'Λ_j + σ²I)‖_F / max(1, ‖Λ_j‖_F)` at the returned
    /// parameters, with `S_j` built from the returned probabilities.
    pub foc_residual: Vec<f64>,
    /// Near-equal eigenvalues met at the top-`r_j` boundary during the fit.
    pub eigen_ties: usize,
    /// Loading columns whose implied norm was floored (`μ_l ≤ σ²`).
    pub floor_hits: usize,
}

/// Converged estimates together with probabilities, factors and traces.
///
/// `factors` is `T × max_j r_j`; row `t` carries `Σ_j p_tj E[f_t | x_t, j]`
/// with every regime's factor vector zero-padded to the common width.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<T: Scalar> {
    pub params: RegimeParams<T>,
    pub state: StateModel<T>,
    pub probs: ProbSeries<T>,
    pub factors: DMatrix<T>,
    pub loglik_trace: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
    pub trial_index: usize,
    pub diagnostics: FitDiagnostics,
}

impl<T: Scalar> FitResult<T> {
    pub fn loglik(&self) -> T {
        *self.loglik_trace.last().expect("trace is never empty")
    }

    /// Relabels regimes: new regime `perm[j]` takes old regime `j`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let inv = invert_perm(perm);
        let loadings = inv.iter().map(|&o| self.params.loadings[o].clone()).collect();
        let state = match &self.state {
            StateModel::Static { q } => StateModel::Static {
                q: DVector::from_fn(q.len(), |j, _| q[inv[j]]),
            },
            StateModel::Markov(m) => {
                let j = m.n_states();
                StateModel::Markov(MarkovChain {
                    transition: DMatrix::from_fn(j, j, |a, b| m.transition[(inv[a], inv[b])]),
                    initial: DVector::from_fn(j, |a, _| m.initial[inv[a]]),
                })
            }
        };
        let mut diagnostics = self.diagnostics.clone();
        if diagnostics.foc_residual.len() == perm.len() {
            diagnostics.foc_residual = inv.iter().map(|&o| self.diagnostics.foc_residual[o]).collect();
        }
        FitResult {
            params: RegimeParams {
                loadings,
                sigma2: self.params.sigma2,
            },
            state,
            probs: self.probs.permuted(perm),
            diagnostics,
            ..self.clone()
        }
    }
}

pub(crate) fn check_sigma2<T: Scalar>(sigma2: T) -> Result<()> {
    if !sigma2.is_finite() {
        return Err(Error::invalid("sigma2 is not finite"));
    }
    if sigma2 <= T::zero() {
        return Err(Error::Domain(format!("sigma2 must be positive, got {sigma2}")));
    }
    Ok(())
}

fn check_prob_vector<T: Scalar>(p: &[T], what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::invalid(format!("{what} is empty")));
    }
    if p.iter().any(|&v| !v.is_finite() || v < T::zero()) {
        return Err(Error::invalid(format!("{what} has negative or non-finite entries")));
    }
    let s: T = p.iter().copied().fold(T::zero(), |a, b| a + b);
    if (s - T::one()).abs() > T::of(1e-9).max(T::default_epsilon() * T::of(64.0)) {
        return Err(Error::invalid(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

/// `log Σ exp(v_i)`, stable for large magnitudes; `-∞` for an empty or
/// all-`-∞` input.
pub fn log_sum_exp<T: Scalar>(values: impl IntoIterator<Item = T> + Clone) -> T {
    let m = values
        .clone()
        .into_iter()
        .fold(T::of(f64::NEG_INFINITY), |a, b| a.max(b));
    if !m.is_finite() {
        return m;
    }
    let s = values.into_iter().fold(T::zero(), |acc, v| acc + (v - m).exp());
    m + s.ln()
}

/// Reduced-form pieces of one regime's covariance `ΛΛ' + σ²I`.
pub(crate) struct ReducedRegime<T: Scalar> {
    /// Cholesky factor of `σ²I_r + Λ'Λ`.
    chol: nalgebra::Cholesky<T, nalgebra::Dyn>,
    /// `N log σ² + log|I_r + Λ'Λ/σ²|`.
    log_det: T,
    n: usize,
    sigma2: T,
}

impl<T: Scalar> ReducedRegime<T> {
    pub(crate) fn new(lambda: &DMatrix<T>, sigma2: T) -> Result<Self> {
        check_sigma2(sigma2)?;
        let r = lambda.ncols();
        let n = lambda.nrows();
        let mut m = lambda.tr_mul(lambda);
        for l in 0..r {
            m[(l, l)] += sigma2;
        }
        let chol = nalgebra::Cholesky::new(m)
            .ok_or_else(|| Error::Domain("σ²I + Λ'Λ is not positive definite".into()))?;
        let log_det_m = chol.l_dirty().diagonal().iter().fold(T::zero(), |a, &d| a + d.ln()) * T::of(2.0);
        let log_s2 = sigma2.ln();
        // |σ²I + Λ'Λ| = σ^{2r} |I + Λ'Λ/σ²|
        let log_det = T::of_usize(n) * log_s2 + log_det_m - T::of_usize(r) * log_s2;
        Ok(ReducedRegime {
            chol,
            log_det,
            n,
            sigma2,
        })
    }

    /// `(σ²I + Λ'Λ)^{-1} B` for an `r × m` right-hand side.
    pub(crate) fn solve(&self, b: &DMatrix<T>) -> DMatrix<T> {
        self.chol.solve(b)
    }

    /// Log density from `‖x‖²` and `b = Λ'x`.
    fn log_density_from(&self, norm_sq: T, b: &DVector<T>) -> T {
        let proj = b.dot(&self.chol.solve(b));
        self.log_density_from_quad(norm_sq, proj)
    }

    fn log_density_from_quad(&self, norm_sq: T, proj: T) -> T {
        let half = T::of(0.5);
        let quad = (norm_sq - proj).max(T::zero()) / self.sigma2;
        -half * T::of_usize(self.n) * T::two_pi().ln() - half * self.log_det - half * quad
    }
}

/// `log N(x_t; 0, ΛΛ' + σ²I)` via the Woodbury identity.
pub fn regime_log_density<T: Scalar>(x: &DVector<T>, lambda: &DMatrix<T>, sigma2: T) -> Result<T> {
    if x.len() != lambda.nrows() {
        return Err(Error::invalid(format!(
            "x has {} entries, loadings have {} rows",
            x.len(),
            lambda.nrows()
        )));
    }
    if x.iter().chain(lambda.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite input to density"));
    }
    let reduced = ReducedRegime::new(lambda, sigma2)?;
    let b = lambda.tr_mul(x);
    Ok(reduced.log_density_from(x.norm_squared(), &b))
}

/// `T × J` matrix of `log L(x_t | z_t = j)`.
pub fn log_density_matrix<T: Scalar>(panel: &Panel<T>, params: &RegimeParams<T>) -> Result<DMatrix<T>> {
    params.validate()?;
    if params.n_series() != panel.n_series() {
        return Err(Error::invalid(format!(
            "panel has {} series, loadings have {} rows",
            panel.n_series(),
            params.n_series()
        )));
    }
    let norms = panel.row_norms_sq();
    let x = panel.values();
    let mut out = DMatrix::zeros(panel.n_periods(), params.n_regimes());
    for (j, lambda) in params.loadings.iter().enumerate() {
        let reduced = ReducedRegime::new(lambda, params.sigma2)?;
        // B = XΛ (T × r); row t is (Λ'x_t)'.
        let b = x * lambda;
        let c = reduced.solve(&b.transpose());
        for t in 0..panel.n_periods() {
            let proj = b.row(t).transpose().dot(&c.column(t));
            out[(t, j)] = reduced.log_density_from_quad(norms[t], proj);
        }
    }
    Ok(out)
}

/// Mixture quasi-log-likelihood `Σ_t log Σ_j q_j L(x_t | z_t = j)`.
pub fn mixture_loglik<T: Scalar>(panel: &Panel<T>, params: &RegimeParams<T>, q: &DVector<T>) -> Result<T> {
    if q.len() != params.n_regimes() {
        return Err(Error::invalid(format!(
            "{} mixing weights for {} regimes",
            q.len(),
            params.n_regimes()
        )));
    }
    let dens = log_density_matrix(panel, params)?;
    Ok(mixture_loglik_from(&dens, q))
}

pub(crate) fn mixture_loglik_from<T: Scalar>(log_dens: &DMatrix<T>, q: &DVector<T>) -> T {
    let log_q: Vec<T> = q.iter().map(|v| v.ln()).collect();
    log_dens.row_iter().fold(T::zero(), |acc, row| {
        acc + log_sum_exp((0..q.len()).map(|j| row[j] + log_q[j]).collect::<Vec<_>>())
    })
}

/// Exact log-likelihood under a Markov regime chain, `Σ_t log L(x_t | x_{1:t-1})`.
pub fn full_markov_loglik<T: Scalar>(
    panel: &Panel<T>,
    params: &RegimeParams<T>,
    chain: &MarkovChain<T>,
) -> Result<T> {
    let filt = crate::em_dynamic::hamilton_filter(panel, params, chain)?;
    Ok(filt.cond_loglik.sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn standard_normal_at_zero() {
        let x = DVector::from_vec(vec![0.0]);
        let l = DMatrix::from_vec(1, 1, vec![0.0]);
        let v = regime_log_density(&x, &l, 1.0).unwrap();
        assert_relative_eq!(v, -0.5 * (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-14);
        assert_relative_eq!(v, -0.9189385332046727, epsilon = 1e-12);
    }

    #[test]
    fn diagonal_gaussian() {
        let x = DVector::from_vec(vec![0.0, 0.0]);
        let l = DMatrix::from_vec(2, 1, vec![0.0, 0.0]);
        let v = regime_log_density(&x, &l, 2.0).unwrap();
        let expect = -(2.0 * std::f64::consts::PI).ln() - 2.0f64.ln();
        assert_relative_eq!(v, expect, epsilon = 1e-14);
    }

    #[test]
    fn density_errors() {
        let l = DMatrix::from_vec(1, 1, vec![1.0]);
        let x = DVector::from_vec(vec![f64::NAN]);
        assert!(matches!(regime_log_density(&x, &l, 1.0), Err(Error::InvalidInput(_))));
        let x = DVector::from_vec(vec![0.5]);
        assert!(matches!(regime_log_density(&x, &l, 0.0), Err(Error::Domain(_))));
        assert!(matches!(regime_log_density(&x, &l, -1.0), Err(Error::Domain(_))));
        let x2 = DVector::from_vec(vec![0.5, 1.0]);
        assert!(matches!(regime_log_density(&x2, &l, 1.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn log_sum_exp_extremes() {
        assert_relative_eq!(log_sum_exp(vec![1000.0, 1000.0]), 1000.0 + 2f64.ln());
        assert_relative_eq!(log_sum_exp(vec![-1000.0, -1001.0]), -1000.0 + (1.0 + (-1.0f64).exp()).ln());
        assert_eq!(log_sum_exp(vec![f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn panel_validation() {
        assert!(Panel::new(DMatrix::<f64>::zeros(1, 3)).is_err());
        assert!(Panel::new(DMatrix::<f64>::zeros(3, 0)).is_err());
        let mut m = DMatrix::<f64>::zeros(3, 2);
        m[(2, 1)] = f64::INFINITY;
        assert!(Panel::new(m).is_err());
    }

    #[test]
    fn markov_chain_validation() {
        let ok = MarkovChain::two_state(0.95, 0.72, DVector::from_vec(vec![0.5, 0.5])).unwrap();
        assert_relative_eq!(ok.transition.column(0).sum(), 1.0);
        assert_relative_eq!(ok.transition[(1, 0)], 0.05, epsilon = 1e-15);
        let pi = ok.stationary();
        assert_relative_eq!(pi[1], 0.05 / 0.33, epsilon = 1e-12);
        let bad = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.6, 0.5]);
        assert!(MarkovChain::new(bad, DVector::from_vec(vec![0.5, 0.5])).is_err());
        assert!(StateModel::static_weights(DVector::from_vec(vec![1.0, 0.0])).is_err());
    }

    #[test]
    fn prob_series_permutation_roundtrip() {
        let p = ProbSeries::<f64>::from_labels(&[0, 1, 1, 2], 3).unwrap();
        let perm = [2, 0, 1];
        let q = p.permuted(&perm);
        assert_eq!(q.argmax(), vec![2, 0, 0, 1]);
        q.validate(1e-12).unwrap();
        assert_eq!(q.permuted(&invert_perm(&perm)), p);
    }
}
