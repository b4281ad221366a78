//! EM with Markov regime dynamics.
//!
//! The E-step is a log-domain Hamilton filter followed by a backward
//! smoother. The smoother uses the identity
//!
//! ```text
//! p(z_t = k | x_{1:T}) = p(z_t = k | x_{1:t}) · Σ_j Q_jk p(z_{t+1} = j | x_{1:T}) / p(z_{t+1} = j | x_{1:t})
//! ```
//!
//! which costs `O(T J²)`. Pairwise probabilities
//! `p(z_t = j, z_{t-1} = k | x_{1:T})` fall out of the same pass.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fit::{run_em, FitConfig, EMPTY_REGIME_MASS};
use crate::model::{log_density_matrix, FitResult, MarkovChain, Panel, ProbSeries, RegimeParams, StateModel};
use crate::scalar::Scalar;

/// Smallest one-step predicted probability the smoother will divide by.
pub const PREDICTED_FLOOR: f64 = 1e-300;

/// Output of the forward (filtering) pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput<T: Scalar> {
    /// `p(z_t = j | x_{1:t})`, `T × J`.
    pub filtered: DMatrix<T>,
    /// `p(z_t = j | x_{1:t-1})`, `T × J`; row 0 is the initial distribution.
    pub predicted: DMatrix<T>,
    /// `log L(x_t | x_{1:t-1})`.
    pub cond_loglik: DVector<T>,
}

impl<T: Scalar> FilterOutput<T> {
    pub fn n_periods(&self) -> usize {
        self.filtered.nrows()
    }

    /// Filtered pairwise probabilities `p(z_t = j, z_{t-1} = k | x_{1:t})`
    /// for `t ≥ 1` (0-based).
    pub fn filtered_pairwise(&self, chain: &MarkovChain<T>, t: usize) -> Result<DMatrix<T>> {
        if t == 0 || t >= self.n_periods() {
            return Err(Error::invalid(format!("pairwise filter needs 1 <= t < {}", self.n_periods())));
        }
        let j = chain.n_states();
        let mut out = DMatrix::zeros(j, j);
        for a in 0..j {
            let pred = self.predicted[(t, a)];
            if pred.as_f64() < PREDICTED_FLOOR {
                continue;
            }
            let ratio = self.filtered[(t, a)] / pred;
            for k in 0..j {
                out[(a, k)] = chain.transition[(a, k)] * self.filtered[(t - 1, k)] * ratio;
            }
        }
        Ok(out)
    }

    /// Log-likelihood of the whole sample.
    pub fn loglik(&self) -> T {
        self.cond_loglik.sum()
    }
}

/// Forward filter given log densities `log L(x_t | z_t = j)`.
pub fn filter_log_densities<T: Scalar>(log_dens: &DMatrix<T>, chain: &MarkovChain<T>) -> Result<FilterOutput<T>> {
    let (n_t, j) = (log_dens.nrows(), log_dens.ncols());
    if chain.n_states() != j {
        return Err(Error::invalid(format!(
            "chain has {} states, densities have {j} regimes",
            chain.n_states()
        )));
    }
    let mut filtered = DMatrix::zeros(n_t, j);
    let mut predicted = DMatrix::zeros(n_t, j);
    let mut cond = DVector::zeros(n_t);
    let mut pred = chain.initial.clone();
    let mut a = vec![T::zero(); j];
    for t in 0..n_t {
        if t > 0 {
            pred = &chain.transition * filtered.row(t - 1).transpose();
        }
        let mut m = T::of(f64::NEG_INFINITY);
        for k in 0..j {
            a[k] = log_dens[(t, k)] + pred[k].ln();
            if a[k] > m {
                m = a[k];
            }
        }
        if !m.is_finite() {
            return Err(Error::Underflow {
                t,
                what: "filter normalizer is zero".into(),
            });
        }
        let s = a.iter().fold(T::zero(), |acc, &v| acc + (v - m).exp());
        let c = m + s.ln();
        for k in 0..j {
            filtered[(t, k)] = (a[k] - c).exp();
            predicted[(t, k)] = pred[k];
        }
        cond[t] = c;
    }
    Ok(FilterOutput {
        filtered,
        predicted,
        cond_loglik: cond,
    })
}

/// Hamilton filter: filtered and one-step predicted regime probabilities.
pub fn hamilton_filter<T: Scalar>(
    panel: &Panel<T>,
    params: &RegimeParams<T>,
    chain: &MarkovChain<T>,
) -> Result<FilterOutput<T>> {
    let dens = log_density_matrix(panel, params)?;
    filter_log_densities(&dens, chain)
}

/// Smoothed marginal and pairwise probabilities from a filter pass.
pub fn smoother<T: Scalar>(filter: &FilterOutput<T>, chain: &MarkovChain<T>) -> Result<ProbSeries<T>> {
    let n_t = filter.n_periods();
    let j = filter.filtered.ncols();
    if chain.n_states() != j {
        return Err(Error::invalid("chain does not match filter output"));
    }
    let mut smoothed = DMatrix::zeros(n_t, j);
    smoothed.set_row(n_t - 1, &filter.filtered.row(n_t - 1));
    let mut pairwise = vec![DMatrix::zeros(j, j); n_t.saturating_sub(1)];
    let mut ratio = vec![T::zero(); j];
    for t in (0..n_t.saturating_sub(1)).rev() {
        for a in 0..j {
            let pred = filter.predicted[(t + 1, a)];
            if pred.as_f64() < PREDICTED_FLOOR {
                return Err(Error::Underflow {
                    t: t + 1,
                    what: format!("predicted probability of regime {} below {PREDICTED_FLOOR:e}", a + 1),
                });
            }
            ratio[a] = smoothed[(t + 1, a)] / pred;
        }
        let pw = &mut pairwise[t];
        for a in 0..j {
            for k in 0..j {
                pw[(a, k)] = chain.transition[(a, k)] * filter.filtered[(t, k)] * ratio[a];
            }
        }
        for k in 0..j {
            smoothed[(t, k)] = pw.column(k).sum();
        }
    }
    Ok(ProbSeries {
        marginal: smoothed,
        pairwise: Some(pairwise),
    })
}

/// EM with Markov regime dynamics, starting from the chain `markov`.
pub fn fit_dynamic<T: Scalar>(
    panel: &Panel<T>,
    dims: &[usize],
    markov: &MarkovChain<T>,
    config: &FitConfig<T>,
) -> Result<FitResult<T>> {
    if !markov.is_strictly_positive() {
        return Err(Error::invalid("transition and initial probabilities must be strictly positive"));
    }
    run_em(panel, dims, StateModel::Markov(markov.clone()), config)
}

/// `Q̃_jk = Σ_{t≥2} p̃_tjk / Σ_j Σ_{t≥2} p̃_tjk` and `φ̃ = p̃_1·`.
pub fn estimate_transition<T: Scalar>(probs: &ProbSeries<T>) -> Result<MarkovChain<T>> {
    let pw = probs
        .pairwise
        .as_ref()
        .ok_or_else(|| Error::invalid("pairwise probabilities are required"))?;
    let j = probs.n_regimes();
    let mut counts = DMatrix::zeros(j, j);
    for m in pw {
        counts += m;
    }
    let mut q = DMatrix::zeros(j, j);
    for k in 0..j {
        let mass = counts.column(k).sum();
        if mass.as_f64() < EMPTY_REGIME_MASS {
            return Err(Error::DegenerateFit(format!(
                "regime {} has no transition mass (total {:e})",
                k + 1,
                mass.as_f64()
            )));
        }
        for a in 0..j {
            q[(a, k)] = counts[(a, k)] / mass;
        }
    }
    let initial = probs.marginal.row(0).transpose();
    let s = initial.sum();
    Ok(MarkovChain {
        transition: q,
        initial: initial / s,
    })
}

/// Factor means weighted by smoothed probabilities.
pub fn estimate_factors_dynamic<T: Scalar>(
    panel: &Panel<T>,
    params: &RegimeParams<T>,
    probs: &ProbSeries<T>,
) -> Result<DMatrix<T>> {
    crate::em_static::posterior_factors(panel, params, probs)
}
