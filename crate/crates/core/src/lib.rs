//! Large approximate factor models whose loadings switch among a finite set
//! of regimes.
//!
//! Estimation is by EM: the E-step produces regime probabilities (either
//! per-observation posteriors or Markov-smoothed probabilities) and the
//! M-step is a weighted principal-components problem per regime. The crate
//! also carries a simulation harness, ground-truth evaluation metrics,
//! turning-point detection and CSV ingestion for macro panels.
//!
//! All numerical code is generic over [`Scalar`] (implemented for `f32`
//! and `f64`); the `*64` aliases below cover the common case.

pub mod data_io;
pub mod detect;
pub mod em_dynamic;
pub mod em_static;
mod error;
pub mod evaluate;
pub mod fit;
pub mod model;
mod scalar;
pub mod simulate;

pub use error::{Error, Result, TrialSummary};
pub use scalar::Scalar;

pub use em_dynamic::{
    estimate_factors_dynamic, estimate_transition, fit_dynamic, hamilton_filter, smoother,
    FilterOutput,
};
pub use em_static::{
    e_step_static, estimate_factors_static, estimate_q, fit_static, m_step, m_step_loadings,
    sigma2_update, weighted_covariance,
};
pub use fit::{FitConfig, Init, Sigma2Mode};
pub use model::{
    full_markov_loglik, mixture_loglik, regime_log_density, FitResult, MarkovChain, Panel,
    ProbSeries, RegimeParams, StateModel,
};

pub type Panel64 = Panel<f64>;
pub type Panel32 = Panel<f32>;
pub type RegimeParams64 = RegimeParams<f64>;
pub type MarkovChain64 = MarkovChain<f64>;
pub type StateModel64 = StateModel<f64>;
pub type ProbSeries64 = ProbSeries<f64>;
pub type FitResult64 = FitResult<f64>;
pub type FitConfig64 = FitConfig<f64>;
pub type FitResult32 = FitResult<f32>;
pub type SimTruth64 = simulate::SimTruth<f64>;
