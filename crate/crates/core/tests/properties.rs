mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use switchfactor::data_io::{apply_transforms, balance_and_standardize, Table};
use switchfactor::detect::{detect_turning_points, moving_average, Direction, DetectorConfig, Phase};
use switchfactor::evaluate::{classification_report, projection_r2};
use switchfactor::*;

fn cfg() -> ProptestConfig {
    ProptestConfig::with_cases(64)
}

fn matrix(rows: usize, cols: usize, seed: u64, scale: f64) -> DMatrix<f64> {
    normal_matrix(&mut rng(seed), rows, cols) * scale
}

fn model(seed: u64, n: usize, t: usize, dims: &[usize], sigma2: f64) -> (Panel64, RegimeParams64) {
    let mut r = rng(seed);
    let panel = Panel::new(normal_matrix(&mut r, t, n) * 1.3).unwrap();
    let loadings = dims.iter().map(|&k| normal_matrix(&mut r, n, k)).collect();
    (panel, RegimeParams::new(loadings, sigma2).unwrap())
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn density_is_rotation_invariant(seed in any::<u64>(), n in 1usize..12, r in 1usize..4, s2 in 0.1f64..10.0) {
        let r = r.min(n);
        let lambda = matrix(n, r, seed, 1.0);
        let x = matrix(n, 1, seed ^ 1, 2.0).column(0).into_owned();
        let q = matrix(r, r, seed ^ 2, 1.0).qr().q();
        let a = regime_log_density(&x, &lambda, s2).unwrap();
        let b = regime_log_density(&x, &(&lambda * q), s2).unwrap();
        prop_assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
        let dense = dense_log_density(&x, &lambda, s2);
        prop_assert!((a - dense).abs() < 1e-8 * (1.0 + dense.abs()));
    }

    #[test]
    fn mixture_loglik_is_permutation_invariant(seed in any::<u64>()) {
        let (panel, params) = model(seed, 5, 8, &[1, 2, 1], 0.7);
        let q = random_simplex(&mut rng(seed ^ 3), 3);
        let perm = [2usize, 0, 1];
        let mut loadings = vec![DMatrix::zeros(0, 0); 3];
        let mut qp = DVector::zeros(3);
        for j in 0..3 {
            loadings[perm[j]] = params.loadings[j].clone();
            qp[perm[j]] = q[j];
        }
        let pp = RegimeParams::new(loadings, params.sigma2).unwrap();
        let a = mixture_loglik(&panel, &params, &q).unwrap();
        let b = mixture_loglik(&panel, &pp, &qp).unwrap();
        prop_assert!((a - b).abs() < 1e-10 * a.abs());
    }

    #[test]
    fn iid_chain_reduces_to_mixture(seed in any::<u64>(), t in 2usize..7) {
        let (panel, params) = model(seed, 4, t, &[1, 1], 0.9);
        let mut r = rng(seed ^ 4);
        let q = random_simplex(&mut r, 2);
        let phi = random_simplex(&mut r, 2);
        let chain = MarkovChain::new(DMatrix::from_fn(2, 2, |a, _| q[a]), phi.clone()).unwrap();
        let markov = full_markov_loglik(&panel, &params, &chain).unwrap();
        let x1 = panel.row(0);
        let l1: Vec<f64> = (0..2).map(|j| dense_log_density(&x1, &params.loadings[j], params.sigma2).exp()).collect();
        let correction = (phi[0] * l1[0] + phi[1] * l1[1]).ln() - (q[0] * l1[0] + q[1] * l1[1]).ln();
        let mixture = mixture_loglik(&panel, &params, &q).unwrap();
        prop_assert!((markov - (mixture + correction)).abs() < 1e-9 * markov.abs());
        let dens = DMatrix::from_fn(t, 2, |s, j| dense_log_density(&panel.row(s), &params.loadings[j], params.sigma2));
        prop_assert!((enumerate_paths(&dens, &chain.transition, &phi).loglik - markov).abs() < 1e-9 * markov.abs());
    }

    #[test]
    fn smoothed_probabilities_are_consistent(seed in any::<u64>(), t in 2usize..9) {
        let (panel, params) = model(seed, 3, t, &[1, 1], 0.5);
        let mut r = rng(seed ^ 5);
        let chain = MarkovChain::new(random_stochastic(&mut r, 2), random_simplex(&mut r, 2)).unwrap();
        let s = smoother(&hamilton_filter(&panel, &params, &chain).unwrap(), &chain).unwrap();
        prop_assert!(s.validate(1e-10).is_ok());
        let pw = s.pairwise.as_ref().unwrap();
        for step in 0..t - 1 {
            for k in 0..2 {
                prop_assert!((pw[step].column(k).sum() - s.marginal[(step, k)]).abs() < 1e-12);
                prop_assert!((pw[step].row(k).sum() - s.marginal[(step + 1, k)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loading_r2_ignores_rotation(seed in any::<u64>(), n in 4usize..30, r in 1usize..4) {
        let base = matrix(n, r, seed, 1.0);
        let mut m = matrix(r, r, seed ^ 6, 1.0);
        m += DMatrix::identity(r, r) * 3.0;
        let noisy = &base * &m + matrix(n, r, seed ^ 7, 0.3);
        let a = projection_r2(&noisy, &base).unwrap();
        let b = projection_r2(&noisy, &(&base * &m)).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((projection_r2(&(&base * &m), &base).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn classification_is_label_symmetric(seed in any::<u64>(), t in 1usize..40) {
        let mut r = rng(seed);
        let probs = DMatrix::from_fn(t, 2, |_, _| 0.0);
        let p2: Vec<f64> = (0..t).map(|_| rand::Rng::random_range(&mut r, 0.0..1.0)).collect();
        let mut probs = probs;
        for s in 0..t {
            probs[(s, 0)] = 1.0 - p2[s];
            probs[(s, 1)] = p2[s];
        }
        let states: Vec<usize> = (0..t).map(|_| usize::from(rand::Rng::random_bool(&mut r, 0.3))).collect();
        let a = classification_report(&states, &probs, (0.9, 0.1)).unwrap();
        let swapped: Vec<usize> = states.iter().map(|z| 1 - z).collect();
        let flipped = DMatrix::from_fn(t, 2, |s, j| probs[(s, 1 - j)]);
        let b = classification_report(&swapped, &flipped, (0.9, 0.1)).unwrap();
        prop_assert!((a.mean_abs_error - b.mean_abs_error).abs() < 1e-12);
        prop_assert!((a.sup_abs_error - b.sup_abs_error).abs() < 1e-12);
    }

    #[test]
    fn turning_points_alternate(p in prop::collection::vec(0.0f64..1.0, 0..80), d in 0usize..5, start in any::<bool>()) {
        let cfg = DetectorConfig {
            d,
            initial_phase: if start { Phase::Regime2 } else { Phase::Regime1 },
            ..DetectorConfig::simulation(d)
        };
        let tp = detect_turning_points(&p, &cfg).unwrap();
        let mut expect = if start { Direction::Exit } else { Direction::Enter };
        for (k, point) in tp.iter().enumerate() {
            prop_assert_eq!(point.direction, expect);
            expect = if expect == Direction::Enter { Direction::Exit } else { Direction::Enter };
            if k > 0 {
                prop_assert!(point.t > tp[k - 1].t);
                prop_assert!(point.trigger > tp[k - 1].trigger);
            }
            prop_assert_eq!(point.trigger - point.t, point.lag);
        }
    }

    #[test]
    fn wider_band_never_adds_turning_points(
        p in prop::collection::vec(0.0f64..1.0, 0..80),
        d in 0usize..4,
        lo in 0.05f64..0.45,
        hi in 0.55f64..0.95,
        widen_lo in 0.0f64..0.04,
        widen_hi in 0.0f64..0.04,
    ) {
        let narrow = DetectorConfig { d, enter_threshold: hi, exit_threshold: lo, initial_phase: Phase::Regime1 };
        let wide = DetectorConfig { enter_threshold: hi + widen_hi, exit_threshold: lo - widen_lo, ..narrow };
        let a = detect_turning_points(&p, &narrow).unwrap().len();
        let b = detect_turning_points(&p, &wide).unwrap().len();
        prop_assert!(b <= a);
    }

    #[test]
    fn moving_average_matches_windows_and_shifts(p in prop::collection::vec(-5.0f64..5.0, 0..60), d in 0usize..8, c in -3.0f64..3.0) {
        let ma = moving_average(&p, d);
        for t in 0..p.len() {
            let lo = t.saturating_sub(d);
            let mut s = 0.0;
            for v in &p[lo..=t] {
                s += v;
            }
            prop_assert!((ma[t] - s / (t - lo + 1) as f64).abs() < 1e-12);
        }
        let shifted: Vec<f64> = p.iter().map(|v| v + c).collect();
        for (a, b) in moving_average(&shifted, d).iter().zip(&ma) {
            prop_assert!((a - (b + c)).abs() < 1e-12);
        }
    }

    #[test]
    fn standardization_is_idempotent(seed in any::<u64>(), t in 3usize..30, n in 1usize..6) {
        let x = matrix(t, n, seed, 4.0).map(|v| v + 10.0);
        let table = Table::from_panel(&Panel::new(x).unwrap(), None, None).unwrap();
        let once = balance_and_standardize(&table, None).unwrap();
        let twice = balance_and_standardize(&once.table(), None).unwrap();
        prop_assert!(max_abs(once.panel.values(), twice.panel.values()) < 1e-12);
        for (m, s) in &twice.scaling {
            prop_assert!(m.abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn transformed_panels_are_finite(seed in any::<u64>(), codes in prop::collection::vec(1u8..=7, 1..6)) {
        let n = codes.len();
        let mut r = rng(seed);
        // mixes positive and non-positive levels to exercise the log path
        let x = DMatrix::from_fn(20, n, |_, _| rand::Rng::random_range(&mut r, -1.0..5.0));
        let table = Table::from_panel(&Panel::new(x).unwrap(), None, None).unwrap();
        let (out, _) = apply_transforms(&table, &codes).unwrap();
        if let Ok(s) = balance_and_standardize(&out, Some((3, 20))) {
            prop_assert!(s.panel.values().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn weighted_covariance_ignores_weight_scale(seed in any::<u64>(), c in 0.01f64..100.0) {
        let x = matrix(12, 4, seed, 1.0);
        let panel = Panel::new(x).unwrap();
        let w = DVector::from_iterator(12, matrix(12, 1, seed ^ 8, 1.0).iter().map(|v| v.abs() + 0.01));
        let a = weighted_covariance(&panel, &w).unwrap();
        let b = weighted_covariance(&panel, &(&w * c)).unwrap();
        prop_assert!(max_abs(&a, &b) < 1e-10 * (1.0 + a.abs().max()));
        prop_assert!(a.symmetric_eigenvalues().min() > -1e-12);
    }
}

fn monotone(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] >= w[0] - 1e-8 * w[0].abs())
}

#[test]
fn em_traces_are_monotone_and_probabilities_valid() {
    for seed in 0..8u64 {
        let (panel, _) = model(seed, 15, 40, &[1, 1], 1.0);
        let config = FitConfig { n_trials: 1, seed, ..FitConfig::default() };
        let fit = fit_static(&panel, &[1, 2], &DVector::from_vec(vec![0.5, 0.5]), &config).unwrap();
        assert!(monotone(&fit.loglik_trace), "{:?}", fit.loglik_trace);
        assert!(fit.probs.validate(1e-10).is_ok());
        let chain = MarkovChain::two_state(0.9, 0.8, DVector::from_vec(vec![0.5, 0.5])).unwrap();
        let fit = fit_dynamic(&panel, &[1, 2], &chain, &config).unwrap();
        assert!(monotone(&fit.loglik_trace), "{:?}", fit.loglik_trace);
        assert!(fit.probs.validate(1e-10).is_ok());
    }
}

#[test]
fn permuted_start_gives_permuted_fit() {
    let (panel, params) = model(3, 10, 30, &[1, 2], 1.0);
    let q = DVector::from_vec(vec![0.3, 0.7]);
    let base = FitConfig { n_trials: 1, ..FitConfig::default() };
    let a = fit_static(&panel, &[1, 2], &q, &FitConfig { init: Init::Params(params.clone()), ..base.clone() }).unwrap();
    let swapped = RegimeParams::new(vec![params.loadings[1].clone(), params.loadings[0].clone()], 1.0).unwrap();
    let qs = DVector::from_vec(vec![0.7, 0.3]);
    let b = fit_static(&panel, &[2, 1], &qs, &FitConfig { init: Init::Params(swapped), ..base }).unwrap();
    assert!((a.loglik() - b.loglik()).abs() < 1e-9 * a.loglik().abs());
    let b_back = b.permuted(&[1, 0]);
    assert!(max_abs(&a.probs.marginal, &b_back.probs.marginal) < 1e-9);
    assert!(max_abs(&a.params.loadings[1], &b_back.params.loadings[1]) < 1e-8);
}

#[test]
fn fed_back_weights_satisfy_their_score_condition() {
    let (panel, _) = model(4, 12, 50, &[1, 1], 1.0);
    let mut q = DVector::from_vec(vec![0.5, 0.5]);
    let mut config = FitConfig { n_trials: 2, tol: 1e-13, max_iter: 5000, ..FitConfig::default() };
    let mut gap = f64::INFINITY;
    for _ in 0..2000 {
        let fit = fit_static(&panel, &[1, 1], &q, &config).unwrap();
        let next = estimate_q(&fit.probs);
        gap = (&next - &q).abs().max();
        q = next;
        if gap < 1e-10 {
            // the mass condition holds at the fixed point
            let mass = fit.probs.regime_mass();
            assert!((mass - &q * 50.0).abs().max() < 1e-8 * 50.0);
            return;
        }
        config = FitConfig { n_trials: 1, init: Init::Params(fit.params), ..config };
    }
    panic!("q did not stabilize, last change {gap:e}");
}

#[test]
fn single_precision_fit_runs() {
    let (panel, _) = model(5, 8, 30, &[1, 1], 1.0);
    let x32 = panel.values().map(|v| v as f32);
    let p32 = Panel32::new(x32).unwrap();
    let config = FitConfig::<f32> { n_trials: 2, tol: 1e-5, ..FitConfig::default() };
    let fit: FitResult32 = fit_static(&p32, &[1, 1], &DVector::from_vec(vec![0.5f32, 0.5]), &config).unwrap();
    assert!(fit.loglik().is_finite());
    assert!(fit.probs.validate(1e-4).is_ok());
    let f64fit = fit_static(&panel, &[1, 1], &DVector::from_vec(vec![0.5, 0.5]), &FitConfig { n_trials: 2, ..FitConfig::default() }).unwrap();
    assert!(((fit.loglik() as f64) - f64fit.loglik()).abs() < 1e-3 * f64fit.loglik().abs());
}
