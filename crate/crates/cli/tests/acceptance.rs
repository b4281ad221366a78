//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and a count of failures. Set `ACCEPTANCE_STRICT=1` to also exit nonzero
//! when any criterion fails.
//!
//! Run with `cargo test --test acceptance`; the Monte Carlo criteria take
//! a few minutes.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use switchfactor::detect::*;
use switchfactor::em_dynamic::filter_log_densities;
use switchfactor::evaluate::*;
use switchfactor::simulate::*;
use switchfactor::*;

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Check {
    Check { pass, detail: detail.into() }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn random_model(rng: &mut rand_chacha::ChaCha20Rng, n: usize, t: usize, dims: &[usize]) -> (Panel64, RegimeParams64) {
    let panel = Panel::new(normal_matrix(rng, t, n) * 1.5).unwrap();
    let loadings = dims.iter().map(|&r| normal_matrix(rng, n, r)).collect();
    (panel, RegimeParams::new(loadings, rng.random_range(0.3..2.0)).unwrap())
}

fn smoother_matches_enumeration() -> Check {
    let mut rng = rng(101);
    let (mut worst_enum, mut worst_fwd) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let t = rng.random_range(2..=8);
        let (panel, params) = random_model(&mut rng, 3, t, &[1, 1]);
        let chain = MarkovChain::new(random_stochastic(&mut rng, 2), random_simplex(&mut rng, 2)).unwrap();
        let dens = DMatrix::from_fn(t, 2, |s, j| dense_log_density(&panel.row(s), &params.loadings[j], params.sigma2));
        let exact = enumerate_paths(&dens, &chain.transition, &chain.initial);
        let sm = smoother(&hamilton_filter(&panel, &params, &chain).unwrap(), &chain).unwrap();
        worst_enum = worst_enum.max(max_abs(&sm.marginal, &exact.marginal));
        let pw = sm.pairwise.as_ref().unwrap();
        for (a, b) in pw.iter().zip(&exact.pairwise) {
            worst_enum = worst_enum.max(max_abs(a, b));
        }
        let back = smoother(&filter_log_densities(&dens, &chain).unwrap(), &chain).unwrap();
        let fwd = forward_smoother(&dens, &chain.transition, &chain.initial);
        for (a, b) in back.pairwise.as_ref().unwrap().iter().zip(&fwd) {
            worst_fwd = worst_fwd.max(max_abs(a, b));
        }
    }
    check(
        worst_enum < 1e-10 && worst_fwd < 1e-10,
        format!("max |smoothed - enumerated| {worst_enum:.1e}, max |backward - forward| {worst_fwd:.1e}"),
    )
}

fn density_matches_dense() -> Check {
    let mut rng = rng(102);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let n = rng.random_range(1..=20);
        let r = rng.random_range(1..=4.min(n));
        let lambda = normal_matrix(&mut rng, n, r) * rng.random_range(0.1..3.0);
        let sigma2 = rng.random_range(0.05..4.0);
        let x = DVector::from_iterator(n, normal_matrix(&mut rng, n, 1).iter().map(|v| v * 2.0));
        let fast = regime_log_density(&x, &lambda, sigma2).unwrap();
        worst = worst.max((fast - dense_log_density(&x, &lambda, sigma2)).abs());
    }
    check(worst < 1e-8, format!("max |reduced - dense| {worst:.1e}"))
}

/// EM from `start`, continued one iteration at a time past the likelihood
/// stop rule until the loadings reach a fixed point. Returns the whole
/// likelihood trace and the final first-order residual.
fn em_to_fixed_point(panel: &Panel64, dynamic: bool, seed: u64) -> Result<(Vec<f64>, f64)> {
    let chain = MarkovChain::two_state(0.95, 0.72, DVector::from_vec(vec![0.5, 0.5]))?;
    let q = DVector::from_vec(vec![0.5, 0.5]);
    let run = |c: &FitConfig64| {
        if dynamic {
            fit_dynamic(panel, &[2, 2], &chain, c)
        } else {
            fit_static(panel, &[2, 2], &q, c)
        }
    };
    let config = FitConfig { n_trials: 1, tol: 1e-15, max_iter: 20_000, seed, ..FitConfig::default() };
    let mut fit = run(&config)?;
    let mut trace = fit.loglik_trace.clone();
    let foc = |f: &FitResult64| f.diagnostics.foc_residual.iter().copied().fold(0.0, f64::max);
    for _ in 0..20_000 {
        if foc(&fit) < 1e-7 {
            break;
        }
        let next = FitConfig { init: Init::Params(fit.params.clone()), max_iter: 1, ..config.clone() };
        fit = run(&next)?;
        trace.extend_from_slice(&fit.loglik_trace[1..]);
    }
    let r = foc(&fit);
    Ok((trace, r))
}

fn em_is_monotone() -> Check {
    let runs: Vec<(bool, u64, u64)> = (0..20u64)
        .flat_map(|p| (0..5u64).flat_map(move |s| [(false, p, s), (true, p, s)]))
        .collect();
    let results: Vec<Result<(Vec<f64>, f64)>> = runs
        .par_iter()
        .map(|&(dynamic, p, s)| {
            let truth = simulate_panel::<f64>(&SimConfig {
                n: 30,
                t: 60,
                dgp: Dgp::TwoFactorsBothSwitch,
                pattern: Pattern::SingleBreak,
                seed: 3000 + p,
                ..SimConfig::default()
            })?;
            em_to_fixed_point(&truth.panel, dynamic, 100 * p + s)
        })
        .collect();
    let (mut worst_drop, mut worst_foc, mut failed) = (f64::MIN, 0.0f64, 0);
    for r in &results {
        match r {
            Ok((trace, foc)) => {
                for w in trace.windows(2) {
                    worst_drop = worst_drop.max((w[0] - w[1]) / w[0].abs());
                }
                worst_foc = worst_foc.max(*foc);
            }
            Err(_) => failed += 1,
        }
    }
    check(
        failed == 0 && worst_drop <= 1e-8 && worst_foc < 1e-6,
        format!(
            "{} runs, {failed} failed; largest relative likelihood drop {worst_drop:.1e}; largest first-order residual {worst_foc:.1e}",
            results.len()
        ),
    )
}

fn cell(dgp: u8, pattern: u8, smoothed: bool, n: usize) -> Table1Cell {
    Table1Cell { dgp, pattern, smoothed, n, t: 300, rho: 0.0, alpha: 0.0, beta: 0.0 }
}

fn metrics(c: &Table1Cell, index: usize, reps: usize, trials: Option<usize>) -> Vec<ReplicationMetrics> {
    let settings = McFitSettings { n_trials: trials, ..McFitSettings::default() };
    run_cell(c, index, reps, 7, &settings)
        .unwrap()
        .into_iter()
        .filter_map(|r| r.map_err(|e| eprintln!("replication failed: {e}")).ok())
        .collect()
}

fn table1_cell(m: &[ReplicationMetrics]) -> Check {
    let l1 = mean(&m.iter().map(|m| m.r2_loadings[0]).collect::<Vec<_>>());
    let l2 = mean(&m.iter().map(|m| m.r2_loadings[1]).collect::<Vec<_>>());
    let hf = mean(&m.iter().map(|m| m.r2_hf).collect::<Vec<_>>());
    let f = mean(&m.iter().map(|m| m.r2_f).collect::<Vec<_>>());
    check(
        m.len() == 50 && l1 >= 0.985 && l2 >= 0.985 && hf >= 0.98 && (0.40..=0.65).contains(&f),
        format!("{} reps: R2_l1 {l1:.4}, R2_l2 {l2:.4}, R2_Hf {hf:.4}, R2_f {f:.4}", m.len()),
    )
}

fn classification(small: &[ReplicationMetrics], large: &[ReplicationMetrics]) -> Check {
    let a = mean(&small.iter().map(|m| m.class_error).collect::<Vec<_>>());
    let b = mean(&large.iter().map(|m| m.class_error).collect::<Vec<_>>());
    check(
        small.len() == 50 && large.len() == 50 && a < 0.02 && b < a,
        format!("mean error {a:.5} at N=100, {b:.5} at N=200"),
    )
}

fn transition_accuracy() -> Check {
    let m = metrics(&cell(1, 4, true, 100), 2, 50, None);
    let q: Vec<(f64, f64)> = m.iter().filter_map(|m| m.q_error).collect();
    let e11 = mean(&q.iter().map(|q| q.0).collect::<Vec<_>>());
    let e22 = mean(&q.iter().map(|q| q.1).collect::<Vec<_>>());
    check(
        q.len() == 50 && e11 <= 0.05 && e22 <= 0.08,
        format!("{} reps: mean |Q11 - 0.95| {e11:.4}, mean |Q22 - 0.72| {e22:.4}", q.len()),
    )
}

fn distribution_shape() -> Check {
    let c = cell(3, 2, true, 100);
    let settings = McFitSettings { n_trials: Some(5), ..McFitSettings::default() };
    let pairs: Vec<_> = (0..200)
        .into_par_iter()
        .filter_map(|rep| run_replication(&c, &settings, 7, 3, rep).ok())
        .collect();
    let mut pass = pairs.len() == 200;
    let mut detail = format!("{} reps", pairs.len());
    for (name, target) in [
        ("loading i=N/2", Target::Loading { i: 50, regime: 0, component: 0 }),
        ("factor t=T/2", Target::Factor { t: 150, component: 0 }),
    ] {
        match standardized_estimates(&pairs, target) {
            Ok(z) => {
                let m = Moments::of(&z);
                pass &= m.mean.abs() < 0.15 && (m.std - 1.0).abs() < 0.15 && m.skewness.abs() < 0.4;
                detail += &format!("; {name}: mean {:.3}, std {:.3}, skew {:.3}", m.mean, m.std, m.skewness);
            }
            Err(e) => {
                pass = false;
                detail += &format!("; {name}: {e}");
            }
        }
    }
    check(pass, detail)
}

fn turning_point_rule() -> Check {
    let mut unit = moving_average(&[0.3, 0.1, 0.7], 0) == vec![0.3, 0.1, 0.7];
    unit &= moving_average(&[0.0, 0.0, 1.0, 1.0], 1) == vec![0.0, 0.0, 0.5, 1.0];
    let mut r = rng(108);
    let p: Vec<f64> = (0..50).map(|_| r.random()).collect();
    for (t, v) in moving_average(&p, 4).iter().enumerate() {
        let w = &p[t.saturating_sub(4)..=t];
        unit &= (v - w.iter().sum::<f64>() / w.len() as f64).abs() < 1e-12;
    }
    let cfg = DetectorConfig::simulation(0);
    let tp = detect_turning_points(&[0.0, 0.0, 0.95, 0.95, 0.05], &cfg).unwrap();
    unit &= tp.len() == 2
        && (tp[0].t, tp[0].direction) == (2, Direction::Enter)
        && (tp[1].t, tp[1].direction) == (4, Direction::Exit);
    unit &= detect_turning_points(&[0.5; 40], &cfg).unwrap().is_empty();

    let c = cell(2, 3, false, 100);
    let settings = McFitSettings { n_trials: Some(5), ..McFitSettings::default() };
    let detector = DetectorConfig::simulation(3);
    let hits: Vec<bool> = (0..50)
        .into_par_iter()
        .map(|rep| {
            let Ok((truth, fit)) = run_replication(&c, &settings, 7, 4, rep) else {
                return false;
            };
            let fit = align(&truth, &fit).unwrap();
            let p: Vec<f64> = fit.probs.marginal.column(1).iter().copied().collect();
            let tp = detect_turning_points(&p, &detector).unwrap();
            tp.len() == 2
                && tp[0].direction == Direction::Enter
                && tp[0].t.abs_diff(100) <= 2
                && tp[1].t.abs_diff(200) <= 2
        })
        .collect();
    let n_hit = hits.iter().filter(|&&h| h).count();
    check(
        unit && n_hit >= 45,
        format!("unit cases {}; both breaks within 2 periods in {n_hit}/50", if unit { "pass" } else { "fail" }),
    )
}

/// A 100-series panel whose known history holds one earlier regime-2
/// spell, followed by a single switch into regime 2 at period 110.
fn realtime_pipeline() -> Check {
    let (n_t, warmup, switch) = (140, 100, 110);
    let labels: Vec<usize> = (0..n_t).map(|t| usize::from((40..55).contains(&t) || t >= switch)).collect();
    let lags: Vec<Option<usize>> = (0..20u64)
        .into_par_iter()
        .map(|rep| {
            let truth = simulate_panel::<f64>(&SimConfig {
                n: 100,
                t: n_t,
                pattern: Pattern::BusinessCycle,
                labels: Some(labels.clone()),
                seed: 9000 + rep,
                ..SimConfig::default()
            })
            .ok()?;
            let chain = MarkovChain::two_state(0.95, 0.72, DVector::from_vec(vec![0.5, 0.5])).ok()?;
            let mut cfg = RealtimeConfig::new(chain);
            cfg.fit.sigma2 = Sigma2Mode::Fixed(1.0);
            cfg.fit.n_trials = 2;
            cfg.fit.seed = rep;
            cfg.labels = Some(labels[..warmup].to_vec());
            let out = realtime_detect(&truth.panel, &[2, 2], &DetectorConfig::empirical(), &cfg, warmup).ok()?;
            let refs: Vec<_> = reference_points(&labels).into_iter().filter(|r| r.t >= warmup).collect();
            // a false alarm before the switch also counts as a miss
            let clean = out.turning_points.first().is_some_and(|p| p.trigger >= switch);
            if clean {
                detection_lags(&out.turning_points, &refs)[0]
            } else {
                None
            }
        })
        .collect();
    let found: Vec<f64> = lags.iter().flatten().map(|&l| l as f64).collect();
    let missed = lags.len() - found.len();
    let m = if found.is_empty() { f64::INFINITY } else { mean(&found) };
    check(missed == 0 && m <= 2.0, format!("20 reps, {missed} missed, mean lag {m:.2}"))
}

fn cli(dir: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_switchfactor"))
        .current_dir(dir)
        .args(args)
        .env_remove("REGIME_FACTOR_SEED")
        .status()
        .is_ok_and(|s| s.success())
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Every subcommand, once with one worker and once with four.
fn determinism() -> Check {
    let base = tempfile::tempdir().unwrap();
    let mut trees = Vec::new();
    let mut ok = true;
    for jobs in ["1", "4"] {
        // same relative paths in both runs, since fit.json records its input
        let d = base.path().join(format!("jobs{jobs}"));
        std::fs::create_dir_all(&d).unwrap();
        let panel = "sim/panel.csv";
        for args in [
            vec!["simulate", "--n", "40", "--t", "120", "--pattern", "3", "--seed", "5", "--out", "sim"],
            vec!["fit", panel, "--mode", "static", "--factors", "2", "--trials", "4", "--seed", "6", "--out", "static"],
            vec!["fit", panel, "--mode", "dynamic", "--factors", "2", "--trials", "4", "--seed", "6", "--out", "dynamic"],
            vec!["detect", "static/probs.csv", "--d", "3", "--states", "sim/truth_states.csv", "--out", "det"],
            vec!["detect", panel, "--realtime", "--factors", "1", "--warmup", "100", "--trials", "2", "--seed", "6", "--out", "rt"],
            vec!["eval", "--truth", "sim", "--fit", "dynamic", "--out", "metrics.csv"],
            vec!["table1", "--dgp", "1", "--pattern", "2,4", "--size", "20x60", "--replications", "3", "--trials", "2", "--out", "table1.csv"],
            vec!["plotdata", "probs", "dynamic/probs.csv", "--states", "sim/truth_states.csv", "--d", "3", "--out", "plot"],
            vec!["plotdata", "hist", "dynamic/factors.csv", "--standardize", "--out", "hist"],
        ] {
            let mut full = vec!["--jobs", jobs];
            full.extend(args);
            ok &= cli(&d, &full);
        }
        trees.push(tree(&d));
    }
    let files = trees[0].len();
    let differing: Vec<&str> = trees[0]
        .iter()
        .zip(&trees[1])
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0.as_str())
        .collect();
    check(
        ok && files > 0 && trees[0].len() == trees[1].len() && differing.is_empty(),
        format!("{files} output files compared across --jobs 1 and 4; differing: {differing:?}"),
    )
}

fn main() {
    let started = Instant::now();
    let mut failed = 0;
    let mut report = |k: usize, name: &str, f: &dyn Fn() -> Check| {
        let t0 = Instant::now();
        let c = f();
        failed += usize::from(!c.pass);
        println!(
            "{} #{k} {name}: {} ({:.1}s)",
            if c.pass { "PASS" } else { "FAIL" },
            c.detail,
            t0.elapsed().as_secs_f64()
        );
    };
    report(1, "smoother vs enumeration", &smoother_matches_enumeration);
    report(2, "reduced density", &density_matches_dense);
    report(3, "EM monotonicity", &em_is_monotone);
    let base = metrics(&cell(1, 2, true, 100), 0, 50, Some(5));
    report(4, "Table 1 cell DGP1/pattern 2", &|| table1_cell(&base));
    report(5, "classification consistency", &|| {
        classification(&base, &metrics(&cell(1, 2, true, 200), 1, 50, Some(5)))
    });
    report(6, "transition matrix", &transition_accuracy);
    report(7, "distribution shape", &distribution_shape);
    report(8, "turning-point rule", &turning_point_rule);
    report(9, "real-time detection", &realtime_pipeline);
    report(10, "determinism across --jobs", &determinism);
    println!("{failed} of 10 criteria failed; finished in {:.0}s", started.elapsed().as_secs_f64());
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
