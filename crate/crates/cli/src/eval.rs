use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use nalgebra::{DMatrix, DVector};
use switchfactor::data_io::{load_panel, LoadOptions};
use switchfactor::evaluate::evaluate_replication;
use switchfactor::model::FitDiagnostics;
use switchfactor::simulate::{load_labels, Pattern, PatternMeta, SimTruth};
use switchfactor::{FitResult, MarkovChain, ProbSeries, RegimeParams, StateModel};

use crate::io::{num, numbered, read_json, write_csv, Sheet};
use crate::Status;

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory written by `simulate`
    #[arg(long)]
    truth: PathBuf,
    /// Directory written by `fit`
    #[arg(long)]
    fit: PathBuf,
    /// Output CSV
    #[arg(long)]
    out: PathBuf,
}

/// `name_1.csv`, `name_2.csv`, ... until one is missing.
fn numbered_files(dir: &Path, name: &str) -> Result<Vec<DMatrix<f64>>> {
    let mut out = Vec::new();
    loop {
        let path = dir.join(format!("{name}_{}.csv", out.len() + 1));
        if !path.exists() {
            break;
        }
        out.push(Sheet::read(&path)?.matrix(1)?);
    }
    if out.is_empty() {
        bail!("{} has no {name}_1.csv", dir.display());
    }
    Ok(out)
}

fn load_truth(dir: &Path) -> Result<(SimTruth<f64>, Option<Pattern>)> {
    let panel = load_panel(&dir.join("panel.csv"), LoadOptions::default())?.to_panel()?;
    let states = load_labels(&dir.join("truth_states.csv"))?;
    let factors = Sheet::read(&dir.join("truth_factors.csv"))?.matrix(1)?;
    let loadings = numbered_files(dir, "truth_loadings")?;
    let meta_path = dir.join("sim.json");
    let (pattern, meta) = if meta_path.exists() {
        let sim = read_json(&meta_path)?;
        let p = sim["pattern"].as_u64().context("sim.json: pattern")?;
        let pattern = Pattern::from_index(p as u8)?;
        let meta = match pattern {
            Pattern::Markov => PatternMeta::Markov(switchfactor::simulate::cycle_chain().transition),
            _ => PatternMeta::Labels,
        };
        (Some(pattern), meta)
    } else {
        (None, PatternMeta::Labels)
    };
    Ok((
        SimTruth {
            panel,
            factors,
            loadings,
            states,
            pattern_meta: meta,
        },
        pattern,
    ))
}

fn load_fit(dir: &Path, n_regimes: usize) -> Result<FitResult<f64>> {
    let meta = read_json(&dir.join("fit.json"))?;
    let result = &meta["result"];
    let sigma2 = result["sigma2"].as_f64().context("fit.json: result.sigma2")?;
    let loadings = numbered_files(dir, "loadings")?;
    let marginal = Sheet::read(&dir.join("probs.csv"))?.matrix(1)?;
    let j = marginal.ncols();
    if j != n_regimes {
        bail!("fit has {j} regimes, truth has {n_regimes}");
    }
    let pw_path = dir.join("pairwise_probs.csv");
    let pairwise = if pw_path.exists() {
        let sheet = Sheet::read(&pw_path)?;
        let (from, to, p) = (sheet.numbers(1)?, sheet.numbers(2)?, sheet.numbers(3)?);
        let n_t = marginal.nrows();
        if p.len() != (n_t - 1) * j * j {
            bail!("pairwise_probs.csv has {} rows, expected {}", p.len(), (n_t - 1) * j * j);
        }
        let mut out = vec![DMatrix::zeros(j, j); n_t - 1];
        for (k, v) in p.iter().enumerate() {
            out[k / (j * j)][(to[k] as usize - 1, from[k] as usize - 1)] = *v;
        }
        Some(out)
    } else {
        None
    };
    let probs = ProbSeries::new(marginal, pairwise)?;
    let factors = Sheet::read(&dir.join("factors.csv"))?.matrix(1)?;
    let state = match (result["state"]["q"].as_array(), result["state"]["transition"].as_array()) {
        (_, Some(rows)) => {
            let m: Vec<Vec<f64>> = serde_json::from_value(serde_json::Value::Array(rows.clone()))?;
            let init: Vec<f64> = serde_json::from_value(result["state"]["initial"].clone())?;
            StateModel::Markov(MarkovChain::new(
                DMatrix::from_fn(j, j, |a, b| m[a][b]),
                DVector::from_vec(init),
            )?)
        }
        (Some(q), None) => StateModel::Static {
            q: DVector::from_iterator(j, q.iter().map(|v| v.as_f64().unwrap_or(f64::NAN))),
        },
        (None, None) => StateModel::Static {
            q: DVector::from_element(j, 1.0 / j as f64),
        },
    };
    let loglik = result["loglik"].as_f64().unwrap_or(f64::NAN);
    Ok(FitResult {
        params: RegimeParams::new(loadings, sigma2)?,
        state,
        probs,
        factors,
        loglik_trace: vec![loglik],
        iterations: result["iterations"].as_u64().unwrap_or(0) as usize,
        converged: result["converged"].as_bool().unwrap_or(true),
        trial_index: result["winning_trial"].as_u64().unwrap_or(0) as usize,
        diagnostics: FitDiagnostics::default(),
    })
}

pub fn run(a: EvalArgs) -> Result<Status> {
    let (truth, pattern) = load_truth(&a.truth)?;
    let j = truth.loadings.len();
    let fit = load_fit(&a.fit, j)?;
    let q0 = pattern.and_then(|p| switchfactor::evaluate::reference_transition(p, &truth));
    let m = evaluate_replication(&truth, &fit, q0.as_ref())?;

    let mut header = numbered("R2_l", j);
    header.extend(["R2_f", "R2_Hf", "class_error", "Q11_error", "Q22_error"].map(String::from));
    header.extend(numbered("rotation_residual_", j));
    let (q11, q22) = m
        .q_error
        .map_or(("N.A.".to_string(), "N.A.".to_string()), |(a, b)| (num(a), num(b)));
    let mut row: Vec<String> = m.r2_loadings.iter().map(|&v| num(v)).collect();
    row.extend([num(m.r2_f), num(m.r2_hf), num(m.class_error), q11, q22]);
    row.extend(m.rotation_residual.iter().map(|&v| num(v)));
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        crate::io::ensure_dir(parent)?;
    }
    write_csv(&a.out, &header, [row])?;
    Ok(Status::Done)
}
