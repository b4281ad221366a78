use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use serde::Deserialize;
use serde_json::json;
use switchfactor::data_io::{save_table, Table};
use switchfactor::simulate::{load_labels, simulate_panel, Dgp, Pattern, PatternMeta, SimConfig};

use crate::config::{self, overlay};
use crate::io::{ensure_dir, numbered, write_csv, write_json, write_labeled_matrix};
use crate::Status;

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateArgs {
    /// Output directory
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    /// Number of series [default: 100]
    #[arg(long)]
    n: Option<usize>,
    /// Number of periods [default: 300]
    #[arg(long)]
    t: Option<usize>,
    /// 1: two factors, both loadings switch; 2: two factors, only the
    /// second switches; 3: one factor [default: 1]
    #[arg(long)]
    dgp: Option<u8>,
    /// 1: business cycle; 2: one break at T/2; 3: breaks at T/3 and 2T/3;
    /// 4: Markov chain [default: 2]
    #[arg(long)]
    pattern: Option<u8>,
    /// Factor AR(1) coefficient
    #[arg(long)]
    rho: Option<f64>,
    /// Idiosyncratic AR(1) coefficient
    #[arg(long)]
    alpha: Option<f64>,
    /// Cross-sectional error correlation
    #[arg(long)]
    beta: Option<f64>,
    /// Target share of common variance [default: 0.5]
    #[arg(long)]
    r2: Option<f64>,
    /// Scale of the idiosyncratic errors [default: 1]
    #[arg(long)]
    noise_scale: Option<f64>,
    /// File of 1-based labels replacing the pattern's sequence
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Seed [default: $REGIME_FACTOR_SEED or 0]
    #[arg(long)]
    seed: Option<u64>,
}

pub fn run(mut a: SimulateArgs, cfg: Option<&Path>) -> Result<Status> {
    let mut file: SimulateArgs = config::section(cfg, "simulate")?;
    overlay!(a, file; n, t, dgp, pattern, rho, alpha, beta, r2, noise_scale, labels, seed);
    let d = SimConfig::default();
    let labels = a.labels.as_deref().map(load_labels).transpose()?;
    let sim = SimConfig {
        n: a.n.unwrap_or(d.n),
        t: a.t.or(labels.as_ref().map(Vec::len)).unwrap_or(d.t),
        dgp: a.dgp.map(Dgp::from_index).transpose()?.unwrap_or(d.dgp),
        rho: a.rho.unwrap_or(d.rho),
        alpha: a.alpha.unwrap_or(d.alpha),
        beta: a.beta.unwrap_or(d.beta),
        r2: a.r2.unwrap_or(d.r2),
        pattern: a.pattern.map(Pattern::from_index).transpose()?.unwrap_or(d.pattern),
        seed: config::resolve_seed(a.seed)?,
        noise_scale: a.noise_scale.unwrap_or(d.noise_scale),
        labels,
    };
    let truth = simulate_panel::<f64>(&sim)?;

    let out = &a.out;
    ensure_dir(out)?;
    save_table(&Table::from_panel(&truth.panel, None, None)?, &out.join("panel.csv"))?;
    write_csv(
        &out.join("truth_states.csv"),
        &["t".into(), "state".into()],
        truth.states.iter().enumerate().map(|(t, z)| vec![(t + 1).to_string(), (z + 1).to_string()]),
    )?;
    let r = truth.factors.ncols();
    let periods: Vec<String> = (1..=sim.t).map(|t| t.to_string()).collect();
    write_labeled_matrix(&out.join("truth_factors.csv"), "t", &periods, &numbered("f", r), &truth.factors)?;
    let series = numbered("x", sim.n);
    for (j, l) in truth.loadings.iter().enumerate() {
        let path = out.join(format!("truth_loadings_{}.csv", j + 1));
        write_labeled_matrix(&path, "series", &series, &numbered("f", r), l)?;
    }

    let meta = match &truth.pattern_meta {
        PatternMeta::Labels => json!({ "kind": "labels" }),
        PatternMeta::Breaks(b) => json!({ "kind": "breaks", "first_periods": b.iter().map(|t| t + 1).collect::<Vec<_>>() }),
        PatternMeta::Markov(q) => json!({
            "kind": "markov",
            "transition": (0..q.nrows()).map(|i| q.row(i).iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>(),
        }),
    };
    write_json(
        &out.join("sim.json"),
        &json!({
            "n": sim.n,
            "t": sim.t,
            "dgp": sim.dgp.index(),
            "pattern": sim.pattern.index(),
            "rho": sim.rho,
            "alpha": sim.alpha,
            "beta": sim.beta,
            "r2": sim.r2,
            "noise_scale": sim.noise_scale,
            "seed": sim.seed,
            "labels": a.labels.as_ref().map(|p| p.display().to_string()),
            "pattern_meta": meta,
            "loading_variance": switchfactor::simulate::loading_variance(sim.dgp, sim.rho, sim.alpha, sim.r2),
        }),
    )?;
    Ok(Status::Done)
}
