//! Brute-force reference implementations used by the test suites.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Random column-stochastic matrix with entries bounded away from zero.
pub fn random_stochastic(rng: &mut ChaCha20Rng, j: usize) -> DMatrix<f64> {
    let mut q = DMatrix::from_fn(j, j, |_, _| rng.random_range(0.05..1.0));
    for k in 0..j {
        let s = q.column(k).sum();
        q.column_mut(k).scale_mut(1.0 / s);
    }
    q
}

pub fn random_simplex(rng: &mut ChaCha20Rng, j: usize) -> DVector<f64> {
    let v = DVector::from_fn(j, |_, _| rng.random_range(0.05..1.0));
    let s = v.sum();
    v / s
}

/// `log N(x; 0, ΛΛ' + σ²I)` from the full covariance matrix.
pub fn dense_log_density(x: &DVector<f64>, lambda: &DMatrix<f64>, sigma2: f64) -> f64 {
    let n = x.len();
    let sigma = lambda * lambda.transpose() + DMatrix::identity(n, n) * sigma2;
    let lu = sigma.clone().lu();
    let det = lu.determinant();
    let sol = lu.solve(x).expect("covariance is nonsingular");
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + det.ln() + x.dot(&sol))
}

/// Exact posterior over regime paths by enumerating all `J^T` paths.
pub struct Enumerated {
    pub marginal: DMatrix<f64>,
    /// `pairwise[t-1][(j, k)] = P(z_t = j, z_{t-1} = k | x)`.
    pub pairwise: Vec<DMatrix<f64>>,
    pub loglik: f64,
}

pub fn enumerate_paths(log_dens: &DMatrix<f64>, q: &DMatrix<f64>, phi: &DVector<f64>) -> Enumerated {
    let (n_t, j) = (log_dens.nrows(), log_dens.ncols());
    let total_paths = j.pow(n_t as u32);
    let shift = log_dens.max();
    let mut marginal = DMatrix::zeros(n_t, j);
    let mut pairwise = vec![DMatrix::zeros(j, j); n_t - 1];
    let mut total = 0.0;
    let mut path = vec![0usize; n_t];
    for code in 0..total_paths {
        let mut c = code;
        for z in path.iter_mut() {
            *z = c % j;
            c /= j;
        }
        let mut w = phi[path[0]] * (log_dens[(0, path[0])] - shift).exp();
        for t in 1..n_t {
            w *= q[(path[t], path[t - 1])] * (log_dens[(t, path[t])] - shift).exp();
        }
        total += w;
        for t in 0..n_t {
            marginal[(t, path[t])] += w;
            if t > 0 {
                pairwise[t - 1][(path[t], path[t - 1])] += w;
            }
        }
    }
    marginal /= total;
    for p in &mut pairwise {
        *p /= total;
    }
    Enumerated {
        marginal,
        pairwise,
        loglik: total.ln() + shift * n_t as f64,
    }
}

/// Forward-only smoother: for each `(t, j, k)` the joint probability
/// `P(z_τ, z_t = j, z_{t-1} = k | x_{1:τ})` is propagated forward to
/// `τ = T` and summed. Returns the pairwise probabilities.
pub fn forward_smoother(log_dens: &DMatrix<f64>, q: &DMatrix<f64>, phi: &DVector<f64>) -> Vec<DMatrix<f64>> {
    let (n_t, j) = (log_dens.nrows(), log_dens.ncols());
    let lik = |t: usize, z: usize| log_dens[(t, z)].exp();
    // filtered marginals and one-step likelihoods
    let mut filt = DMatrix::zeros(n_t, j);
    let mut cond = vec![0.0; n_t];
    for t in 0..n_t {
        let pred: Vec<f64> = (0..j)
            .map(|a| if t == 0 { phi[a] } else { (0..j).map(|k| q[(a, k)] * filt[(t - 1, k)]).sum() })
            .collect();
        let num: Vec<f64> = (0..j).map(|a| lik(t, a) * pred[a]).collect();
        cond[t] = num.iter().sum();
        for a in 0..j {
            filt[(t, a)] = num[a] / cond[t];
        }
    }
    let mut out = vec![DMatrix::zeros(j, j); n_t - 1];
    for t in 1..n_t {
        for a in 0..j {
            for k in 0..j {
                // P(z_t = a, z_{t-1} = k | x_{1:t})
                let start = lik(t, a) * q[(a, k)] * filt[(t - 1, k)] / cond[t];
                let mut v: Vec<f64> = (0..j).map(|z| if z == a { start } else { 0.0 }).collect();
                for tau in t + 1..n_t {
                    v = (0..j)
                        .map(|z| (0..j).map(|y| lik(tau, z) * q[(z, y)] * v[y]).sum::<f64>() / cond[tau])
                        .collect();
                }
                out[t - 1][(a, k)] = v.iter().sum();
            }
        }
    }
    out
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix; eigenvalues
/// sorted in decreasing order with matching columns.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut a = a.clone();
    let mut v = DMatrix::identity(n, n);
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| a[(i, j)].powi(2)).sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&x, &y| a[(y, y)].partial_cmp(&a[(x, x)]).unwrap());
    let vals = idx.iter().map(|&i| a[(i, i)]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| v[(r, idx[c])]);
    (vals, vecs)
}

/// `Σ_t w_t x_t x_t' / Σ_t w_t` by explicit loops.
pub fn naive_weighted_cov(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let n = x.ncols();
    let total: f64 = w.iter().sum();
    let mut s = DMatrix::zeros(n, n);
    for t in 0..x.nrows() {
        for a in 0..n {
            for b in 0..n {
                s[(a, b)] += w[t] * x[(t, a)] * x[(t, b)];
            }
        }
    }
    s / total
}

/// Max-abs difference.
pub fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    (a - b).abs().max()
}
