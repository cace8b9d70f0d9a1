//! Per-step losses for the four (forward, reverse) increment pairings, their
//! gradients with respect to the residual, and ELBO assembly.
//!
//! Residuals are `r = ε - ε_θ(x_k, t_k)` where `ε = (x_k - ᾱ_k x_0) / σ_k` is the
//! standardized forward noise. Step `k` uses `w_k = g(t_k)² Δ_{k-1} / (2σ_k²)` and
//! `v_k = g(t_k) √Δ_{k-1} / σ_k`, so `v_k² = 2 w_k`.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergence::UNIF_GAUSS_GAP;
use crate::error::{Error, Result};
use crate::increments::{IncrementKind, UNIFORM_HALF_WIDTH};
use crate::points::PointCloud;
use crate::process::{MomentTable, ProcessSpec};
use crate::rng::child_stream;
use crate::score::{score_to_eps, ScoreModel};
use crate::walk::simulate_forward;

/// Supported `(q, p_θ)` increment pairings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    GaussGauss,
    LaplaceLaplace,
    UnifGauss,
    UnifLaplace,
}

impl Pairing {
    pub const ALL: [Pairing; 4] = [
        Pairing::GaussGauss,
        Pairing::LaplaceLaplace,
        Pairing::UnifGauss,
        Pairing::UnifLaplace,
    ];

    pub fn from_kinds(q: IncrementKind, p: IncrementKind) -> Result<Self> {
        use IncrementKind::*;
        match (q, p) {
            (Gaussian, Gaussian) => Ok(Pairing::GaussGauss),
            (Laplace, Laplace) => Ok(Pairing::LaplaceLaplace),
            (Uniform, Gaussian) => Ok(Pairing::UnifGauss),
            (Uniform, Laplace) => Ok(Pairing::UnifLaplace),
            _ => Err(Error::UnsupportedPairing {
                q: q.to_string(),
                p: p.to_string(),
            }),
        }
    }

    pub fn q_kind(self) -> IncrementKind {
        match self {
            Pairing::GaussGauss => IncrementKind::Gaussian,
            Pairing::LaplaceLaplace => IncrementKind::Laplace,
            Pairing::UnifGauss | Pairing::UnifLaplace => IncrementKind::Uniform,
        }
    }

    pub fn p_kind(self) -> IncrementKind {
        match self {
            Pairing::GaussGauss | Pairing::UnifGauss => IncrementKind::Gaussian,
            Pairing::LaplaceLaplace | Pairing::UnifLaplace => IncrementKind::Laplace,
        }
    }

    pub fn loss(self, r: &[f64], w: f64, v: f64) -> f64 {
        match self {
            Pairing::GaussGauss => loss_gaussian(r, w),
            Pairing::LaplaceLaplace => loss_laplace(r, v),
            Pairing::UnifGauss => loss_unif_gauss(r, w),
            Pairing::UnifLaplace => loss_unif_laplace(r, w, v),
        }
    }

    /// Gradient of [`Pairing::loss`] with respect to `r`, written into `out`.
    pub fn loss_grad(self, r: &[f64], w: f64, v: f64, out: &mut [f64]) {
        match self {
            Pairing::GaussGauss | Pairing::UnifGauss => {
                for (o, ri) in out.iter_mut().zip(r) {
                    *o = 2.0 * w * ri;
                }
            }
            Pairing::LaplaceLaplace => {
                let s = v * l1(r);
                // d/ds (e^{-s} - 1 + s) = 1 - e^{-s}
                let slope = -(-s).exp_m1() * v;
                for (o, ri) in out.iter_mut().zip(r) {
                    *o = slope * sign(*ri);
                }
            }
            Pairing::UnifLaplace => {
                for (o, ri) in out.iter_mut().zip(r) {
                    *o = if ri.abs() <= UNIFORM_HALF_WIDTH {
                        2.0 * w * ri
                    } else {
                        v * sign(*ri)
                    };
                }
            }
        }
    }
}

impl fmt::Display for Pairing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.q_kind(), self.p_kind())
    }
}

/// Subgradient convention: `sign(0) = 0`.
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn l1(r: &[f64]) -> f64 {
    r.iter().map(|x| x.abs()).sum()
}

fn sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

/// `w ‖r‖²`.
pub fn loss_gaussian(r: &[f64], w: f64) -> f64 {
    w * sq(r)
}

/// `exp(-v‖r‖₁) - 1 + v‖r‖₁`.
pub fn loss_laplace(r: &[f64], v: f64) -> f64 {
    let s = v * l1(r);
    (-s).exp_m1() + s
}

/// `w ‖r‖² + d · ½(1 + ln(π/6))`.
pub fn loss_unif_gauss(r: &[f64], w: f64) -> f64 {
    w * sq(r) + r.len() as f64 * UNIF_GAUSS_GAP
}

/// Per coordinate: `w r_i² + ½` when `|r_i| ≤ √3`, else `v |r_i|`.
pub fn loss_unif_laplace(r: &[f64], w: f64, v: f64) -> f64 {
    r.iter()
        .map(|&ri| {
            if ri.abs() <= UNIFORM_HALF_WIDTH {
                w * ri * ri + 0.5
            } else {
                v * ri.abs()
            }
        })
        .sum()
}

/// `w_k`, `v_k` for `k = 0..=T`; entry 0 is unused and set to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepWeights {
    pub w: Vec<f64>,
    pub v: Vec<f64>,
}

pub fn step_weights(spec: &ProcessSpec, table: &MomentTable) -> Result<StepWeights> {
    let steps = spec.steps();
    let mut w = vec![0.0; steps + 1];
    let mut v = vec![0.0; steps + 1];
    for k in 1..=steps {
        let sigma = table.sigma(k);
        if !(sigma > 0.0) {
            return Err(Error::param(format!(
                "σ_{k} = 0; step weights are undefined"
            )));
        }
        let g = spec.g(spec.grid.time(k));
        let dt = spec.grid.delta(k - 1);
        v[k] = g * dt.sqrt() / sigma;
        w[k] = 0.5 * v[k] * v[k];
    }
    Ok(StepWeights { w, v })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElboReport {
    pub q_kind: IncrementKind,
    pub p_kind: IncrementKind,
    pub points: usize,
    pub recon_sigma: f64,
    /// Batch mean of the reconstruction log-likelihood.
    pub l0: f64,
    /// Batch means of `L_k` for `k = 1..T-1`: entry `j` is the term for the
    /// reverse step from `x_{j+2}` to `x_{j+1}`.
    pub lk_terms: Vec<f64>,
    /// Batch mean of the prior KL.
    pub lt: f64,
    /// Batch mean of `L_0 - Σ L_k - L_T`.
    pub total: f64,
    pub total_stderr: f64,
    pub per_point: Vec<f64>,
}

fn log_normal(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

struct PointTerms {
    l0: f64,
    lk: Vec<f64>,
    lt: f64,
}

/// Monte Carlo ELBO: one forward path per data point under `q_kind`, with the
/// per-step loss of the `(q_kind, p_kind)` pairing. Point `i` uses child
/// stream `i` of `seed`. `recon_sigma` defaults to `g(t_1) √Δ_0`.
pub fn elbo(
    x0: &PointCloud,
    score: &(dyn ScoreModel + '_),
    spec: &ProcessSpec,
    q_kind: IncrementKind,
    p_kind: IncrementKind,
    recon_sigma: Option<f64>,
    seed: u64,
) -> Result<ElboReport> {
    let pairing = Pairing::from_kinds(q_kind, p_kind)?;
    let steps = spec.steps();
    if steps < 2 {
        return Err(Error::InvalidGrid(
            "the ELBO needs at least two steps".into(),
        ));
    }
    if x0.dim() != score.dim() {
        return Err(Error::param("data and score dimensions differ"));
    }
    let table = spec.moments();
    let weights = step_weights(spec, &table)?;
    let t1 = spec.grid.time(1);
    let dt0 = spec.grid.delta(0);
    let recon = recon_sigma.unwrap_or_else(|| spec.g(t1) * dt0.sqrt());
    if !(recon > 0.0) {
        return Err(Error::param("reconstruction σ must be positive"));
    }
    let a_t = table.alpha_bar[steps];
    let g_t = table.gamma_bar[steps];
    let d = x0.dim();

    let terms: Vec<PointTerms> = (0..x0.len())
        .into_par_iter()
        .map(|i| -> Result<PointTerms> {
            let xi = x0.row(i);
            let path = simulate_forward(spec, q_kind, xi, &mut child_stream(seed, i as u64))?;
            let mut s = vec![0.0; d];
            let mut r = vec![0.0; d];

            // reconstruction from x_1
            let x1 = path.states.row(1);
            score.score(x1, t1, &mut s);
            let beta1 = spec.beta(t1);
            let g1 = spec.g(t1);
            let l0 = (0..d)
                .map(|j| {
                    let mu = x1[j] - (beta1 * x1[j] - g1 * g1 * s[j]) * dt0;
                    log_normal(xi[j], mu, recon)
                })
                .sum();

            let mut lk = Vec::with_capacity(steps - 1);
            for k in 2..=steps {
                let xk = path.states.row(k);
                let t = spec.grid.time(k);
                let sigma = table.sigma(k);
                score.score(xk, t, &mut s);
                for j in 0..d {
                    let eps = (xk[j] - table.alpha_bar[k] * xi[j]) / sigma;
                    r[j] = eps - score_to_eps(s[j], sigma);
                }
                lk.push(pairing.loss(&r, weights.w[k], weights.v[k]));
            }

            let lt = xi
                .iter()
                .map(|x| 0.5 * (a_t * a_t * x * x + g_t - 1.0 - g_t.ln()))
                .sum();
            Ok(PointTerms { l0, lk, lt })
        })
        .collect::<Result<Vec<_>>>()?;

    let n = terms.len() as f64;
    let per_point: Vec<f64> = terms
        .iter()
        .map(|t| t.l0 - t.lk.iter().sum::<f64>() - t.lt)
        .collect();
    let total = per_point.iter().sum::<f64>() / n;
    let var = if terms.len() > 1 {
        per_point.iter().map(|v| (v - total).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let mut lk_terms = vec![0.0; steps - 1];
    for t in &terms {
        for (acc, v) in lk_terms.iter_mut().zip(&t.lk) {
            *acc += v / n;
        }
    }
    Ok(ElboReport {
        q_kind,
        p_kind,
        points: terms.len(),
        recon_sigma: recon,
        l0: terms.iter().map(|t| t.l0).sum::<f64>() / n,
        lk_terms,
        lt: terms.iter().map(|t| t.lt).sum::<f64>() / n,
        total,
        total_stderr: (var / n).sqrt(),
        per_point,
    })
}
