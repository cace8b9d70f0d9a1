//! Score models: exact scores of Gaussian mixtures pushed through the forward
//! process, and a small tanh MLP noise predictor with hand-written backprop.
//!
//! Noise predictions and scores are related by `s = -ε_θ / σ(t)`; the two
//! conversion functions below are the only place this convention lives.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::increments::IncrementKind;
use crate::loss::{step_weights, Pairing};
use crate::process::{MomentTable, ProcessSpec};
use crate::rng::{stream, Stream};
use crate::walk::InitialSampler;

/// Smallest time at which a learned model's `σ(t)` is evaluated.
pub const MIN_SCORE_TIME: f64 = 1e-5;

pub fn eps_to_score(eps: f64, sigma: f64) -> f64 {
    -eps / sigma
}

pub fn score_to_eps(score: f64, sigma: f64) -> f64 {
    -sigma * score
}

/// `∇_x log p_t(x)` for some family of time marginals.
pub trait ScoreModel: Sync {
    fn dim(&self) -> usize;
    fn score(&self, x: &[f64], t: f64, out: &mut [f64]);
}

/// Mixture of axis-aligned Gaussians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Per-coordinate standard deviations.
    pub sds: Vec<Vec<f64>>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, sds: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != sds.len() {
            return Err(Error::param(
                "mixture needs matching, nonempty weights, means and sds",
            ));
        }
        let d = means[0].len();
        if d == 0 || means.iter().chain(&sds).any(|v| v.len() != d) {
            return Err(Error::param(
                "mixture components must share one positive dimension",
            ));
        }
        if weights.iter().any(|w| !(*w > 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12
        {
            return Err(Error::param(
                "mixture weights must be positive and sum to 1",
            ));
        }
        if sds.iter().flatten().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::param("mixture standard deviations must be positive"));
        }
        Ok(Self {
            weights,
            means,
            sds,
        })
    }

    pub fn standard_normal(dim: usize) -> Self {
        Self {
            weights: vec![1.0],
            means: vec![vec![0.0; dim]],
            sds: vec![vec![1.0; dim]],
        }
    }

    /// The two-component 2-D target used by the examples and tests.
    pub fn two_component_2d() -> Self {
        Self {
            weights: vec![0.4, 0.6],
            means: vec![vec![-1.2, -0.6], vec![1.0, 0.8]],
            sds: vec![vec![0.4, 0.5], vec![0.5, 0.35]],
        }
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    /// Law of `c x + sqrt(v) z` for `x` from the mixture and independent standard `z`.
    pub fn propagate(&self, c: f64, v: f64) -> Self {
        Self {
            weights: self.weights.clone(),
            means: self
                .means
                .iter()
                .map(|m| m.iter().map(|x| c * x).collect())
                .collect(),
            sds: self
                .sds
                .iter()
                .map(|s| s.iter().map(|x| (c * c * x * x + v).sqrt()).collect())
                .collect(),
        }
    }

    fn component_logs(&self, x: &[f64]) -> Vec<f64> {
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        (0..self.components())
            .map(|j| {
                let mut acc = self.weights[j].ln();
                for ((xi, m), s) in x.iter().zip(&self.means[j]).zip(&self.sds[j]) {
                    let z = (xi - m) / s;
                    acc -= 0.5 * z * z + s.ln() + half_ln_2pi;
                }
                acc
            })
            .collect()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let logs = self.component_logs(x);
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        top + logs.iter().map(|l| (l - top).exp()).sum::<f64>().ln()
    }

    /// `∇_x log p(x)`.
    pub fn score(&self, x: &[f64], out: &mut [f64]) {
        let logs = self.component_logs(x);
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let resp: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = resp.iter().sum();
        out.iter_mut().for_each(|o| *o = 0.0);
        for (j, r) in resp.iter().enumerate() {
            let r = r / total;
            for (i, o) in out.iter_mut().enumerate() {
                let s = self.sds[j][i];
                *o -= r * (x[i] - self.means[j][i]) / (s * s);
            }
        }
    }
}

impl InitialSampler for GaussianMixture {
    fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn draw(&self, rng: &mut Stream, out: &mut [f64]) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut j = self.components() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                j = i;
                break;
            }
        }
        for (i, o) in out.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(rng);
            *o = self.means[j][i] + self.sds[j][i] * z;
        }
    }
}

/// Exact score of the step-`k` marginal of a Gaussian-increment walk started
/// from the mixture: means `ᾱ_k m_j`, variances `ᾱ_k² s_j² + γ̄_k`.
pub fn analytic_score(
    mix: &GaussianMixture,
    moments: &MomentTable,
    x: &[f64],
    k: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    mix.propagate(moments.alpha_bar[k], moments.gamma_bar[k])
        .score(x, &mut out);
    out
}

/// Exact score of the continuous-time marginals of a mixture under the forward SDE.
#[derive(Debug, Clone)]
pub struct AnalyticScore {
    pub mix: GaussianMixture,
    pub spec: ProcessSpec,
}

impl AnalyticScore {
    pub fn new(mix: GaussianMixture, spec: ProcessSpec) -> Self {
        Self { mix, spec }
    }

    pub fn marginal(&self, t: f64) -> GaussianMixture {
        let m = self.spec.marginal(t);
        self.mix.propagate(m.mean_coef, m.variance)
    }
}

impl ScoreModel for AnalyticScore {
    fn dim(&self) -> usize {
        self.mix.dim()
    }

    fn score(&self, x: &[f64], t: f64, out: &mut [f64]) {
        self.marginal(t).score(x, out);
    }
}

/// `s ≡ 0`.
#[derive(Debug, Clone, Copy)]
pub struct ZeroScore(pub usize);

impl ScoreModel for ZeroScore {
    fn dim(&self) -> usize {
        self.0
    }

    fn score(&self, _x: &[f64], _t: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }
}

/// `(d + 1) → H → H → d` tanh network predicting `ε` from `(x, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpDenoiser {
    pub dim: usize,
    pub hidden: usize,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    len: usize,
}

impl Layout {
    fn new(d: usize, h: usize) -> Self {
        let w1 = 0;
        let b1 = w1 + h * (d + 1);
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let w3 = b2 + h;
        let b3 = w3 + d * h;
        Self {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            len: b3 + d,
        }
    }
}

struct Activations {
    input: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    out: Vec<f64>,
}

impl MlpDenoiser {
    pub fn parameter_count(dim: usize, hidden: usize) -> usize {
        Layout::new(dim, hidden).len
    }

    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            dim,
            hidden,
            params: vec![0.0; Self::parameter_count(dim, hidden)],
        }
    }

    /// Glorot-uniform weights and zero biases.
    pub fn init(dim: usize, hidden: usize, seed: u64) -> Self {
        let mut model = Self::zeros(dim, hidden);
        let l = model.layout();
        let mut rng = stream(seed);
        let mut fill = |p: &mut [f64], fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            p.iter_mut().for_each(|v| *v = rng.random_range(-a..a));
        };
        fill(&mut model.params[l.w1..l.b1], dim + 1, hidden);
        fill(&mut model.params[l.w2..l.b2], hidden, hidden);
        fill(&mut model.params[l.w3..l.b3], hidden, dim);
        model
    }

    pub fn from_params(dim: usize, hidden: usize, params: Vec<f64>) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(Error::param("network dimensions must be positive"));
        }
        let expected = Self::parameter_count(dim, hidden);
        if params.len() != expected {
            return Err(Error::param(format!(
                "expected {expected} parameters for d = {dim}, H = {hidden}, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::param("network parameters must be finite"));
        }
        Ok(Self {
            dim,
            hidden,
            params,
        })
    }

    fn layout(&self) -> Layout {
        Layout::new(self.dim, self.hidden)
    }

    fn activations(&self, x: &[f64], t: f64) -> Activations {
        let (d, h) = (self.dim, self.hidden);
        let l = self.layout();
        let p = &self.params;
        let mut input = x.to_vec();
        input.push(t);
        let dense = |w: usize, b: usize, rows: usize, v: &[f64]| -> Vec<f64> {
            (0..rows)
                .map(|i| {
                    let row = &p[w + i * v.len()..w + (i + 1) * v.len()];
                    p[b + i] + row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect()
        };
        let h1: Vec<f64> = dense(l.w1, l.b1, h, &input)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let h2: Vec<f64> = dense(l.w2, l.b2, h, &h1)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let out = dense(l.w3, l.b3, d, &h2);
        Activations { input, h1, h2, out }
    }

    /// `ε̂(x, t)`.
    pub fn forward(&self, x: &[f64], t: f64) -> Vec<f64> {
        self.activations(x, t).out
    }

    /// Accumulate `(∂out/∂θ)ᵀ g_out` into `grad`.
    fn backward(&self, act: &Activations, g_out: &[f64], grad: &mut [f64]) {
        let (d, h) = (self.dim, self.hidden);
        let l = self.layout();
        let p = &self.params;
        let mut g_h2 = vec![0.0; h];
        for i in 0..d {
            grad[l.b3 + i] += g_out[i];
            for j in 0..h {
                grad[l.w3 + i * h + j] += g_out[i] * act.h2[j];
                g_h2[j] += p[l.w3 + i * h + j] * g_out[i];
            }
        }
        let g_z2: Vec<f64> = g_h2
            .iter()
            .zip(&act.h2)
            .map(|(g, a)| g * (1.0 - a * a))
            .collect();
        let mut g_h1 = vec![0.0; h];
        for i in 0..h {
            grad[l.b2 + i] += g_z2[i];
            for j in 0..h {
                grad[l.w2 + i * h + j] += g_z2[i] * act.h1[j];
                g_h1[j] += p[l.w2 + i * h + j] * g_z2[i];
            }
        }
        let n_in = d + 1;
        for i in 0..h {
            let g_z1 = g_h1[i] * (1.0 - act.h1[i] * act.h1[i]);
            grad[l.b1 + i] += g_z1;
            for j in 0..n_in {
                grad[l.w1 + i * n_in + j] += g_z1 * act.input[j];
            }
        }
    }
}

/// One training example: noisy state, its time, the true standardized noise
/// and the step weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: Vec<f64>,
    pub t: f64,
    pub eps: Vec<f64>,
    pub w: f64,
    pub v: f64,
}

/// Batch-mean loss and its exact gradient with respect to every parameter.
pub fn mlp_gradients(model: &MlpDenoiser, batch: &[Example], pairing: Pairing) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; model.params.len()];
    let mut loss = 0.0;
    let mut r = vec![0.0; model.dim];
    let mut g_r = vec![0.0; model.dim];
    for ex in batch {
        let act = model.activations(&ex.x, ex.t);
        for ((rj, e), o) in r.iter_mut().zip(&ex.eps).zip(&act.out) {
            *rj = e - o;
        }
        loss += pairing.loss(&r, ex.w, ex.v);
        pairing.loss_grad(&r, ex.w, ex.v, &mut g_r);
        // r = ε - out, so ∂L/∂out = -∂L/∂r
        let g_out: Vec<f64> = g_r.iter().map(|g| -g).collect();
        model.backward(&act, &g_out, &mut grad);
    }
    let n = batch.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    (loss / n, grad)
}

/// A noise predictor read as a score, `s = -ε̂ / σ(t)`.
#[derive(Debug, Clone)]
pub struct MlpScore {
    pub model: MlpDenoiser,
    pub spec: ProcessSpec,
}

impl ScoreModel for MlpScore {
    fn dim(&self) -> usize {
        self.model.dim
    }

    fn score(&self, x: &[f64], t: f64, out: &mut [f64]) {
        let sigma = self.spec.sigma(t.max(MIN_SCORE_TIME));
        for (o, e) in out.iter_mut().zip(self.model.forward(x, t)) {
            *o = eps_to_score(e, sigma);
        }
    }
}

/// How training draws `x_k` given `x_0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForwardSampling {
    /// Simulate the walk with the pairing's forward increment kind.
    Exact,
    /// `x_k = ᾱ_k x_0 + σ_k ε` with Gaussian `ε`.
    MomentMatched,
}

/// Step size over the course of training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// Decays linearly from `learning_rate` at the first step towards zero.
    Linear,
}

impl LrSchedule {
    fn rate(self, base: f64, step: usize, steps: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Linear => base * (1.0 - step as f64 / steps as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub pairing: Pairing,
    pub steps: usize,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub batch_size: usize,
    pub hidden: usize,
    pub seed: u64,
    pub forward: ForwardSampling,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pairing: Pairing::GaussGauss,
            steps: 20_000,
            learning_rate: 0.05,
            schedule: LrSchedule::Linear,
            batch_size: 64,
            hidden: 64,
            seed: 0,
            forward: ForwardSampling::Exact,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::param("batch size and hidden width must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("learning rate must be finite and nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: MlpDenoiser,
    /// Batch-mean loss at each step.
    pub trace: Vec<f64>,
}

/// Loss values above this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Draw `count` examples with `k` uniform on `1..=T`.
#[allow(clippy::too_many_arguments)]
pub fn draw_examples<S: InitialSampler + ?Sized>(
    data: &S,
    spec: &ProcessSpec,
    table: &MomentTable,
    weights: &crate::loss::StepWeights,
    q_kind: IncrementKind,
    forward: ForwardSampling,
    count: usize,
    rng: &mut Stream,
) -> Vec<Example> {
    let d = data.dim();
    let steps = spec.steps();
    (0..count)
        .map(|_| {
            let mut x0 = vec![0.0; d];
            data.draw(rng, &mut x0);
            let k = rng.random_range(1..=steps);
            let sigma = table.sigma(k);
            // A Gaussian walk is Gaussian at every step, so for it exact
            // simulation and the moment-matched draw have the same law.
            let direct =
                forward == ForwardSampling::MomentMatched || q_kind == IncrementKind::Gaussian;
            let (x, eps) = if direct {
                let eps: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
                let x = x0
                    .iter()
                    .zip(&eps)
                    .map(|(a, e)| table.alpha_bar[k] * a + sigma * e)
                    .collect();
                (x, eps)
            } else {
                let mut x = x0.clone();
                for i in 0..k {
                    let t = spec.grid.time(i);
                    let dt = spec.grid.delta(i);
                    let (drift, scale) = (spec.beta(t) * dt, spec.g(t) * dt.sqrt());
                    for xi in x.iter_mut() {
                        *xi += drift * *xi + scale * q_kind.sample(rng);
                    }
                }
                let eps = x
                    .iter()
                    .zip(&x0)
                    .map(|(xk, a)| (xk - table.alpha_bar[k] * a) / sigma)
                    .collect();
                (x, eps)
            };
            Example {
                x,
                t: spec.grid.time(k),
                eps,
                w: weights.w[k],
                v: weights.v[k],
            }
        })
        .collect()
}

/// Plain SGD on the batch-mean weighted per-step loss.
pub fn train<S: InitialSampler + ?Sized>(
    data: &S,
    spec: &ProcessSpec,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let table = spec.moments();
    let weights = step_weights(spec, &table)?;
    let mut model = MlpDenoiser::init(data.dim(), cfg.hidden, crate::rng::derive_seed(cfg.seed, 0));
    let mut rng = stream(crate::rng::derive_seed(cfg.seed, 1));
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = draw_examples(
            data,
            spec,
            &table,
            &weights,
            cfg.pairing.q_kind(),
            cfg.forward,
            cfg.batch_size,
            &mut rng,
        );
        let (loss, grad) = mlp_gradients(&model, &batch, cfg.pairing);
        if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
            return Err(Error::Diverged { step, loss });
        }
        trace.push(loss);
        let lr = cfg.schedule.rate(cfg.learning_rate, step, cfg.steps);
        for (p, g) in model.params.iter_mut().zip(&grad) {
            *p -= lr * g;
        }
    }
    Ok(TrainOutput { model, trace })
}

/// Mean per-coordinate squared error of a noise predictor on `examples`.
pub fn eps_mse(predict: impl Fn(&[f64], f64) -> Vec<f64>, examples: &[Example]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for ex in examples {
        let e = predict(&ex.x, ex.t);
        total += e
            .iter()
            .zip(&ex.eps)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>();
        count += e.len();
    }
    total / count as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{Schedule, TimeGrid};
    use crate::quadrature::{integrate, QuadConfig};

    fn vp(steps: usize) -> ProcessSpec {
        ProcessSpec::from_schedule(
            Schedule::DdpmLinear {
                beta_min: 0.1,
                beta_max: 20.0,
            },
            TimeGrid::uniform(steps).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn conventions_are_inverse() {
        assert_eq!(score_to_eps(eps_to_score(0.5, 0.25), 0.25), 0.5);
        assert_eq!(eps_to_score(1.0, 2.0), -0.5);
    }

    #[test]
    fn standard_normal_score() {
        let spec = vp(64);
        let table = spec.moments();
        let mix = GaussianMixture::standard_normal(1);
        for k in [0, 5, 64] {
            // VP tables keep ᾱ² + γ̄ = 1 only in the continuous limit; use the exact propagated variance
            let var = table.alpha_bar[k].powi(2) + table.gamma_bar[k];
            let s = analytic_score(&mix, &table, &[0.8], k);
            assert!((s[0] + 0.8 / var).abs() < 1e-14);
        }
        let a = AnalyticScore::new(mix, spec);
        let mut out = [0.0];
        a.score(&[1.3], 0.4, &mut out);
        assert!((out[0] + 1.3).abs() < 1e-12);
    }

    #[test]
    fn score_vanishes_at_mode_and_by_symmetry() {
        let one =
            GaussianMixture::new(vec![1.0], vec![vec![0.5, -1.0]], vec![vec![0.3, 2.0]]).unwrap();
        let table = vp(16).moments();
        let k = 7;
        let mode: Vec<f64> = one.means[0]
            .iter()
            .map(|m| table.alpha_bar[k] * m)
            .collect();
        assert!(analytic_score(&one, &table, &mode, k)
            .iter()
            .all(|s| s.abs() < 1e-15));
        let sym = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![vec![-2.0], vec![2.0]],
            vec![vec![0.7], vec![0.7]],
        )
        .unwrap();
        assert!(analytic_score(&sym, &table, &[0.0], 3)[0].abs() < 1e-15);
    }

    #[test]
    fn mixture_density_and_score_against_numerics() {
        let mix = GaussianMixture::two_component_2d().propagate(0.7, 0.2);
        let cfg = QuadConfig {
            abs_tol: 1e-11,
            rel_tol: 1e-12,
            max_panels: 4000,
        };
        let total = integrate(
            |x| integrate(|y| mix.log_density(&[x, y]).exp(), -12.0, 12.0, &[], cfg).value,
            -12.0,
            12.0,
            &[],
            cfg,
        )
        .value;
        assert!((total - 1.0).abs() < 1e-8, "{total}");
        let mut rng = stream(4);
        for _ in 0..100 {
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let mut s = [0.0; 2];
            mix.score(&x, &mut s);
            for j in 0..2 {
                let h = 1e-5;
                let mut a = x;
                let mut b = x;
                a[j] += h;
                b[j] -= h;
                let fd = (mix.log_density(&a) - mix.log_density(&b)) / (2.0 * h);
                assert!((fd - s[j]).abs() < 1e-6, "{fd} vs {}", s[j]);
            }
        }
    }

    #[test]
    fn mixture_validation() {
        assert!(
            GaussianMixture::new(vec![0.5, 0.6], vec![vec![0.0]; 2], vec![vec![1.0]; 2]).is_err()
        );
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0]], vec![vec![0.0]]).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0, 1.0]], vec![vec![1.0]]).is_err());
    }

    #[test]
    fn mlp_shapes_and_determinism() {
        let zero = MlpDenoiser::zeros(3, 5);
        assert_eq!(zero.forward(&[1.0, -2.0, 0.5], 0.3), vec![0.0; 3]);
        let a = MlpDenoiser::init(2, 8, 42);
        let b = MlpDenoiser::init(2, 8, 42);
        let out = a.forward(&[0.1, 0.2], 0.5);
        assert_eq!(out.len(), 2);
        assert_eq!(out, b.forward(&[0.1, 0.2], 0.5));
        assert!(MlpDenoiser::from_params(2, 8, vec![0.0; 3]).is_err());
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let model = MlpDenoiser::init(2, 8, 1);
        let x = vec![0.3, -0.4];
        let eps = model.forward(&x, 0.2);
        let batch = [Example {
            x,
            t: 0.2,
            eps,
            w: 0.3,
            v: 0.6f64.sqrt(),
        }];
        let (loss, grad) = mlp_gradients(&model, &batch, Pairing::GaussGauss);
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = MlpDenoiser::init(2, 4, 9);
        let json = serde_json::to_string(&m).unwrap();
        let back: MlpDenoiser = serde_json::from_str(&json).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn zero_learning_rate_and_seed_determinism() {
        let spec = vp(32);
        let mix = GaussianMixture::two_component_2d();
        let cfg = TrainConfig {
            steps: 20,
            learning_rate: 0.0,
            hidden: 8,
            batch_size: 8,
            ..Default::default()
        };
        let out = train(&mix, &spec, &cfg).unwrap();
        assert_eq!(
            out.model,
            MlpDenoiser::init(2, 8, crate::rng::derive_seed(0, 0))
        );
        let cfg = TrainConfig {
            learning_rate: 0.05,
            ..cfg
        };
        let a = train(&mix, &spec, &cfg).unwrap();
        let b = train(&mix, &spec, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn divergence_guard() {
        let spec = vp(32);
        let mix = GaussianMixture::two_component_2d();
        let cfg = TrainConfig {
            steps: 200,
            learning_rate: 1e4,
            hidden: 8,
            batch_size: 8,
            ..Default::default()
        };
        assert!(matches!(
            train(&mix, &spec, &cfg),
            Err(Error::Diverged { .. })
        ));
    }
}
