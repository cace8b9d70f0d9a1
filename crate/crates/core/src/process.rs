//! Forward process: time grids, linear drift and diffusion schedules, and the
//! closed-form moments of the structured random walk they induce.
//!
//! Indexing convention used throughout the crate: step `k` (for `k = 1..=T`)
//! moves the walk from `x_{k-1}` to `x_k`, with drift and diffusion evaluated at
//! the left endpoint `t_{k-1}` and step length `Δ_{k-1} = t_k - t_{k-1}`. With
//! `a_k = 1 + β(t_{k-1}) Δ_{k-1}` and `v_k = g(t_{k-1})² Δ_{k-1}`,
//!
//! ```text
//! ᾱ_k = a_k ᾱ_{k-1},            ᾱ_0 = 1
//! γ̄_k = a_k² γ̄_{k-1} + v_k,     γ̄_0 = 0
//! ```
//!
//! which unrolls to `ᾱ_k = Π a_i` and `γ̄_k = Σ_i (ᾱ_k / ᾱ_i)² v_i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{self, QuadConfig};

/// Ordered time points `0 = t_0 < t_1 < … < t_T = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
    deltas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Spacing {
    Uniform,
    Custom(Vec<f64>),
}

impl TimeGrid {
    pub fn uniform(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidGrid("step count must be at least 1".into()));
        }
        let n = steps as f64;
        let mut times: Vec<f64> = (0..=steps).map(|k| k as f64 / n).collect();
        times[steps] = 1.0;
        Ok(Self {
            times,
            deltas: vec![1.0 / n; steps],
        })
    }

    pub fn custom(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidGrid(
                "a custom grid needs at least two time points".into(),
            ));
        }
        if times[0] != 0.0 || *times.last().unwrap() != 1.0 {
            return Err(Error::InvalidGrid(format!(
                "grid must start at 0 and end at 1, got [{}, {}]",
                times[0],
                times.last().unwrap()
            )));
        }
        if let Some(w) = times.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidGrid(format!(
                "times must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        let deltas = times.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Self { times, deltas })
    }

    pub fn steps(&self) -> usize {
        self.deltas.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn time(&self, k: usize) -> f64 {
        self.times[k]
    }

    /// `Δ_k = t_{k+1} - t_k`, for `k < T`.
    pub fn delta(&self, k: usize) -> f64 {
        self.deltas[k]
    }
}

pub fn build_grid(steps: usize, spacing: &Spacing) -> Result<TimeGrid> {
    match spacing {
        Spacing::Uniform => TimeGrid::uniform(steps),
        Spacing::Custom(times) => {
            if steps == 0 {
                return Err(Error::InvalidGrid("step count must be at least 1".into()));
            }
            if times.len() != steps + 1 {
                return Err(Error::InvalidGrid(format!(
                    "custom grid for T = {steps} needs {} points, got {}",
                    steps + 1,
                    times.len()
                )));
            }
            TimeGrid::custom(times.clone())
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Drift coefficient `β(t)` of the linear drift `f(x, t) = β(t) x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DriftSpec {
    Constant {
        beta: f64,
    },
    /// Variance-preserving drift `-½ b(t)` with `b` linear from `beta_min` to `beta_max`.
    DdpmLinear {
        beta_min: f64,
        beta_max: f64,
    },
    /// Variance-preserving drift derived from a linear log-SNR schedule
    /// `γ(t) = gamma_min + (gamma_max - gamma_min) t`, with `α(t)² = sigmoid(-γ(t))`.
    VdmLinear {
        gamma_min: f64,
        gamma_max: f64,
    },
}

impl DriftSpec {
    pub fn beta(&self, t: f64) -> f64 {
        match *self {
            DriftSpec::Constant { beta } => beta,
            DriftSpec::DdpmLinear { beta_min, beta_max } => {
                -0.5 * (beta_min + t * (beta_max - beta_min))
            }
            DriftSpec::VdmLinear {
                gamma_min,
                gamma_max,
            } => {
                let slope = gamma_max - gamma_min;
                -0.5 * slope * sigmoid(gamma_min + slope * t)
            }
        }
    }

    /// `B(t) = ∫_0^t β(s) ds`.
    pub fn integral(&self, t: f64) -> f64 {
        match *self {
            DriftSpec::Constant { beta } => beta * t,
            DriftSpec::DdpmLinear { beta_min, beta_max } => {
                -0.5 * (beta_min * t + 0.5 * (beta_max - beta_min) * t * t)
            }
            DriftSpec::VdmLinear {
                gamma_min,
                gamma_max,
            } => {
                let gamma_t = gamma_min + (gamma_max - gamma_min) * t;
                0.5 * (softplus(gamma_min) - softplus(gamma_t))
            }
        }
    }

    /// Lipschitz constant of `β` on `[0, 1]`.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            DriftSpec::Constant { .. } => 0.0,
            DriftSpec::DdpmLinear { beta_min, beta_max } => 0.5 * (beta_max - beta_min).abs(),
            // |d/dt ½ γ' sigmoid(γ)| = ½ γ'² sigmoid'(γ) ≤ γ'² / 8
            DriftSpec::VdmLinear {
                gamma_min,
                gamma_max,
            } => (gamma_max - gamma_min).powi(2) / 8.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            DriftSpec::Constant { beta } => beta.is_finite(),
            DriftSpec::DdpmLinear { beta_min, beta_max } => {
                beta_min.is_finite() && beta_max.is_finite()
            }
            DriftSpec::VdmLinear {
                gamma_min,
                gamma_max,
            } => gamma_min.is_finite() && gamma_max.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!(
                "non-finite drift parameters: {self:?}"
            )))
        }
    }
}

/// Diffusion coefficient `g(t) ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DiffusionSpec {
    Constant {
        g: f64,
    },
    /// `g(t) = sqrt(b(t))`, `b` linear from `beta_min` to `beta_max`.
    DdpmLinear {
        beta_min: f64,
        beta_max: f64,
    },
    /// `g(t)² = γ'(t) sigmoid(γ(t))` for the linear log-SNR schedule.
    VdmLinear {
        gamma_min: f64,
        gamma_max: f64,
    },
}

impl DiffusionSpec {
    pub fn g(&self, t: f64) -> f64 {
        match *self {
            DiffusionSpec::Constant { g } => g,
            DiffusionSpec::DdpmLinear { beta_min, beta_max } => {
                (beta_min + t * (beta_max - beta_min)).max(0.0).sqrt()
            }
            DiffusionSpec::VdmLinear {
                gamma_min,
                gamma_max,
            } => {
                let slope = gamma_max - gamma_min;
                (slope * sigmoid(gamma_min + slope * t)).max(0.0).sqrt()
            }
        }
    }

    /// Lipschitz constant of `g` on `[0, 1]`.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            DiffusionSpec::Constant { .. } => 0.0,
            DiffusionSpec::DdpmLinear { beta_min, beta_max } => {
                let lo = beta_min.min(beta_max);
                if lo > 0.0 {
                    (beta_max - beta_min).abs() / (2.0 * lo.sqrt())
                } else {
                    f64::INFINITY
                }
            }
            // dg/dt = ½ γ'^{3/2} σ (1 - σ²) with σ² = sigmoid(γ); max of s(1 - s²) is 2 / (3√3)
            DiffusionSpec::VdmLinear {
                gamma_min,
                gamma_max,
            } => {
                let slope = (gamma_max - gamma_min).abs();
                0.5 * slope.powf(1.5) * 2.0 / (3.0 * 3f64.sqrt())
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = match *self {
            DiffusionSpec::Constant { g } => !(g.is_finite() && g >= 0.0),
            DiffusionSpec::DdpmLinear { beta_min, beta_max } => {
                !(beta_min >= 0.0 && beta_max >= 0.0 && beta_max.is_finite())
            }
            DiffusionSpec::VdmLinear {
                gamma_min,
                gamma_max,
            } => !(gamma_min.is_finite() && gamma_max.is_finite() && gamma_max >= gamma_min),
        };
        if bad {
            Err(Error::param(format!(
                "diffusion must be finite and nonnegative on [0, 1]: {self:?}"
            )))
        } else {
            Ok(())
        }
    }
}

/// Named schedule families as they appear in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case")]
pub enum Schedule {
    Constant { beta: f64, g: f64 },
    DdpmLinear { beta_min: f64, beta_max: f64 },
    VdmLinear { gamma_min: f64, gamma_max: f64 },
}

impl Schedule {
    pub fn parts(&self) -> (DriftSpec, DiffusionSpec) {
        match *self {
            Schedule::Constant { beta, g } => {
                (DriftSpec::Constant { beta }, DiffusionSpec::Constant { g })
            }
            Schedule::DdpmLinear { beta_min, beta_max } => (
                DriftSpec::DdpmLinear { beta_min, beta_max },
                DiffusionSpec::DdpmLinear { beta_min, beta_max },
            ),
            Schedule::VdmLinear {
                gamma_min,
                gamma_max,
            } => (
                DriftSpec::VdmLinear {
                    gamma_min,
                    gamma_max,
                },
                DiffusionSpec::VdmLinear {
                    gamma_min,
                    gamma_max,
                },
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum SpacingRepr {
    Named(NamedSpacing),
    Custom(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum NamedSpacing {
    Uniform,
}

impl From<SpacingRepr> for Spacing {
    fn from(r: SpacingRepr) -> Self {
        match r {
            SpacingRepr::Named(NamedSpacing::Uniform) => Spacing::Uniform,
            SpacingRepr::Custom(v) => Spacing::Custom(v),
        }
    }
}

impl From<Spacing> for SpacingRepr {
    fn from(s: Spacing) -> Self {
        match s {
            Spacing::Uniform => SpacingRepr::Named(NamedSpacing::Uniform),
            Spacing::Custom(v) => SpacingRepr::Custom(v),
        }
    }
}

impl Serialize for Spacing {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SpacingRepr::from(self.clone()).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Spacing {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        SpacingRepr::deserialize(d).map(Spacing::from)
    }
}

/// JSON schedule block: `{"kind": …, "params": {…}, "T": …, "spacing": …}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    #[serde(flatten)]
    pub schedule: Schedule,
    #[serde(rename = "T")]
    pub steps: usize,
    #[serde(default = "uniform_spacing")]
    pub spacing: Spacing,
}

fn uniform_spacing() -> Spacing {
    Spacing::Uniform
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<ProcessSpec> {
        let grid = build_grid(self.steps, &self.spacing)?;
        let (drift, diffusion) = self.schedule.parts();
        ProcessSpec::new(drift, diffusion, grid)
    }
}

/// Mean coefficient and variance of the continuous-time marginal started from
/// a point mass: `x(t) | x(0) ~ (mean_coef · x(0), variance)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Marginal {
    pub mean_coef: f64,
    pub variance: f64,
}

/// The forward SDE `dx = β(t) x dt + g(t) dw` together with its discretization grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessSpec {
    pub drift: DriftSpec,
    pub diffusion: DiffusionSpec,
    pub grid: TimeGrid,
}

impl ProcessSpec {
    pub fn new(drift: DriftSpec, diffusion: DiffusionSpec, grid: TimeGrid) -> Result<Self> {
        drift.validate()?;
        diffusion.validate()?;
        Ok(Self {
            drift,
            diffusion,
            grid,
        })
    }

    pub fn from_schedule(schedule: Schedule, grid: TimeGrid) -> Result<Self> {
        let (drift, diffusion) = schedule.parts();
        Self::new(drift, diffusion, grid)
    }

    /// Same drift and diffusion on a different grid.
    pub fn with_grid(&self, grid: TimeGrid) -> Self {
        Self {
            drift: self.drift,
            diffusion: self.diffusion,
            grid,
        }
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn beta(&self, t: f64) -> f64 {
        self.drift.beta(t)
    }

    pub fn g(&self, t: f64) -> f64 {
        self.diffusion.g(t)
    }

    /// Per-step multiplier `a_k` and noise variance `v_k` for steps `k = 1..=T`.
    pub fn step_coefficients(&self) -> Vec<(f64, f64)> {
        (0..self.steps())
            .map(|i| {
                let t = self.grid.time(i);
                let dt = self.grid.delta(i);
                let g = self.g(t);
                (1.0 + self.beta(t) * dt, g * g * dt)
            })
            .collect()
    }

    /// Moments of the discrete walk by forward recursion.
    pub fn moments(&self) -> MomentTable {
        moments_from_steps(self.grid.times(), &self.step_coefficients())
    }

    /// Moments from the unrolled product and sum; used to cross-check the recursion.
    pub fn moments_explicit(&self) -> Result<MomentTable> {
        explicit_moments_from_steps(self.grid.times(), &self.step_coefficients())
    }

    fn variance_preserving(&self) -> bool {
        match (self.drift, self.diffusion) {
            (
                DriftSpec::DdpmLinear { beta_min, beta_max },
                DiffusionSpec::DdpmLinear {
                    beta_min: b0,
                    beta_max: b1,
                },
            ) => beta_min == b0 && beta_max == b1,
            (
                DriftSpec::VdmLinear {
                    gamma_min,
                    gamma_max,
                },
                DiffusionSpec::VdmLinear {
                    gamma_min: g0,
                    gamma_max: g1,
                },
            ) => gamma_min == g0 && gamma_max == g1,
            _ => false,
        }
    }

    /// Continuous-time marginal at `t` for a process started from a point.
    pub fn marginal(&self, t: f64) -> Marginal {
        let b_t = self.drift.integral(t);
        let mean_coef = b_t.exp();
        let variance = if self.variance_preserving() {
            -(2.0 * b_t).exp_m1()
        } else if let (DriftSpec::Constant { beta }, DiffusionSpec::Constant { g }) =
            (self.drift, self.diffusion)
        {
            if beta == 0.0 {
                g * g * t
            } else {
                g * g * (2.0 * beta * t).exp_m1() / (2.0 * beta)
            }
        } else {
            let integrand = |s: f64| {
                let g = self.g(s);
                (2.0 * (b_t - self.drift.integral(s))).exp() * g * g
            };
            quadrature::integrate(integrand, 0.0, t, &[], QuadConfig::default()).value
        };
        Marginal {
            mean_coef,
            variance,
        }
    }

    /// Standard deviation of the continuous marginal, `σ(t)`.
    pub fn sigma(&self, t: f64) -> f64 {
        self.marginal(t).variance.max(0.0).sqrt()
    }
}

/// Per-step moments `ᾱ_k`, `γ̄_k` for `k = 0..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    pub times: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    pub gamma_bar: Vec<f64>,
    /// First step whose multiplier `1 + β_k` is exactly zero, if any; the mean
    /// coefficient is zero from there on and the ratio form is undefined.
    pub collapsed_at: Option<usize>,
}

impl MomentTable {
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn sigma(&self, k: usize) -> f64 {
        self.gamma_bar[k].max(0.0).sqrt()
    }
}

/// Forward recursion over `(a_k, v_k)` pairs.
pub fn moments_from_steps(times: &[f64], steps: &[(f64, f64)]) -> MomentTable {
    let mut alpha_bar = Vec::with_capacity(steps.len() + 1);
    let mut gamma_bar = Vec::with_capacity(steps.len() + 1);
    alpha_bar.push(1.0);
    gamma_bar.push(0.0);
    let mut collapsed_at = None;
    for (k, &(a, v)) in steps.iter().enumerate() {
        if a == 0.0 && collapsed_at.is_none() {
            collapsed_at = Some(k + 1);
        }
        alpha_bar.push(alpha_bar[k] * a);
        gamma_bar.push(a * a * gamma_bar[k] + v);
    }
    MomentTable {
        times: times.to_vec(),
        alpha_bar,
        gamma_bar,
        collapsed_at,
    }
}

/// `ᾱ_k = Π_{i≤k} a_i`, `γ̄_k = Σ_{i≤k} (ᾱ_k / ᾱ_i)² v_i`.
pub fn explicit_moments_from_steps(times: &[f64], steps: &[(f64, f64)]) -> Result<MomentTable> {
    if let Some(i) = steps.iter().position(|&(a, _)| a == 0.0) {
        return Err(Error::param(format!(
            "step {} has 1 + β = 0; the ratio form is undefined",
            i + 1
        )));
    }
    let mut alpha_bar = vec![1.0];
    for &(a, _) in steps {
        let last = *alpha_bar.last().unwrap();
        alpha_bar.push(last * a);
    }
    let gamma_bar = (0..=steps.len())
        .map(|k| {
            (1..=k)
                .map(|i| {
                    let ratio = alpha_bar[k] / alpha_bar[i];
                    ratio * ratio * steps[i - 1].1
                })
                .sum()
        })
        .collect();
    Ok(MomentTable {
        times: times.to_vec(),
        alpha_bar,
        gamma_bar,
        collapsed_at: None,
    })
}

/// Moments of the discrete DDPM forward chain `x_k = sqrt(1 - β_k) x_{k-1} + sqrt(β_k) ε`,
/// read as a structured walk with multiplier `sqrt(1 - β_k)` and noise variance `β_k`.
/// The grid is uniform with `T = betas.len()`.
pub fn ddpm_moments(betas: &[f64]) -> Result<MomentTable> {
    if betas.is_empty() {
        return Err(Error::InvalidGrid("DDPM schedule is empty".into()));
    }
    if let Some(b) = betas.iter().find(|b| !(**b >= 0.0 && **b < 1.0)) {
        return Err(Error::param(format!("DDPM β must lie in [0, 1), got {b}")));
    }
    let grid = TimeGrid::uniform(betas.len())?;
    let steps: Vec<(f64, f64)> = betas.iter().map(|&b| ((1.0 - b).sqrt(), b)).collect();
    Ok(moments_from_steps(grid.times(), &steps))
}

/// The usual DDPM linear β schedule from `beta_1` to `beta_T`.
pub fn ddpm_linear_betas(steps: usize, beta_1: f64, beta_t: f64) -> Vec<f64> {
    if steps == 1 {
        return vec![beta_1];
    }
    (0..steps)
        .map(|i| beta_1 + (beta_t - beta_1) * i as f64 / (steps - 1) as f64)
        .collect()
}

/// `max_k |γ̄_k + ᾱ_k² - 1|`; zero (to rounding) for any DDPM table.
pub fn ddpm_identity_residual(table: &MomentTable) -> f64 {
    table
        .alpha_bar
        .iter()
        .zip(&table.gamma_bar)
        .map(|(a, g)| (g + a * a - 1.0).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VdmMoments {
    pub table: MomentTable,
    /// Whether `γ` was nondecreasing on the grid. When it is not, some step
    /// noise variances are negative and the chain is not a valid forward process.
    pub monotone: bool,
}

/// Moments of the VDM sampling chain for a log-SNR function `γ`, with
/// `α_k² = sigmoid(-γ(t_k))` and `σ_k² = sigmoid(γ(t_k))` for `k ≥ 1`. Step
/// `k` has multiplier `α_k / α_{k-1}` and noise variance `σ_k² - (α_k/α_{k-1})² σ_{k-1}²`;
/// the clean-data boundary uses `α_0 = 1`, `σ_0 = 0`.
pub fn vdm_moments<F: Fn(f64) -> f64>(gamma: F, grid: &TimeGrid) -> VdmMoments {
    let gammas: Vec<f64> = grid.times()[1..].iter().map(|&t| gamma(t)).collect();
    let monotone = gammas.windows(2).all(|w| w[1] >= w[0]);
    if !monotone {
        log::warn!("γ is not monotone on the grid; VDM step variances may be negative");
    }
    let mut prev_alpha = 1.0;
    let mut prev_var = 0.0;
    let steps: Vec<(f64, f64)> = gammas
        .iter()
        .map(|&gm| {
            let alpha = sigmoid(-gm).sqrt();
            let var = sigmoid(gm);
            let ratio = alpha / prev_alpha;
            let noise = var - ratio * ratio * prev_var;
            prev_alpha = alpha;
            prev_var = var;
            (ratio, noise)
        })
        .collect();
    VdmMoments {
        table: moments_from_steps(grid.times(), &steps),
        monotone,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brownian(steps: usize) -> ProcessSpec {
        ProcessSpec::new(
            DriftSpec::Constant { beta: 0.0 },
            DiffusionSpec::Constant { g: 1.0 },
            TimeGrid::uniform(steps).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn uniform_grid_points() {
        let g = build_grid(4, &Spacing::Uniform).unwrap();
        assert_eq!(g.times(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(g.deltas().iter().all(|&d| d == 0.25));
        let one = build_grid(1, &Spacing::Uniform).unwrap();
        assert_eq!(one.times(), &[0.0, 1.0]);
        assert_eq!(one.deltas(), &[1.0]);
    }

    #[test]
    fn custom_grid_deltas() {
        let g = build_grid(2, &Spacing::Custom(vec![0.0, 0.9, 1.0])).unwrap();
        assert_eq!(g.delta(0), 0.9);
        assert!((g.delta(1) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn grid_errors() {
        assert!(build_grid(0, &Spacing::Uniform).is_err());
        assert!(build_grid(2, &Spacing::Custom(vec![0.0, 0.6, 0.5])).is_err());
        assert!(build_grid(2, &Spacing::Custom(vec![0.0, 0.5, 0.5, 1.0])).is_err());
        assert!(TimeGrid::custom(vec![0.1, 1.0]).is_err());
        assert!(TimeGrid::custom(vec![0.0, 0.5]).is_err());
    }

    #[test]
    fn brownian_moments_by_hand() {
        let m = brownian(4).moments();
        assert_eq!(m.alpha_bar[0], 1.0);
        assert_eq!(m.gamma_bar[0], 0.0);
        assert_eq!(m.alpha_bar[4], 1.0);
        assert!((m.gamma_bar[4] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn decaying_mean_approaches_exp_minus_one() {
        let mut last_err = f64::INFINITY;
        for steps in [10, 100, 1000, 10000] {
            let spec = ProcessSpec::new(
                DriftSpec::Constant { beta: -1.0 },
                DiffusionSpec::Constant { g: 0.0 },
                TimeGrid::uniform(steps).unwrap(),
            )
            .unwrap();
            let m = spec.moments();
            let expected = (1.0 - 1.0 / steps as f64).powi(steps as i32);
            assert!((m.alpha_bar[steps] - expected).abs() < 1e-12);
            assert_eq!(m.gamma_bar[steps], 0.0);
            let err = (m.alpha_bar[steps] - (-1f64).exp()).abs();
            assert!(err < last_err);
            last_err = err;
        }
        assert!(last_err < 1e-4);
    }

    #[test]
    fn collapse_is_flagged() {
        let spec = ProcessSpec::new(
            DriftSpec::Constant { beta: -2.0 },
            DiffusionSpec::Constant { g: 1.0 },
            TimeGrid::uniform(2).unwrap(),
        )
        .unwrap();
        let m = spec.moments();
        assert_eq!(m.collapsed_at, Some(1));
        assert_eq!(m.alpha_bar[1], 0.0);
        assert!(spec.moments_explicit().is_err());
    }

    #[test]
    fn ddpm_examples() {
        let m = ddpm_moments(&[0.0]).unwrap();
        assert_eq!((m.alpha_bar[1], m.gamma_bar[1]), (1.0, 0.0));
        let m = ddpm_moments(&[0.5, 0.5]).unwrap();
        assert!((m.alpha_bar[2] - 0.5).abs() < 1e-15);
        assert!((m.gamma_bar[2] - 0.75).abs() < 1e-15);
        assert!(ddpm_moments(&[1.0]).is_err());
        assert!(ddpm_moments(&[-0.1]).is_err());
        assert!(ddpm_moments(&[]).is_err());
    }

    #[test]
    fn ddpm_linear_schedule_identity() {
        let betas = ddpm_linear_betas(1000, 1e-4, 0.02);
        let m = ddpm_moments(&betas).unwrap();
        assert!(ddpm_identity_residual(&m) < 1e-10);
    }

    #[test]
    fn vdm_constant_gamma() {
        let grid = TimeGrid::uniform(8).unwrap();
        let v = vdm_moments(|_| 0.0, &grid);
        assert!(v.monotone);
        for k in 1..=8 {
            assert!((v.table.alpha_bar[k].powi(2) - 0.5).abs() < 1e-15);
            assert!((v.table.gamma_bar[k] - 0.5).abs() < 1e-15);
        }
        assert_eq!(v.table.alpha_bar[0], 1.0);
        assert_eq!(v.table.gamma_bar[0], 0.0);
    }

    #[test]
    fn vdm_linear_gamma_matches_sigmoid() {
        let grid = TimeGrid::uniform(16).unwrap();
        let gamma = |t: f64| -5.0 + 10.0 * t;
        let v = vdm_moments(gamma, &grid);
        for k in 1..=16 {
            let gm = gamma(grid.time(k));
            // direct sigmoid evaluation as the oracle
            let alpha2 = 1.0 / (1.0 + gm.exp());
            let sigma2 = 1.0 / (1.0 + (-gm).exp());
            assert!((v.table.alpha_bar[k] - alpha2.sqrt()).abs() < 1e-9);
            assert!((v.table.gamma_bar[k] - sigma2).abs() < 1e-9);
        }
    }

    #[test]
    fn vdm_non_monotone_is_flagged_not_rejected() {
        let grid = TimeGrid::uniform(4).unwrap();
        let v = vdm_moments(|t| (6.0 * t).sin(), &grid);
        assert!(!v.monotone);
        assert_eq!(v.table.steps(), 4);
    }

    #[test]
    fn continuous_marginals() {
        let spec = ProcessSpec::from_schedule(
            Schedule::DdpmLinear {
                beta_min: 0.1,
                beta_max: 20.0,
            },
            TimeGrid::uniform(10).unwrap(),
        )
        .unwrap();
        let m = spec.marginal(1.0);
        let b: f64 = -0.5 * (0.1 + 0.5 * 19.9);
        assert!((m.mean_coef - b.exp()).abs() < 1e-15);
        assert!((m.variance + m.mean_coef.powi(2) - 1.0).abs() < 1e-14);

        let ou = ProcessSpec::from_schedule(
            Schedule::Constant {
                beta: -1.0,
                g: 2f64.sqrt(),
            },
            TimeGrid::uniform(10).unwrap(),
        )
        .unwrap();
        let m = ou.marginal(0.7);
        assert!((m.variance - (1.0 - (-1.4f64).exp())).abs() < 1e-14);

        // quadrature fallback agrees with the closed form for a mixed pairing
        let mixed = ProcessSpec::new(
            DriftSpec::Constant { beta: -1.0 },
            DiffusionSpec::DdpmLinear {
                beta_min: 2.0,
                beta_max: 2.0,
            },
            TimeGrid::uniform(10).unwrap(),
        )
        .unwrap();
        assert!((mixed.marginal(0.7).variance - m.variance).abs() < 1e-12);
    }

    #[test]
    fn vdm_process_marginal_matches_sigmoid_ratio() {
        let spec = ProcessSpec::from_schedule(
            Schedule::VdmLinear {
                gamma_min: -6.0,
                gamma_max: 6.0,
            },
            TimeGrid::uniform(4).unwrap(),
        )
        .unwrap();
        let a2 = |t: f64| 1.0 / (1.0 + (-6.0 + 12.0 * t).exp());
        let m = spec.marginal(0.6);
        assert!((m.mean_coef.powi(2) - a2(0.6) / a2(0.0)).abs() < 1e-12);
        // drift integral agrees with quadrature of β
        let q = quadrature::integrate(|s| spec.beta(s), 0.0, 0.6, &[], QuadConfig::default());
        assert!((q.value - spec.drift.integral(0.6)).abs() < 1e-12);
    }

    #[test]
    fn schedule_config_json_round_trip() {
        let json = r#"{"kind":"ddpm-linear","params":{"beta_min":0.1,"beta_max":20.0},"T":64,"spacing":"uniform"}"#;
        let cfg: ScheduleConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.steps, 64);
        assert_eq!(cfg.spacing, Spacing::Uniform);
        let back: ScheduleConfig =
            serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);

        let custom =
            r#"{"kind":"constant","params":{"beta":0.0,"g":1.0},"T":2,"spacing":[0.0,0.9,1.0]}"#;
        let cfg: ScheduleConfig = serde_json::from_str(custom).unwrap();
        let spec = cfg.build().unwrap();
        assert_eq!(spec.grid.delta(0), 0.9);
    }

    #[test]
    fn lipschitz_constants_bound_finite_differences() {
        let specs = [
            Schedule::DdpmLinear {
                beta_min: 0.1,
                beta_max: 20.0,
            },
            Schedule::VdmLinear {
                gamma_min: -5.0,
                gamma_max: 7.0,
            },
        ];
        for s in specs {
            let (drift, diff) = s.parts();
            let h = 1e-4;
            for i in 0..1000 {
                let t = i as f64 / 1000.0 * (1.0 - h);
                let db = (drift.beta(t + h) - drift.beta(t)).abs() / h;
                let dg = (diff.g(t + h) - diff.g(t)).abs() / h;
                assert!(db <= drift.lipschitz() * (1.0 + 1e-6), "{s:?} drift at {t}");
                assert!(
                    dg <= diff.lipschitz() * (1.0 + 1e-6),
                    "{s:?} diffusion at {t}"
                );
            }
        }
    }

    proptest! {
        #[test]
        fn recursion_matches_explicit_form(
            betas in proptest::collection::vec(-3.0f64..3.0, 1..40),
            gs in proptest::collection::vec(0.0f64..3.0, 40),
        ) {
            let steps = betas.len();
            let grid = TimeGrid::uniform(steps).unwrap();
            let coeffs: Vec<(f64, f64)> = betas
                .iter()
                .zip(&gs)
                .map(|(b, g)| (1.0 + b / steps as f64, g * g / steps as f64))
                .collect();
            prop_assume!(coeffs.iter().all(|c| c.0 != 0.0));
            let rec = moments_from_steps(grid.times(), &coeffs);
            let exp = explicit_moments_from_steps(grid.times(), &coeffs).unwrap();
            for k in 0..=steps {
                let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-300);
                prop_assert!(rel(rec.alpha_bar[k], exp.alpha_bar[k]) < 1e-10);
                if rec.gamma_bar[k] > 0.0 {
                    prop_assert!(rel(rec.gamma_bar[k], exp.gamma_bar[k]) < 1e-10);
                }
            }
        }

        #[test]
        fn ddpm_identity_holds(betas in proptest::collection::vec(0.0f64..0.999, 1..200)) {
            let m = ddpm_moments(&betas).unwrap();
            prop_assert!(ddpm_identity_residual(&m) < 1e-10);
        }

        #[test]
        fn variance_nondecreasing_for_contracting_drift(beta in -3.0f64..0.0, g in 0.01f64..3.0) {
            let spec = ProcessSpec::new(
                DriftSpec::Constant { beta },
                DiffusionSpec::Constant { g },
                TimeGrid::uniform(32).unwrap(),
            ).unwrap();
            let m = spec.moments();
            prop_assert!(m.gamma_bar.iter().all(|&v| v >= 0.0));
            // γ̄ rises monotonically toward its fixed point v / (1 - a²)
            for w in m.gamma_bar.windows(2) {
                prop_assert!(w[1] >= w[0] * (1.0 - 1e-12));
            }
        }
    }
}
