//! Standardized increment distributions and the structured step
//! `Δx = β(t) x Δ + g(t) √Δ z`.
//!
//! Every family is scaled to mean 0 and variance 1: Laplace with scale
//! `b = 1/√2`, Uniform on `[-√3, √3]`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::rng::Stream;

pub const LAPLACE_SCALE: f64 = std::f64::consts::FRAC_1_SQRT_2;
pub const UNIFORM_HALF_WIDTH: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IncrementKind {
    Gaussian,
    Laplace,
    Uniform,
}

impl IncrementKind {
    pub const ALL: [IncrementKind; 3] = [
        IncrementKind::Gaussian,
        IncrementKind::Laplace,
        IncrementKind::Uniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            IncrementKind::Gaussian => "gaussian",
            IncrementKind::Laplace => "laplace",
            IncrementKind::Uniform => "uniform",
        }
    }

    /// `E[z⁴]` of the standardized family.
    pub fn fourth_moment(self) -> f64 {
        match self {
            IncrementKind::Gaussian => 3.0,
            IncrementKind::Laplace => 6.0,
            IncrementKind::Uniform => 1.8,
        }
    }

    pub fn density(self, z: f64) -> f64 {
        match self {
            IncrementKind::Gaussian => (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            IncrementKind::Laplace => (-z.abs() / LAPLACE_SCALE).exp() / (2.0 * LAPLACE_SCALE),
            IncrementKind::Uniform => {
                if z.abs() <= UNIFORM_HALF_WIDTH {
                    0.5 / UNIFORM_HALF_WIDTH
                } else {
                    0.0
                }
            }
        }
    }

    pub fn sample(self, rng: &mut Stream) -> f64 {
        match self {
            IncrementKind::Gaussian => StandardNormal.sample(rng),
            IncrementKind::Laplace => {
                let e: f64 = Exp1.sample(rng);
                if rng.random::<bool>() {
                    LAPLACE_SCALE * e
                } else {
                    -LAPLACE_SCALE * e
                }
            }
            IncrementKind::Uniform => rng.random_range(-UNIFORM_HALF_WIDTH..UNIFORM_HALF_WIDTH),
        }
    }

    pub fn fill(self, rng: &mut Stream, out: &mut [f64]) {
        for v in out {
            *v = self.sample(rng);
        }
    }
}

impl fmt::Display for IncrementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IncrementKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(IncrementKind::Gaussian),
            "laplace" => Ok(IncrementKind::Laplace),
            "uniform" => Ok(IncrementKind::Uniform),
            other => Err(Error::param(format!("unknown increment kind '{other}'"))),
        }
    }
}

pub fn sample_z(kind: IncrementKind, dim: usize, rng: &mut Stream) -> Vec<f64> {
    let mut z = vec![0.0; dim];
    kind.fill(rng, &mut z);
    z
}

pub fn density_z(kind: IncrementKind, z: f64) -> f64 {
    kind.density(z)
}

/// Inputs of one forward step.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub x: &'a [f64],
    pub k: usize,
    pub dt: f64,
    pub beta: f64,
    pub g: f64,
}

pub fn step_delta(ctx: &StepContext<'_>, kind: IncrementKind, rng: &mut Stream) -> Vec<f64> {
    let scale = ctx.g * ctx.dt.sqrt();
    ctx.x
        .iter()
        .map(|&xi| ctx.beta * xi * ctx.dt + scale * kind.sample(rng))
        .collect()
}
