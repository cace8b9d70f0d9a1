//! Closed-form KL divergences for the four increment pairings, and a
//! quadrature oracle for checking them.
//!
//! In the two mixed pairings the Uniform is always the first argument `p`.

use crate::error::{Error, Result};
use crate::quadrature::{self, QuadConfig};

const SQRT_3: f64 = 1.732_050_807_568_877_2;

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

/// One-dimensional location-scale distributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarDist {
    Gaussian {
        mu: f64,
        sigma: f64,
    },
    Laplace {
        mu: f64,
        b: f64,
    },
    /// Uniform on `[mu - half_width, mu + half_width]`.
    Uniform {
        mu: f64,
        half_width: f64,
    },
}

impl ScalarDist {
    pub fn gaussian(mu: f64, sigma: f64) -> Result<Self> {
        positive("sigma", sigma)?;
        Ok(ScalarDist::Gaussian { mu, sigma })
    }

    pub fn laplace(mu: f64, b: f64) -> Result<Self> {
        positive("b", b)?;
        Ok(ScalarDist::Laplace { mu, b })
    }

    pub fn uniform(mu: f64, half_width: f64) -> Result<Self> {
        positive("half_width", half_width)?;
        Ok(ScalarDist::Uniform { mu, half_width })
    }

    /// Laplace with standard deviation `sigma` (`b = σ/√2`).
    pub fn laplace_with_sd(mu: f64, sigma: f64) -> Result<Self> {
        Self::laplace(mu, sigma / std::f64::consts::SQRT_2)
    }

    /// Uniform with standard deviation `sigma` (`half_width = √3 σ`).
    pub fn uniform_with_sd(mu: f64, sigma: f64) -> Result<Self> {
        Self::uniform(mu, SQRT_3 * sigma)
    }

    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            ScalarDist::Gaussian { mu, sigma } => {
                let z = (x - mu) / sigma;
                -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            }
            ScalarDist::Laplace { mu, b } => -(x - mu).abs() / b - (2.0 * b).ln(),
            ScalarDist::Uniform { mu, half_width } => {
                if (x - mu).abs() <= half_width {
                    -(2.0 * half_width).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        self.log_density(x).exp()
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ScalarDist::Gaussian { mu, .. }
            | ScalarDist::Laplace { mu, .. }
            | ScalarDist::Uniform { mu, .. } => mu,
        }
    }

    /// Support, as a closed interval (possibly infinite).
    pub fn support(&self) -> (f64, f64) {
        match *self {
            ScalarDist::Uniform { mu, half_width } => (mu - half_width, mu + half_width),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// Interval outside which the density is negligible for KL purposes.
    fn effective_support(&self) -> (f64, f64) {
        match *self {
            ScalarDist::Gaussian { mu, sigma } => (mu - 40.0 * sigma, mu + 40.0 * sigma),
            ScalarDist::Laplace { mu, b } => (mu - 800.0 * b, mu + 800.0 * b),
            ScalarDist::Uniform { mu, half_width } => (mu - half_width, mu + half_width),
        }
    }

    /// Points where the density is not smooth.
    fn kinks(&self) -> Vec<f64> {
        match *self {
            ScalarDist::Gaussian { .. } => vec![],
            ScalarDist::Laplace { mu, .. } => vec![mu],
            ScalarDist::Uniform { mu, half_width } => vec![mu - half_width, mu + half_width],
        }
    }
}

/// `KL(N(μ1, σ²) || N(μ2, σ²)) = (μ1 - μ2)² / (2σ²)`.
pub fn kl_gauss_gauss(mu1: f64, mu2: f64, sigma: f64) -> Result<f64> {
    positive("sigma", sigma)?;
    let d = (mu1 - mu2) / sigma;
    Ok(0.5 * d * d)
}

/// Coordinatewise sum for isotropic Gaussians with a shared scale.
pub fn kl_gauss_gauss_vec(mu1: &[f64], mu2: &[f64], sigma: f64) -> Result<f64> {
    mu1.iter()
        .zip(mu2)
        .map(|(a, b)| kl_gauss_gauss(*a, *b, sigma))
        .sum()
}

/// `KL(Laplace(μ1, b1) || Laplace(μ2, b2))
///   = (b1/b2) exp(-|Δμ|/b1) + |Δμ|/b2 + ln(b2/b1) - 1`.
pub fn kl_laplace_laplace(mu1: f64, b1: f64, mu2: f64, b2: f64) -> Result<f64> {
    positive("b1", b1)?;
    positive("b2", b2)?;
    let d = (mu1 - mu2).abs();
    let r = b1 / b2;
    // r e^{-d/b1} - 1 - ln r, arranged so the identity case is exactly zero
    Ok(r * (-d / b1).exp_m1() + (r - 1.0 - r.ln()) + d / b2)
}

/// `KL(Uniform(μ1 ± √3σ) || N(μ2, σ²)) = ½((μ1 - μ2)²/σ² + ln(π/6) + 1)`.
pub fn kl_unif_gauss(mu1: f64, mu2: f64, sigma: f64) -> Result<f64> {
    positive("sigma", sigma)?;
    let d = (mu1 - mu2) / sigma;
    Ok(0.5 * (d * d + UNIF_GAUSS_GAP_TIMES_TWO))
}

/// `1 + ln(π/6)`.
const UNIF_GAUSS_GAP_TIMES_TWO: f64 = 0.352_970_416_621_345_1;

/// `½(1 + ln(π/6))`: the smallest possible KL from a Uniform to a Gaussian of equal variance.
pub const UNIF_GAUSS_GAP: f64 = 0.5 * UNIF_GAUSS_GAP_TIMES_TWO;

/// `KL(Uniform(μ1 ± b1) || Laplace(μ2, b2))`:
/// `ln(b2/b1) + (Δμ² + b1²)/(2 b1 b2)` when `|Δμ| ≤ b1`, else `ln(b2/b1) + |Δμ|/b2`.
pub fn kl_unif_laplace(mu1: f64, b1: f64, mu2: f64, b2: f64) -> Result<f64> {
    positive("b1", b1)?;
    positive("b2", b2)?;
    let d = (mu1 - mu2).abs();
    let base = (b2 / b1).ln();
    Ok(if d <= b1 {
        base + (d * d + b1 * b1) / (2.0 * b1 * b2)
    } else {
        base + d / b2
    })
}

/// Closed-form KL for any pairing this module knows, or `None` for the
/// unsupported ones.
pub fn kl_closed_form(p: &ScalarDist, q: &ScalarDist) -> Option<f64> {
    use ScalarDist::*;
    match (*p, *q) {
        (Gaussian { mu: m1, sigma: s1 }, Gaussian { mu: m2, sigma: s2 }) => {
            // general-scale form; equals kl_gauss_gauss when s1 = s2
            let r = s1 / s2;
            let d = (m1 - m2) / s2;
            Some(0.5 * (r * r - 1.0 - 2.0 * r.ln() + d * d))
        }
        (Laplace { mu: m1, b: b1 }, Laplace { mu: m2, b: b2 }) => {
            kl_laplace_laplace(m1, b1, m2, b2).ok()
        }
        (
            Uniform {
                mu: m1,
                half_width: w,
            },
            Gaussian { mu: m2, sigma },
        ) => {
            // general half-width: ln(σ√(2π)/(2w)) + (Δ² + w²/3)/(2σ²)
            let d = m1 - m2;
            Some(
                (sigma * (2.0 * std::f64::consts::PI).sqrt() / (2.0 * w)).ln()
                    + (d * d + w * w / 3.0) / (2.0 * sigma * sigma),
            )
        }
        (
            Uniform {
                mu: m1,
                half_width: w,
            },
            Laplace { mu: m2, b },
        ) => kl_unif_laplace(m1, w, m2, b).ok(),
        _ => None,
    }
}

/// `KL(p || q)` by adaptive quadrature of `p ln(p/q)` over the effective
/// support of `p`. Returns `+∞` when `p` puts mass outside the support of `q`.
pub fn kl_quadrature(p: &ScalarDist, q: &ScalarDist) -> f64 {
    let (plo, phi) = p.support();
    let (qlo, qhi) = q.support();
    if plo < qlo || phi > qhi {
        return f64::INFINITY;
    }
    let (a, b) = p.effective_support();
    let mut breaks = p.kinks();
    breaks.extend(q.kinks());
    // keep panels from straddling the bulk of a narrow density
    breaks.push(p.mean());
    let integrand = |x: f64| {
        let lp = p.log_density(x);
        if lp == f64::NEG_INFINITY {
            0.0
        } else {
            lp.exp() * (lp - q.log_density(x))
        }
    };
    let cfg = QuadConfig {
        abs_tol: 1e-11,
        rel_tol: 1e-14,
        max_panels: 20_000,
    };
    quadrature::integrate(integrand, a, b, &breaks, cfg).value
}
