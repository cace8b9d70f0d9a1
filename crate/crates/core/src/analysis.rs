//! Two-sample tests, moment checks and convergence sweeps.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::increments::IncrementKind;
use crate::points::PointCloud;
use crate::process::{ProcessSpec, TimeGrid};
use crate::rng::{child_stream, derive_seed};
use crate::walk::{terminal_states, InitialSampler};

const MIN_TWO_SAMPLE: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSampleResult {
    pub statistic: f64,
    pub n: usize,
    pub m: usize,
    pub critical_1pct: f64,
    pub critical_5pct: f64,
    pub p_value: f64,
    /// Rejection at the 1% level.
    pub reject: bool,
}

impl TwoSampleResult {
    pub fn rejects_at(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

fn check_sizes(n: usize, m: usize) -> Result<()> {
    let small = n.min(m);
    if small < MIN_TWO_SAMPLE {
        return Err(Error::UndersizedSample {
            required: MIN_TWO_SAMPLE,
            actual: small,
        });
    }
    Ok(())
}

/// Asymptotic two-sample KS coefficient `c(α) = sqrt(-½ ln(α/2))`.
pub fn ks_coefficient(alpha: f64) -> f64 {
    (-0.5 * (alpha / 2.0).ln()).sqrt()
}

/// `c(α) sqrt((n + m) / (n m))`.
pub fn ks_critical_value(alpha: f64, n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    ks_coefficient(alpha) * ((n + m) / (n * m)).sqrt()
}

/// Kolmogorov survival function `Q(λ) = 2 Σ (-1)^{k-1} exp(-2k²λ²)`.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Sup-distance between the two empirical CDFs.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let a = sorted(a);
    let b = sorted(b);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TwoSampleResult> {
    check_sizes(a.len(), b.len())?;
    let (n, m) = (a.len(), b.len());
    let statistic = ks_statistic(a, b);
    let ne = (n * m) as f64 / (n + m) as f64;
    let critical_1pct = ks_critical_value(0.01, n, m);
    Ok(TwoSampleResult {
        statistic,
        n,
        m,
        critical_1pct,
        critical_5pct: ks_critical_value(0.05, n, m),
        p_value: kolmogorov_survival(ne.sqrt() * statistic),
        reject: statistic > critical_1pct,
    })
}

/// Per-coordinate KS tests with a Bonferroni-corrected decision at level `alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsPerCoordinate {
    pub coordinates: Vec<TwoSampleResult>,
    pub alpha: f64,
    pub reject: bool,
}

impl KsPerCoordinate {
    pub fn max_statistic(&self) -> f64 {
        self.coordinates
            .iter()
            .map(|r| r.statistic)
            .fold(0.0, f64::max)
    }
}

pub fn ks_per_coordinate(a: &PointCloud, b: &PointCloud, alpha: f64) -> Result<KsPerCoordinate> {
    if a.dim() != b.dim() {
        return Err(Error::param("samples have different dimensions"));
    }
    let d = a.dim();
    let coordinates = (0..d)
        .map(|j| ks_two_sample(&a.column(j), &b.column(j)))
        .collect::<Result<Vec<_>>>()?;
    let reject = coordinates.iter().any(|r| r.p_value < alpha / d as f64);
    Ok(KsPerCoordinate {
        coordinates,
        alpha,
        reject,
    })
}

/// Column-major copy of a point cloud, for vectorizable distance loops.
struct Columns {
    cols: Vec<Vec<f64>>,
    len: usize,
}

impl Columns {
    fn new(p: &PointCloud) -> Self {
        Self {
            cols: (0..p.dim()).map(|j| p.column(j)).collect(),
            len: p.len(),
        }
    }

    fn point(&self, i: usize) -> Vec<f64> {
        self.cols.iter().map(|c| c[i]).collect()
    }

    /// `Σ_{j ∈ range} ‖x - self_j‖`.
    fn dist_sum(&self, x: &[f64], range: std::ops::Range<usize>) -> f64 {
        let mut acc = vec![0.0; range.len()];
        for (c, &xc) in self.cols.iter().zip(x) {
            for (a, &v) in acc.iter_mut().zip(&c[range.clone()]) {
                let diff = v - xc;
                *a += diff * diff;
            }
        }
        acc.iter().map(|s| s.sqrt()).sum()
    }
}

/// `Σ_{i,j} ‖a_i - b_j‖`, summed in a fixed order.
fn cross_sum(a: &Columns, b: &Columns) -> f64 {
    let rows: Vec<f64> = (0..a.len)
        .into_par_iter()
        .map(|i| b.dist_sum(&a.point(i), 0..b.len))
        .collect();
    rows.iter().sum()
}

/// `Σ_{i,j} ‖a_i - a_j‖` using symmetry.
fn self_sum(a: &Columns) -> f64 {
    let rows: Vec<f64> = (0..a.len)
        .into_par_iter()
        .map(|i| a.dist_sum(&a.point(i), i + 1..a.len))
        .collect();
    2.0 * rows.iter().sum::<f64>()
}

fn energy_from_columns(a: &Columns, b: &Columns) -> f64 {
    let (n, m) = (a.len as f64, b.len as f64);
    let e = 2.0 * cross_sum(a, b) / (n * m) - self_sum(a) / (n * n) - self_sum(b) / (m * m);
    e.max(0.0)
}

/// Energy distance `2E‖a - b‖ - E‖a - a'‖ - E‖b - b'‖` (V-statistic form).
pub fn energy_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::param("samples have different dimensions"));
    }
    check_sizes(a.len(), b.len())?;
    Ok(energy_from_columns(&Columns::new(a), &Columns::new(b)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationConfig {
    pub permutations: usize,
    /// Pooled sizes up to this bound are permuted exactly; larger samples draw
    /// each null replicate from a random subsample of this size.
    pub exact_cap: usize,
    pub seed: u64,
}

impl Default for PermutationConfig {
    fn default() -> Self {
        Self {
            permutations: 200,
            exact_cap: 2000,
            seed: 0,
        }
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Energy distance with a permutation p-value.
///
/// The null is built on the scaled statistic `n m / (n + m) · E`, whose
/// distribution under equal laws does not depend on the sample sizes. When the
/// pooled sample is larger than `cfg.exact_cap`, each null replicate permutes a
/// fresh random subsample of the pool with the original size ratio.
pub fn energy_test(
    a: &PointCloud,
    b: &PointCloud,
    cfg: PermutationConfig,
) -> Result<TwoSampleResult> {
    if cfg.permutations == 0 {
        return Err(Error::param("need at least one permutation"));
    }
    let statistic = energy_distance(a, b)?;
    let (n, m) = (a.len(), b.len());
    let scale = |n: usize, m: usize| (n * m) as f64 / (n + m) as f64;
    let observed = scale(n, m) * statistic;
    let pooled = a.concat(b)?;
    let total = n + m;
    let (sub_n, sub_m) = if total <= cfg.exact_cap {
        (n, m)
    } else {
        let sn = ((cfg.exact_cap as f64) * n as f64 / total as f64).round() as usize;
        let sn = sn.clamp(MIN_TWO_SAMPLE, cfg.exact_cap - MIN_TWO_SAMPLE);
        (sn, cfg.exact_cap - sn)
    };
    let mut null: Vec<f64> = (0..cfg.permutations)
        .into_par_iter()
        .map(|p| {
            let mut rng = child_stream(cfg.seed, p as u64);
            let mut idx: Vec<usize> = (0..total).collect();
            idx.shuffle(&mut rng);
            let pa = Columns::new(&pooled.select(&idx[..sub_n]));
            let pb = Columns::new(&pooled.select(&idx[sub_n..sub_n + sub_m]));
            scale(sub_n, sub_m) * energy_from_columns(&pa, &pb)
        })
        .collect();
    null.sort_by(f64::total_cmp);
    let exceed = null.iter().filter(|&&v| v >= observed).count();
    let p_value = (1 + exceed) as f64 / (1 + cfg.permutations) as f64;
    let unscale = 1.0 / scale(n, m);
    Ok(TwoSampleResult {
        statistic,
        n,
        m,
        critical_1pct: quantile(&null, 0.99) * unscale,
        critical_5pct: quantile(&null, 0.95) * unscale,
        p_value,
        reject: p_value < 0.01,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub expected_mean: f64,
    pub expected_variance: f64,
    /// `None` when the expected variance is zero and the mean is compared exactly.
    pub z_mean: Option<f64>,
    /// `None` when the expected variance is zero.
    pub z_variance: Option<f64>,
    pub pass: bool,
}

const Z_LIMIT: f64 = 4.0;

/// z-scores of the sample mean and variance against their expected values.
/// The variance standard error is the plug-in `sqrt((m4 - s⁴) / N)`.
pub fn moment_check(sample: &[f64], expected_mean: f64, expected_var: f64) -> Result<MomentCheck> {
    const MIN: usize = 100;
    if sample.len() < MIN {
        return Err(Error::UndersizedSample {
            required: MIN,
            actual: sample.len(),
        });
    }
    let nf = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / nf;
    let (mut m2, mut m4) = (0.0, 0.0);
    for &x in sample {
        let c = (x - mean) * (x - mean);
        m2 += c;
        m4 += c * c;
    }
    let variance = m2 / (nf - 1.0);
    m4 /= nf;
    let (z_mean, z_variance, pass) = if expected_var == 0.0 {
        let tol = 1e-12 * expected_mean.abs().max(1.0);
        let pass = (mean - expected_mean).abs() <= tol && variance <= tol * tol;
        (None, None, pass)
    } else {
        let z_mean = (mean - expected_mean) / (expected_var / nf).sqrt();
        let s4 = (m2 / nf).powi(2);
        let se_var = ((m4 - s4).max(0.0) / nf).sqrt();
        let z_var = if se_var > 0.0 {
            (variance - expected_var) / se_var
        } else {
            f64::INFINITY
        };
        let pass = z_mean.abs() < Z_LIMIT && z_var.abs() < Z_LIMIT;
        (Some(z_mean), Some(z_var), pass)
    };
    Ok(MomentCheck {
        n: sample.len(),
        mean,
        variance,
        expected_mean,
        expected_variance: expected_var,
        z_mean,
        z_variance,
        pass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Largest per-coordinate KS statistic.
    Ks,
    Energy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub steps: usize,
    pub replicate: usize,
    pub seed: u64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub kind: IncrementKind,
    pub metric: Metric,
    pub samples: usize,
    pub rows: Vec<SweepRow>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl SweepTable {
    /// `(T, median distance)` in increasing `T`.
    pub fn medians(&self) -> Vec<(usize, f64)> {
        let mut steps: Vec<usize> = self.rows.iter().map(|r| r.steps).collect();
        steps.dedup();
        steps
            .into_iter()
            .map(|t| {
                let mut v: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.steps == t)
                    .map(|r| r.distance)
                    .collect();
                (t, median(&mut v))
            })
            .collect()
    }

    pub fn strictly_decreasing(&self) -> bool {
        self.medians().windows(2).all(|w| w[1].1 < w[0].1)
    }

    /// Least-squares slope of `ln(median)` against `ln(T)`.
    pub fn loglog_slope(&self) -> f64 {
        let pts: Vec<(f64, f64)> = self
            .medians()
            .into_iter()
            .map(|(t, d)| ((t as f64).ln(), d.ln()))
            .collect();
        let k = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "steps,replicate,seed,distance")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{:e}", r.steps, r.replicate, r.seed, r.distance)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub steps: Vec<usize>,
    pub samples: usize,
    pub replicates: usize,
    pub metric: Metric,
    pub seed: u64,
}

/// For each grid size `T` and replicate, the distance between the terminal
/// slice of a `kind` walk and a fresh Gaussian-kind reference on the same
/// process, both started from `x0`. `base` supplies drift and diffusion; the
/// grid is rebuilt uniformly for every `T`.
pub fn convergence_sweep<S: InitialSampler + ?Sized>(
    base: &ProcessSpec,
    kind: IncrementKind,
    x0: &S,
    cfg: &SweepConfig,
) -> Result<SweepTable> {
    if cfg.steps.is_empty() || cfg.steps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("sweep T values must be strictly increasing"));
    }
    if cfg.replicates == 0 {
        return Err(Error::param("need at least one replicate"));
    }
    let mut rows = Vec::with_capacity(cfg.steps.len() * cfg.replicates);
    for (ti, &steps) in cfg.steps.iter().enumerate() {
        let spec = base.with_grid(TimeGrid::uniform(steps)?);
        for r in 0..cfg.replicates {
            let seed = derive_seed(cfg.seed, (ti * cfg.replicates + r) as u64);
            let sample = terminal_states(&spec, kind, x0, cfg.samples, derive_seed(seed, 1))?;
            let reference = terminal_states(
                &spec,
                IncrementKind::Gaussian,
                x0,
                cfg.samples,
                derive_seed(seed, 2),
            )?;
            let distance = match cfg.metric {
                Metric::Ks => ks_per_coordinate(&sample, &reference, 0.01)?.max_statistic(),
                Metric::Energy => energy_distance(&sample, &reference)?,
            };
            rows.push(SweepRow {
                steps,
                replicate: r,
                seed,
                distance,
            });
        }
    }
    Ok(SweepTable {
        kind,
        metric: cfg.metric,
        samples: cfg.samples,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, shift: f64, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed);
        (0..n)
            .map(|_| {
                shift + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
            })
            .collect()
    }

    #[test]
    fn ks_coefficients() {
        assert!((ks_coefficient(0.01) - 1.6276).abs() < 1e-4);
        assert!((ks_coefficient(0.05) - 1.3581).abs() < 1e-4);
        assert!((kolmogorov_survival(ks_coefficient(0.01)) - 0.01).abs() < 1e-6);
    }

    #[test]
    fn ks_identical_and_shifted() {
        let a = normals(10_000, 0.0, 1);
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(!r.reject);
        let b = normals(10_000, 3.0, 2);
        assert!(ks_two_sample(&a, &b).unwrap().reject);
        assert!(ks_two_sample(&a[..5], &b).is_err());
    }

    #[test]
    fn ks_statistic_by_hand() {
        // ECDFs of {1,2,3} and {2.5}: largest gap 2/3 at x = 2
        let d = ks_statistic(&[1.0, 2.0, 3.0], &[2.5]);
        assert!((d - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ks_size_calibration() {
        let rejections = (0..100)
            .filter(|&r| {
                let a = normals(10_000, 0.0, 1000 + 2 * r);
                let b = normals(10_000, 0.0, 1001 + 2 * r);
                ks_two_sample(&a, &b).unwrap().reject
            })
            .count();
        assert!(rejections <= 3, "{rejections} rejections");
    }

    #[test]
    fn energy_degenerate_cases() {
        let a = PointCloud::new(2, normals(40, 0.0, 5)).unwrap();
        assert!(energy_distance(&a, &a).unwrap().abs() < 1e-12);
        let zeros = PointCloud::zeros(10, 1);
        let ones = PointCloud::new(1, vec![1.0; 10]).unwrap();
        assert!((energy_distance(&zeros, &ones).unwrap() - 2.0).abs() < 1e-15);
        assert!(energy_distance(&zeros, &PointCloud::zeros(5, 1)).is_err());
    }

    #[test]
    fn energy_matches_naive_double_loop() {
        let a = PointCloud::new(3, normals(60, 0.0, 6)).unwrap();
        let b = PointCloud::new(3, normals(45, 0.5, 7)).unwrap();
        let dist = |x: &[f64], y: &[f64]| {
            x.iter()
                .zip(y)
                .map(|(p, q)| (p - q).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let mean = |p: &PointCloud, q: &PointCloud| {
            let mut s = 0.0;
            for x in p.rows() {
                for y in q.rows() {
                    s += dist(x, y);
                }
            }
            s / (p.len() * q.len()) as f64
        };
        let naive = 2.0 * mean(&a, &b) - mean(&a, &a) - mean(&b, &b);
        assert!((energy_distance(&a, &b).unwrap() - naive).abs() < 1e-12);
    }

    #[test]
    fn energy_test_detects_shift_and_is_deterministic() {
        let a = PointCloud::new(2, normals(600, 0.0, 8)).unwrap();
        let b = PointCloud::new(2, normals(600, 0.5, 9)).unwrap();
        let cfg = PermutationConfig {
            seed: 3,
            ..Default::default()
        };
        let r = energy_test(&a, &b, cfg).unwrap();
        assert!(r.reject);
        assert_eq!(r, energy_test(&a, &b, cfg).unwrap());
        let c = PointCloud::new(2, normals(600, 0.0, 10)).unwrap();
        let r = energy_test(&a, &c, cfg).unwrap();
        assert!(!r.reject, "p = {}", r.p_value);
        assert!(r.critical_5pct <= r.critical_1pct);
    }

    #[test]
    fn moment_check_examples() {
        let x = normals(100_000, 0.0, 11);
        assert!(moment_check(&x, 0.0, 1.0).unwrap().pass);
        let biased: Vec<f64> = x.iter().map(|v| v + 0.1).collect();
        let c = moment_check(&biased, 0.0, 1.0).unwrap();
        assert!(!c.pass);
        assert!((c.z_mean.unwrap() - 31.6).abs() < 1.5);
        let constant = vec![0.25; 200];
        let c = moment_check(&constant, 0.25, 0.0).unwrap();
        assert!(c.pass && c.z_variance.is_none());
        assert!(!moment_check(&constant, 0.3, 0.0).unwrap().pass);
        assert!(moment_check(&constant[..50], 0.25, 0.0).is_err());
    }

    #[test]
    fn sweep_rejects_unsorted_steps() {
        use crate::process::{DiffusionSpec, DriftSpec};
        let base = ProcessSpec::new(
            DriftSpec::Constant { beta: 0.0 },
            DiffusionSpec::Constant { g: 1.0 },
            TimeGrid::uniform(1).unwrap(),
        )
        .unwrap();
        let cfg = SweepConfig {
            steps: vec![8, 4],
            samples: 100,
            replicates: 1,
            metric: Metric::Ks,
            seed: 0,
        };
        assert!(convergence_sweep(&base, IncrementKind::Uniform, &vec![0.0], &cfg).is_err());
    }

    #[test]
    fn sweep_medians_and_slope() {
        let table = SweepTable {
            kind: IncrementKind::Uniform,
            metric: Metric::Ks,
            samples: 10,
            rows: [
                (8, 0.4),
                (8, 0.2),
                (8, 0.3),
                (64, 0.05),
                (64, 0.04),
                (64, 0.06),
            ]
            .iter()
            .enumerate()
            .map(|(i, &(steps, distance))| SweepRow {
                steps,
                replicate: i % 3,
                seed: 0,
                distance,
            })
            .collect(),
        };
        assert_eq!(table.medians(), vec![(8, 0.3), (64, 0.05)]);
        assert!(table.strictly_decreasing());
        let expected = (0.05f64 / 0.3).ln() / 8f64.ln();
        assert!((table.loglog_slope() - expected).abs() < 1e-12);
    }
}
