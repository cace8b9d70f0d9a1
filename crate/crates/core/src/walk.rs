//! Forward simulation of structured random walks.
//!
//! Ensemble path `i` draws from child stream `i` of the master seed, first for
//! its initial state and then for its increments, so an ensemble is the same
//! whatever the thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::increments::IncrementKind;
use crate::points::PointCloud;
use crate::process::{ProcessSpec, TimeGrid};
use crate::rng::{child_stream, Stream};

/// Largest number of `f64` values an ensemble may hold (400 MB).
pub const ENSEMBLE_VALUE_CAP: usize = 50_000_000;

/// Source of initial states `x_0`.
pub trait InitialSampler: Sync {
    fn dim(&self) -> usize;
    fn draw(&self, rng: &mut Stream, out: &mut [f64]);
}

/// A fixed starting point; draws consume no randomness.
impl InitialSampler for Vec<f64> {
    fn dim(&self) -> usize {
        self.len()
    }

    fn draw(&self, _rng: &mut Stream, out: &mut [f64]) {
        out.copy_from_slice(self);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkPath {
    /// `T + 1` rows of dimension `d`.
    pub states: PointCloud,
    pub grid: TimeGrid,
    pub kind: IncrementKind,
    /// Master seed, when the path came from a seeded ensemble.
    pub seed: Option<u64>,
}

impl WalkPath {
    pub fn dim(&self) -> usize {
        self.states.dim()
    }

    /// `Δx_k = x_{k+1} - x_k` for `k = 0..T`.
    pub fn increments(&self) -> Vec<Vec<f64>> {
        (0..self.grid.steps())
            .map(|k| {
                let a = self.states.row(k);
                let b = self.states.row(k + 1);
                b.iter().zip(a).map(|(b, a)| b - a).collect()
            })
            .collect()
    }
}

/// Advance `x` through every step of `spec`, filling each step's standardized
/// noise with `noise` and reporting each state `x_k` to `visit`.
fn run_steps(
    spec: &ProcessSpec,
    x: &mut [f64],
    mut noise: impl FnMut(&mut [f64]),
    mut visit: impl FnMut(usize, &[f64]),
) -> Result<()> {
    let mut z = vec![0.0; x.len()];
    visit(0, x);
    for i in 0..spec.steps() {
        let t = spec.grid.time(i);
        let dt = spec.grid.delta(i);
        let drift = spec.beta(t) * dt;
        let scale = spec.g(t) * dt.sqrt();
        noise(&mut z);
        for (xi, zi) in x.iter_mut().zip(&z) {
            *xi += drift * *xi + scale * zi;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: i + 1,
                context: format!(
                    "forward walk left the finite range at t = {}",
                    spec.grid.time(i + 1)
                ),
            });
        }
        visit(i + 1, x);
    }
    Ok(())
}

/// Sum of `s` standardized draws divided by `√s`: unit variance, with excess
/// kurtosis shrunk by a factor `s`.
fn aggregated_draw(kind: IncrementKind, s: usize, rng: &mut Stream) -> f64 {
    if s == 1 {
        return kind.sample(rng);
    }
    let sum: f64 = (0..s).map(|_| kind.sample(rng)).sum();
    sum / (s as f64).sqrt()
}

fn full_path(
    spec: &ProcessSpec,
    kind: IncrementKind,
    refine: usize,
    x: &mut [f64],
    rng: &mut Stream,
    out: &mut [f64],
) -> Result<()> {
    let d = x.len();
    run_steps(
        spec,
        x,
        |z| {
            z.iter_mut()
                .for_each(|v| *v = aggregated_draw(kind, refine, rng))
        },
        |k, s| out[k * d..(k + 1) * d].copy_from_slice(s),
    )
}

/// One path from a fixed starting point: `x_{k+1} = x_k + β(t_k) x_k Δ_k + g(t_k) √Δ_k z_k`.
pub fn simulate_forward(
    spec: &ProcessSpec,
    kind: IncrementKind,
    x0: &[f64],
    rng: &mut Stream,
) -> Result<WalkPath> {
    refine_nested(spec, kind, x0, 1, rng)
}

/// Path of the nested refinement `x_{T,S}`, observed on the coarse grid.
///
/// Each coarse step is split into `s` sub-steps of length `Δ/s` whose noise
/// draws are summed; the drift is frozen at the coarse left endpoint, so the
/// coarse increment is `β(t_k) x_k Δ + g(t_k) √(Δ/s) Σ_j z_j`. With `s = 1` this
/// is exactly [`simulate_forward`] on the same stream.
pub fn refine_nested(
    spec: &ProcessSpec,
    kind: IncrementKind,
    x0: &[f64],
    s: usize,
    rng: &mut Stream,
) -> Result<WalkPath> {
    let d = x0.len();
    if d == 0 {
        return Err(Error::param("x0 must have at least one coordinate"));
    }
    if s == 0 {
        return Err(Error::param("refinement factor must be at least 1"));
    }
    let mut x = x0.to_vec();
    let mut out = vec![0.0; (spec.steps() + 1) * d];
    full_path(spec, kind, s, &mut x, rng, &mut out)?;
    Ok(WalkPath {
        states: PointCloud::new(d, out)?,
        grid: spec.grid.clone(),
        kind,
        seed: None,
    })
}

/// `n` aggregated per-step noise values at refinement factor `s`.
pub fn aggregated_noise(kind: IncrementKind, s: usize, n: usize, rng: &mut Stream) -> Vec<f64> {
    (0..n)
        .map(|_| aggregated_draw(kind, s.max(1), rng))
        .collect()
}

/// Linear interpolation of the path at time `t ∈ [0, 1]`.
pub fn interpolate(path: &WalkPath, t: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::param(format!(
            "interpolation time {t} is outside [0, 1]"
        )));
    }
    let times = path.grid.times();
    let steps = path.grid.steps();
    // index of the segment [t_k, t_{k+1}] containing t
    let k = times
        .partition_point(|&s| s <= t)
        .saturating_sub(1)
        .min(steps - 1);
    let frac = (t - times[k]) / path.grid.delta(k);
    if frac == 0.0 {
        return Ok(path.states.row(k).to_vec());
    }
    let a = path.states.row(k);
    let b = path.states.row(k + 1);
    Ok(a.iter().zip(b).map(|(a, b)| a + frac * (b - a)).collect())
}

/// `n` paths sharing one process and increment kind, stored path-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub grid: TimeGrid,
    pub kind: IncrementKind,
    pub seed: u64,
    n: usize,
    dim: usize,
    states: Vec<f64>,
}

impl PathEnsemble {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn stride(&self) -> usize {
        (self.grid.steps() + 1) * self.dim
    }

    /// States `x_k` of every path.
    pub fn slice(&self, k: usize) -> PointCloud {
        let stride = self.stride();
        let mut data = Vec::with_capacity(self.n * self.dim);
        for i in 0..self.n {
            let start = i * stride + k * self.dim;
            data.extend_from_slice(&self.states[start..start + self.dim]);
        }
        PointCloud::new(self.dim, data).expect("slice shape")
    }

    pub fn path(&self, i: usize) -> WalkPath {
        let stride = self.stride();
        WalkPath {
            states: PointCloud::new(self.dim, self.states[i * stride..(i + 1) * stride].to_vec())
                .expect("path shape"),
            grid: self.grid.clone(),
            kind: self.kind,
            seed: Some(self.seed),
        }
    }
}

fn check_cap(n: usize, rows: usize, d: usize) -> Result<()> {
    let requested = n.saturating_mul(rows).saturating_mul(d);
    if requested > ENSEMBLE_VALUE_CAP {
        return Err(Error::MemoryCap {
            requested,
            cap: ENSEMBLE_VALUE_CAP,
        });
    }
    Ok(())
}

/// `n` independent full paths.
pub fn ensemble<S: InitialSampler + ?Sized>(
    spec: &ProcessSpec,
    kind: IncrementKind,
    x0: &S,
    n: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    let d = x0.dim();
    if n == 0 {
        return Err(Error::param("ensemble size must be at least 1"));
    }
    if d == 0 {
        return Err(Error::param(
            "initial states must have at least one coordinate",
        ));
    }
    let rows = spec.steps() + 1;
    check_cap(n, rows, d)?;
    let stride = rows * d;
    let mut states = vec![0.0; n * stride];
    states
        .par_chunks_mut(stride)
        .enumerate()
        .try_for_each(|(i, out)| {
            let mut rng = child_stream(seed, i as u64);
            let mut x = vec![0.0; d];
            x0.draw(&mut rng, &mut x);
            full_path(spec, kind, 1, &mut x, &mut rng, out)
        })?;
    Ok(PathEnsemble {
        grid: spec.grid.clone(),
        kind,
        seed,
        n,
        dim: d,
        states,
    })
}

/// Terminal states `x_T` of `n` paths, without storing the paths. Equal to
/// `ensemble(..).slice(T)` for the same arguments.
pub fn terminal_states<S: InitialSampler + ?Sized>(
    spec: &ProcessSpec,
    kind: IncrementKind,
    x0: &S,
    n: usize,
    seed: u64,
) -> Result<PointCloud> {
    let d = x0.dim();
    if n == 0 || d == 0 {
        return Err(Error::param(
            "need at least one path of dimension at least 1",
        ));
    }
    check_cap(n, 1, d)?;
    let mut data = vec![0.0; n * d];
    data.par_chunks_mut(d)
        .enumerate()
        .try_for_each(|(i, out)| {
            let mut rng = child_stream(seed, i as u64);
            x0.draw(&mut rng, out);
            run_steps(spec, out, |z| kind.fill(&mut rng, z), |_, _| {})
        })?;
    PointCloud::new(d, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{DiffusionSpec, DriftSpec};
    use crate::rng::stream;

    fn constant(beta: f64, g: f64, steps: usize) -> ProcessSpec {
        ProcessSpec::new(
            DriftSpec::Constant { beta },
            DiffusionSpec::Constant { g },
            TimeGrid::uniform(steps).unwrap(),
        )
        .unwrap()
    }

    fn mean_var(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (
            m,
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0),
        )
    }

    #[test]
    fn deterministic_decay() {
        let spec = constant(-1.0, 0.0, 1000);
        let p = simulate_forward(&spec, IncrementKind::Gaussian, &[1.0], &mut stream(1)).unwrap();
        let end = p.states.row(1000)[0];
        assert!((end - (-1f64).exp()).abs() < 1.0 / 1000.0);
    }

    #[test]
    fn brownian_terminal_variance() {
        let spec = constant(0.0, 1.0, 16);
        let n = 100_000;
        let x = terminal_states(&spec, IncrementKind::Gaussian, &vec![0.0], n, 3).unwrap();
        let (_, var) = mean_var(x.as_slice());
        assert!((var - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt(), "{var}");
    }

    #[test]
    fn ensemble_of_one_matches_single_path() {
        let spec = constant(-0.5, 1.3, 20);
        let e = ensemble(&spec, IncrementKind::Laplace, &vec![0.4, -1.0], 1, 99).unwrap();
        let p = simulate_forward(
            &spec,
            IncrementKind::Laplace,
            &[0.4, -1.0],
            &mut child_stream(99, 0),
        )
        .unwrap();
        assert_eq!(e.path(0).states, p.states);
        assert_eq!(e.slice(0).as_slice(), &[0.4, -1.0]);
    }

    #[test]
    fn terminal_states_match_full_ensemble() {
        let spec = constant(-1.0, 2.0, 12);
        let e = ensemble(&spec, IncrementKind::Uniform, &vec![1.0], 50, 7).unwrap();
        let t = terminal_states(&spec, IncrementKind::Uniform, &vec![1.0], 50, 7).unwrap();
        assert_eq!(e.slice(12), t);
    }

    #[test]
    fn half_variance_slice() {
        let spec = constant(0.0, 1.0, 4);
        let n = 100_000;
        let e = ensemble(&spec, IncrementKind::Uniform, &vec![0.0], n, 5).unwrap();
        assert!((spec.moments().gamma_bar[2] - 0.5).abs() < 1e-15);
        let (_, var) = mean_var(e.slice(2).as_slice());
        // Var of the sample variance: (m4 - s⁴)/n, with m4 from two uniform-step sums
        let m4 = 0.25 * (2.0 * 1.8 + 6.0) / 4.0 * 1.0;
        let se = ((m4 - 0.25) / n as f64).sqrt();
        assert!((var - 0.5).abs() < 4.0 * se, "{var}");
    }

    #[test]
    fn memory_cap() {
        let spec = constant(0.0, 1.0, 1000);
        let err = ensemble(&spec, IncrementKind::Gaussian, &vec![0.0; 4], 20_000, 0).unwrap_err();
        assert!(matches!(err, Error::MemoryCap { .. }));
    }

    #[test]
    fn non_finite_state_aborts() {
        let spec = constant(1e300, 0.0, 4);
        let err =
            simulate_forward(&spec, IncrementKind::Gaussian, &[1e10], &mut stream(0)).unwrap_err();
        assert!(matches!(err, Error::NonFinite { step: 1, .. }));
    }

    #[test]
    fn increments_reconstruct_states() {
        let spec = constant(-0.3, 1.0, 8);
        let p = simulate_forward(&spec, IncrementKind::Laplace, &[0.5], &mut stream(2)).unwrap();
        let mut x = p.states.row(0)[0];
        for (k, dx) in p.increments().iter().enumerate() {
            x += dx[0];
            assert!((x - p.states.row(k + 1)[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn interpolation() {
        let spec = constant(0.0, 1.0, 4);
        let p =
            simulate_forward(&spec, IncrementKind::Gaussian, &[0.0, 1.0], &mut stream(4)).unwrap();
        for k in 0..=4 {
            assert_eq!(interpolate(&p, k as f64 / 4.0).unwrap(), p.states.row(k));
        }
        let mid = interpolate(&p, 0.375).unwrap();
        for (j, m) in mid.iter().enumerate() {
            let avg = 0.5 * (p.states.row(1)[j] + p.states.row(2)[j]);
            assert!((m - avg).abs() < 1e-15);
        }
        assert!(interpolate(&p, 1.01).is_err());
        assert!(interpolate(&p, -0.1).is_err());
    }

    #[test]
    fn refinement_of_one_is_forward_simulation() {
        let spec = constant(-1.0, 1.0, 10);
        let a = refine_nested(&spec, IncrementKind::Uniform, &[0.3], 1, &mut stream(8)).unwrap();
        let b = simulate_forward(&spec, IncrementKind::Uniform, &[0.3], &mut stream(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn aggregated_kurtosis_decays_like_one_over_s() {
        for (kind, seed) in [(IncrementKind::Uniform, 10), (IncrementKind::Laplace, 11)] {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for s in [1usize, 4, 16, 64] {
                let v = aggregated_noise(kind, s, 1_000_000, &mut stream(seed + s as u64));
                let n = v.len() as f64;
                let m2 = v.iter().map(|x| x * x).sum::<f64>() / n;
                let m4 = v.iter().map(|x| x.powi(4)).sum::<f64>() / n;
                let excess = m4 / (m2 * m2) - 3.0;
                xs.push((s as f64).ln());
                ys.push(excess.abs().ln());
            }
            let mx = xs.iter().sum::<f64>() / 4.0;
            let my = ys.iter().sum::<f64>() / 4.0;
            let slope = xs
                .iter()
                .zip(&ys)
                .map(|(x, y)| (x - mx) * (y - my))
                .sum::<f64>()
                / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
            assert!((slope + 1.0).abs() <= 0.15, "{kind}: slope {slope}");
        }
    }
}
