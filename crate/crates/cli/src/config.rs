//! Experiment configuration: a JSON document, optionally patched with
//! dotted-path overrides such as `process.T=128` or `train.steps=500`.

use std::path::{Path, PathBuf};

use nndiff_core::{
    GaussianMixture, IncrementKind, Metric, Pairing, ProcessSpec, Schedule, ScheduleConfig, Spacing,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

/// Where initial states `x_0` come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSpec {
    /// Every path starts at the same point.
    Point {
        x0: Vec<f64>,
    },
    TwoComponent2d,
    StandardNormal {
        dim: usize,
    },
    Mixture {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        sds: Vec<Vec<f64>>,
    },
}

impl DataSpec {
    pub fn dim(&self) -> usize {
        match self {
            DataSpec::Point { x0 } => x0.len(),
            DataSpec::TwoComponent2d => 2,
            DataSpec::StandardNormal { dim } => *dim,
            DataSpec::Mixture { means, .. } => means.first().map_or(0, Vec::len),
        }
    }

    /// The data distribution as a mixture; a point mass is not one.
    pub fn mixture(&self) -> Result<Option<GaussianMixture>, CliError> {
        Ok(match self {
            DataSpec::Point { .. } => None,
            DataSpec::TwoComponent2d => Some(GaussianMixture::two_component_2d()),
            DataSpec::StandardNormal { dim } => Some(GaussianMixture::standard_normal(*dim)),
            DataSpec::Mixture {
                weights,
                means,
                sds,
            } => Some(GaussianMixture::new(
                weights.clone(),
                means.clone(),
                sds.clone(),
            )?),
        })
    }

    /// Per-coordinate mean and variance of `x_0`.
    pub fn moments(&self) -> Result<(Vec<f64>, Vec<f64>), CliError> {
        match self.mixture()? {
            None => {
                let DataSpec::Point { x0 } = self else {
                    unreachable!()
                };
                Ok((x0.clone(), vec![0.0; x0.len()]))
            }
            Some(mix) => {
                let d = self.dim();
                let mut mean = vec![0.0; d];
                let mut second = vec![0.0; d];
                for j in 0..mix.components() {
                    for i in 0..d {
                        let (m, s) = (mix.means[j][i], mix.sds[j][i]);
                        mean[i] += mix.weights[j] * m;
                        second[i] += mix.weights[j] * (m * m + s * s);
                    }
                }
                let var = mean.iter().zip(&second).map(|(m, s)| s - m * m).collect();
                Ok((mean, var))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: usize,
    pub learning_rate: f64,
    pub schedule: nndiff_core::LrSchedule,
    pub batch_size: usize,
    pub hidden: usize,
    pub forward: nndiff_core::ForwardSampling,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = nndiff_core::TrainConfig::default();
        Self {
            steps: d.steps,
            learning_rate: d.learning_rate,
            schedule: d.schedule,
            batch_size: d.batch_size,
            hidden: d.hidden,
            forward: d.forward,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    #[serde(rename = "T")]
    pub steps: Vec<usize>,
    pub samples: usize,
    pub replicates: usize,
    pub metric: Metric,
    pub alpha: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            steps: vec![8, 32, 128, 512],
            samples: 100_000,
            replicates: 10,
            metric: Metric::Ks,
            alpha: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KlSection {
    pub mean_gaps: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Default for KlSection {
    fn default() -> Self {
        Self {
            mean_gaps: vec![0.0, 0.5, 1.0, 2.0, 5.0],
            scales: vec![0.1, 0.5, 1.0, 2.0],
        }
    }
}

/// Score used by `sample`, `elbo` and `likelihood`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScoreSection {
    /// Exact score of the forward marginal of the (mixture) data.
    Analytic,
    /// A checkpoint written by `train`.
    Mlp { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub process: ScheduleConfig,
    pub q_kind: IncrementKind,
    pub p_kind: IncrementKind,
    pub data: DataSpec,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub kl: KlSection,
    #[serde(default = "analytic")]
    pub score: ScoreSection,
    /// Sample count for `simulate` and `sample`.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Data points for `elbo` and `likelihood`.
    #[serde(default = "default_points")]
    pub points: usize,
    /// Significance level for the statistical checks of `simulate` and `sample`.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub seed: u64,
    pub output: PathBuf,
}

fn analytic() -> ScoreSection {
    ScoreSection::Analytic
}

fn default_samples() -> usize {
    10_000
}

fn default_points() -> usize {
    100
}

fn default_alpha() -> f64 {
    0.01
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            process: ScheduleConfig {
                schedule: Schedule::DdpmLinear {
                    beta_min: 0.1,
                    beta_max: 20.0,
                },
                steps: 64,
                spacing: Spacing::Uniform,
            },
            q_kind: IncrementKind::Gaussian,
            p_kind: IncrementKind::Gaussian,
            data: DataSpec::TwoComponent2d,
            train: TrainSection::default(),
            sweep: SweepSection::default(),
            kl: KlSection::default(),
            score: ScoreSection::Analytic,
            samples: default_samples(),
            points: default_points(),
            alpha: default_alpha(),
            seed: 0,
            output: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    /// Read `path` (or start from the defaults), apply `overrides`, and
    /// validate.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => serde_json::to_value(Self::default()).expect("default config serializes"),
        };
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: Self = serde_json::from_value(doc).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.build_process()?;
        if self.data.dim() == 0 {
            return Err(CliError::Config("data dimension must be positive".into()));
        }
        self.data.mixture()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0)
            || !(self.sweep.alpha > 0.0 && self.sweep.alpha < 1.0)
        {
            return Err(CliError::Config(
                "significance levels must lie in (0, 1)".into(),
            ));
        }
        if self.samples < 2 || self.points < 2 {
            return Err(CliError::Config(
                "samples and points must be at least 2".into(),
            ));
        }
        if self.sweep.steps.is_empty() || self.sweep.steps.contains(&0) {
            return Err(CliError::Config(
                "sweep.T must list positive step counts".into(),
            ));
        }
        if self.sweep.replicates == 0 {
            return Err(CliError::Config("sweep.replicates must be positive".into()));
        }
        if self.kl.scales.iter().any(|s| !(*s > 0.0 && s.is_finite()))
            || self.kl.mean_gaps.iter().any(|m| !m.is_finite())
        {
            return Err(CliError::Config(
                "kl scales must be positive and gaps finite".into(),
            ));
        }
        Ok(())
    }

    pub fn build_process(&self) -> Result<ProcessSpec, CliError> {
        self.process
            .build()
            .map_err(|e| CliError::Config(format!("process: {e}")))
    }

    pub fn pairing(&self) -> Result<Pairing, CliError> {
        Pairing::from_kinds(self.q_kind, self.p_kind).map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Apply `a.b.c=value`. The value is parsed as JSON when possible and taken
/// as a string otherwise, so `process.kind=vdm-linear` needs no quoting.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not KEY=VALUE")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("bad override path `{path}`")));
    }
    let mut node = doc;
    for key in &keys[..keys.len() - 1] {
        let obj = node.as_object_mut().ok_or_else(|| {
            CliError::Config(format!("`{path}`: `{key}` is not inside an object"))
        })?;
        node = obj
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| CliError::Config(format!("`{path}` does not name an object field")))?;
    obj.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_json() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn overrides_patch_nested_fields() {
        let cfg = ExperimentConfig::load(
            None,
            &[
                "process.T=128".into(),
                "q_kind=laplace".into(),
                "train.steps=10".into(),
                "data={\"kind\":\"point\",\"x0\":[0.5]}".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.process.steps, 128);
        assert_eq!(cfg.q_kind, IncrementKind::Laplace);
        assert_eq!(cfg.train.steps, 10);
        assert_eq!(cfg.data, DataSpec::Point { x0: vec![0.5] });
    }

    #[test]
    fn bad_overrides_are_config_errors() {
        for o in [
            "process.T",
            "process..T=3",
            "seed.x=1",
            "q_kind=cauchy",
            "process.T=0",
        ] {
            let e = ExperimentConfig::load(None, &[o.to_string()]).unwrap_err();
            assert!(matches!(e, CliError::Config(_)), "{o}: {e}");
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let e = ExperimentConfig::load(None, &["train.momentum=0.9".into()]).unwrap_err();
        assert!(matches!(e, CliError::Config(_)));
    }

    #[test]
    fn mixture_moments() {
        let (m, v) = DataSpec::StandardNormal { dim: 3 }.moments().unwrap();
        assert_eq!(m, vec![0.0; 3]);
        assert_eq!(v, vec![1.0; 3]);
        let (m, v) = DataSpec::Point { x0: vec![2.0] }.moments().unwrap();
        assert_eq!((m, v), (vec![2.0], vec![0.0]));
    }
}
