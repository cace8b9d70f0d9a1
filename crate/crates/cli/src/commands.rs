//! One function per subcommand. Each writes its artifacts into a run
//! directory and returns the verdict of its statistical check, if it has one.

use nndiff_core::analysis::{
    energy_test, ks_critical_value, moment_check, PermutationConfig, SweepConfig,
};
use nndiff_core::divergence::{kl_closed_form, kl_quadrature, ScalarDist};
use nndiff_core::loss::elbo;
use nndiff_core::process::{ddpm_identity_residual, ddpm_moments, vdm_moments};
use nndiff_core::rng::{child_stream, derive_seed, Stream};
use nndiff_core::sampler::{log_likelihood_batch, sample, ReverseSpec};
use nndiff_core::score::{train, AnalyticScore, MlpScore};
use nndiff_core::walk::{ensemble, InitialSampler};
use nndiff_core::{
    analysis::convergence_sweep, GaussianMixture, IncrementKind, Metric, MlpDenoiser, Pairing,
    PointCloud, ProcessSpec, Schedule, ScoreModel, TrainConfig,
};
use serde::Serialize;

use crate::config::{DataSpec, ExperimentConfig, ScoreSection};
use crate::error::CliError;
use crate::output::{num, RunDir};

// Seed labels, so that subcommands sharing a seed do not share streams.
const LABEL_DATA: u64 = 1;
const LABEL_TRUTH: u64 = 2;
const LABEL_CHAINS: u64 = 3;
const LABEL_TEST: u64 = 4;
const LABEL_ELBO: u64 = 5;

enum Data {
    Point(Vec<f64>),
    Mixture(GaussianMixture),
}

impl Data {
    fn from_spec(spec: &DataSpec) -> Result<Self, CliError> {
        Ok(match (spec, spec.mixture()?) {
            (_, Some(m)) => Data::Mixture(m),
            (DataSpec::Point { x0 }, None) => Data::Point(x0.clone()),
            (_, None) => unreachable!("only point data has no mixture"),
        })
    }

    fn draws(&self, n: usize, seed: u64) -> PointCloud {
        let d = self.dim();
        let mut data = vec![0.0; n * d];
        for (i, row) in data.chunks_mut(d).enumerate() {
            self.draw(&mut child_stream(seed, i as u64), row);
        }
        PointCloud::new(d, data).expect("rows match dimension")
    }
}

impl InitialSampler for Data {
    fn dim(&self) -> usize {
        match self {
            Data::Point(x) => x.len(),
            Data::Mixture(m) => m.dim(),
        }
    }

    fn draw(&self, rng: &mut Stream, out: &mut [f64]) {
        match self {
            Data::Point(x) => x.draw(rng, out),
            Data::Mixture(m) => m.draw(rng, out),
        }
    }
}

fn score_model(
    cfg: &ExperimentConfig,
    spec: &ProcessSpec,
) -> Result<Box<dyn ScoreModel>, CliError> {
    match &cfg.score {
        ScoreSection::Analytic => {
            let mix = cfg.data.mixture()?.ok_or_else(|| {
                CliError::Config("the analytic score needs mixture data, not a point mass".into())
            })?;
            Ok(Box::new(AnalyticScore::new(mix, spec.clone())))
        }
        ScoreSection::Mlp { path } => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            let model: MlpDenoiser = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            if model.dim != cfg.data.dim() {
                return Err(CliError::Config(format!(
                    "model dimension {} does not match data dimension {}",
                    model.dim,
                    cfg.data.dim()
                )));
            }
            Ok(Box::new(MlpScore {
                model,
                spec: spec.clone(),
            }))
        }
    }
}

fn write_points(out: &mut RunDir, name: &str, points: &PointCloud) -> Result<(), CliError> {
    let header: Vec<String> = (0..points.dim()).map(|i| format!("x{i}")).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut w = out.csv(name, &header)?;
    for row in points.rows() {
        w.write_record(row.iter().map(|v| num(*v)))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Recovery {
    family: &'static str,
    /// `max_k |γ̄_k + ᾱ_k² - 1|` of the recovered table.
    identity_residual: f64,
    monotone: Option<bool>,
}

pub fn moments(cfg: &ExperimentConfig, out: &mut RunDir) -> Result<Option<bool>, CliError> {
    let spec = cfg.build_process()?;
    let table = spec.moments();
    let mut w = out.csv("moments.csv", &["k", "t", "alpha_bar", "gamma_bar"])?;
    for k in 0..=table.steps() {
        w.write_record([
            k.to_string(),
            num(table.times[k]),
            num(table.alpha_bar[k]),
            num(table.gamma_bar[k]),
        ])?;
    }
    w.flush()?;

    // Discrete-time chains of the named families, written next to the Euler table.
    let recovered = match cfg.process.schedule {
        Schedule::DdpmLinear { .. } => {
            let betas: Vec<f64> = spec
                .grid
                .times()
                .windows(2)
                .zip(spec.grid.deltas())
                .map(|(t, dt)| -2.0 * spec.beta(t[0]) * dt)
                .collect();
            if betas.iter().any(|b| !(0.0..1.0).contains(b)) {
                return Err(CliError::Config(
                    "grid too coarse for a DDPM chain: some β_k is outside [0, 1)".into(),
                ));
            }
            Some(("ddpm", ddpm_moments(&betas)?, None))
        }
        Schedule::VdmLinear {
            gamma_min,
            gamma_max,
        } => {
            let v = vdm_moments(|t| gamma_min + (gamma_max - gamma_min) * t, &spec.grid);
            Some(("vdm", v.table, Some(v.monotone)))
        }
        Schedule::Constant { .. } => None,
    };
    if let Some((family, table, monotone)) = recovered {
        let mut w = out.csv(
            &format!("{family}.csv"),
            &["k", "t", "alpha_bar", "gamma_bar"],
        )?;
        for k in 0..=table.steps() {
            w.write_record([
                k.to_string(),
                num(table.times[k]),
                num(table.alpha_bar[k]),
                num(table.gamma_bar[k]),
            ])?;
        }
        w.flush()?;
        out.json(
            "recovery.json",
            &Recovery {
                family,
                identity_residual: ddpm_identity_residual(&table),
                monotone,
            },
        )?;
    }
    Ok(None)
}

pub fn kl_table(cfg: &ExperimentConfig, out: &mut RunDir) -> Result<Option<bool>, CliError> {
    let mut w = out.csv(
        "kl_table.csv",
        &[
            "q_kind",
            "p_kind",
            "mean_gap",
            "sd",
            "closed_form",
            "quadrature",
            "abs_diff",
        ],
    )?;
    for pairing in Pairing::ALL {
        for &gap in &cfg.kl.mean_gaps {
            for &sd in &cfg.kl.scales {
                let p = dist(pairing.q_kind(), 0.0, sd)?;
                let q = dist(pairing.p_kind(), gap, sd)?;
                let closed = kl_closed_form(&p, &q).expect("all pairings have closed forms");
                let quad = kl_quadrature(&p, &q);
                w.write_record([
                    pairing.q_kind().to_string(),
                    pairing.p_kind().to_string(),
                    num(gap),
                    num(sd),
                    num(closed),
                    num(quad),
                    num((closed - quad).abs()),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(None)
}

fn dist(kind: IncrementKind, mu: f64, sd: f64) -> Result<ScalarDist, CliError> {
    Ok(match kind {
        IncrementKind::Gaussian => ScalarDist::gaussian(mu, sd)?,
        IncrementKind::Laplace => ScalarDist::laplace_with_sd(mu, sd)?,
        IncrementKind::Uniform => ScalarDist::uniform_with_sd(mu, sd)?,
    })
}

#[derive(Serialize)]
struct EnsembleMeta<'a> {
    seed: u64,
    process: &'a nndiff_core::ScheduleConfig,
    kind: IncrementKind,
    paths: usize,
}

#[derive(Serialize)]
struct SimulateSummary {
    kind: IncrementKind,
    paths: usize,
    checks: usize,
    failed: usize,
}

pub fn simulate(cfg: &ExperimentConfig, out: &mut RunDir) -> Result<Option<bool>, CliError> {
    let spec = cfg.build_process()?;
    let table = spec.moments();
    let data = Data::from_spec(&cfg.data)?;
    let (mean0, var0) = cfg.data.moments()?;
    let paths = ensemble(
        &spec,
        cfg.q_kind,
        &data,
        cfg.samples,
        derive_seed(cfg.seed, LABEL_DATA),
    )?;
    let mut w = out.csv(
        "simulate.csv",
        &[
            "k",
            "t",
            "coord",
            "mean",
            "variance",
            "expected_mean",
            "expected_variance",
            "z_mean",
            "z_variance",
            "pass",
        ],
    )?;
    let mut failed = 0;
    let mut checks = 0;
    for k in 0..=spec.steps() {
        let slice = paths.slice(k);
        let (a, g) = (table.alpha_bar[k], table.gamma_bar[k]);
        for i in 0..slice.dim() {
            let c = moment_check(&slice.column(i), a * mean0[i], a * a * var0[i] + g)?;
            checks += 1;
            failed += usize::from(!c.pass);
            let opt = |z: Option<f64>| z.map(num).unwrap_or_default();
            w.write_record([
                k.to_string(),
                num(table.times[k]),
                i.to_string(),
                num(c.mean),
                num(c.variance),
                num(c.expected_mean),
                num(c.expected_variance),
                opt(c.z_mean),
                opt(c.z_variance),
                c.pass.to_string(),
            ])?;
        }
    }
    w.flush()?;

    let d = paths.dim();
    let mut header = vec!["path_id".to_string(), "k".into(), "t".into()];
    header.extend((0..d).map(|i| format!("x_{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut w = out.csv("terminal_slice.csv", &header)?;
    let steps = spec.steps();
    let t_end = num(spec.grid.time(steps));
    for (i, row) in paths.slice(steps).rows().enumerate() {
        let mut rec = vec![i.to_string(), steps.to_string(), t_end.clone()];
        rec.extend(row.iter().map(|v| num(*v)));
        w.write_record(rec)?;
    }
    w.flush()?;
    out.json(
        "ensemble.json",
        &EnsembleMeta {
            seed: paths.seed,
            process: &cfg.process,
            kind: cfg.q_kind,
            paths: paths.len(),
        },
    )?;

    out.json(
        "summary.json",
        &SimulateSummary {
            kind: cfg.q_kind,
            paths: cfg.samples,
            checks,
            failed,
        },
    )?;
    log::info!("{failed} of {checks} moment checks failed");
    Ok(Some(failed == 0))
}

#[derive(Serialize)]
struct InvarianceVerdict {
    kind: IncrementKind,
    metric: Metric,
    medians: Vec<(usize, f64)>,
    loglog_slope: f64,
    strictly_decreasing: bool,
    /// KS critical value at the configured level; absent for the energy metric.
    critical_value: Option<f64>,
    below_critical: Option<bool>,
    pass: bool,
}

pub fn verify_invariance(
    cfg: &ExperimentConfig,
    out: &mut RunDir,
) -> Result<Option<bool>, CliError> {
    if cfg.q_kind == IncrementKind::Gaussian {
        log::warn!(
            "sweeping the Gaussian kind against itself; distances measure sampling noise only"
        );
    }
    let spec = cfg.build_process()?;
    let data = Data::from_spec(&cfg.data)?;
    let sweep = SweepConfig {
        steps: cfg.sweep.steps.clone(),
        samples: cfg.sweep.samples,
        replicates: cfg.sweep.replicates,
        metric: cfg.sweep.metric,
        seed: cfg.seed,
    };
    let table = convergence_sweep(&spec, cfg.q_kind, &data, &sweep)?;
    let mut w = out.csv("sweep.csv", &["T", "replicate", "seed", "distance"])?;
    for r in &table.rows {
        w.write_record([
            r.steps.to_string(),
            r.replicate.to_string(),
            r.seed.to_string(),
            num(r.distance),
        ])?;
    }
    w.flush()?;
    let medians = table.medians();
    let strictly_decreasing = table.strictly_decreasing();
    let critical_value = match cfg.sweep.metric {
        Metric::Ks => Some(ks_critical_value(
            cfg.sweep.alpha,
            cfg.sweep.samples,
            cfg.sweep.samples,
        )),
        Metric::Energy => None,
    };
    let last = medians.last().map(|m| m.1).unwrap_or(f64::NAN);
    let below_critical = critical_value.map(|c| last < c);
    let pass = strictly_decreasing && below_critical.unwrap_or(true);
    out.json(
        "verdict.json",
        &InvarianceVerdict {
            kind: cfg.q_kind,
            metric: cfg.sweep.metric,
            medians,
            loglog_slope: table.loglog_slope(),
            strictly_decreasing,
            critical_value,
            below_critical,
            pass,
        },
    )?;
    Ok(Some(pass))
}

pub fn train_model(cfg: &ExperimentConfig, out: &mut RunDir) -> Result<Option<bool>, CliError> {
    let spec = cfg.build_process()?;
    let data = Data::from_spec(&cfg.data)?;
    let tc = TrainConfig {
        pairing: cfg.pairing()?,
        steps: cfg.train.steps,
        learning_rate: cfg.train.learning_rate,
        schedule: cfg.train.schedule,
        batch_size: cfg.train.batch_size,
        hidden: cfg.train.hidden,
        seed: cfg.seed,
        forward: cfg.train.forward,
    };
    let result = train(&data, &spec, &tc)?;
    out.json("model.json", &result.model)?;
    let mut w = out.csv("trace.csv", &["step", "loss"])?;
    for (i, l) in result.trace.iter().enumerate() {
        w.write_record([(i + 1).to_string(), num(*l)])?;
    }
    w.flush()?;
    Ok(None)
}

#[derive(Serialize)]
struct SampleRow {
    p_kind: IncrementKind,
    energy_distance: f64,
    p_value: f64,
    reject: bool,
}

/// Reverse sampling with every `p_θ` increment kind, each compared with fresh
/// data draws by the energy-distance permutation test.
pub fn sample_all(cfg: &ExperimentConfig, out: &mut RunDir) -> Result<Option<bool>, CliError> {
    let spec = cfg.build_process()?;
    let score = score_model(cfg, &spec)?;
    let data = Data::from_spec(&cfg.data)?;
    let truth = data.draws(cfg.samples, derive_seed(cfg.seed, LABEL_TRUTH));
    let mut rows = Vec::new();
    for (i, kind) in IncrementKind::ALL.into_iter().enumerate() {
        let rs = ReverseSpec {
            spec: &spec,
            score: score.as_ref(),
            kind,
        };
        let x = sample(
            &rs,
            cfg.samples,
            derive_seed(derive_seed(cfg.seed, LABEL_CHAINS), i as u64),
        )?;
        write_points(out, &format!("samples_{kind}.csv"), &x)?;
        let test = energy_test(
            &x,
            &truth,
            PermutationConfig {
                seed: derive_seed(derive_seed(cfg.seed, LABEL_TEST), i as u64),
                ..Default::default()
            },
        )?;
        rows.push(SampleRow {
            p_kind: kind,
            energy_distance: test.statistic,
            p_value: test.p_value,
            reject: test.rejects_at(cfg.alpha),
        });
    }
    let pass = rows.iter().all(|r| !r.reject);
    out.json("sample_report.json", &rows)?;
    Ok(Some(pass))
}

#[derive(Serialize)]
struct ElboSummary {
    q_kind: IncrementKind,
    p_kind: IncrementKind,
    points: usize,
    recon_sigma: f64,
    l0: f64,
    lk_sum: f64,
    lt: f64,
    total: f64,
    total_stderr: f64,
}

pub fn elbo_terms(
    cfg: &ExperimentConfig,
    all_pairings: bool,
    out: &mut RunDir,
) -> Result<Option<bool>, CliError> {
    let spec = cfg.build_process()?;
    let score = score_model(cfg, &spec)?;
    let data = Data::from_spec(&cfg.data)?;
    let points = data.draws(cfg.points, derive_seed(cfg.seed, LABEL_DATA));
    let pairings = if all_pairings {
        Pairing::ALL.to_vec()
    } else {
        vec![cfg.pairing()?]
    };
    let mut w = out.csv(
        "elbo_terms.csv",
        &["q_kind", "p_kind", "from_step", "to_step", "l_k"],
    )?;
    let mut summaries = Vec::new();
    for p in pairings {
        let r = elbo(
            &points,
            score.as_ref(),
            &spec,
            p.q_kind(),
            p.p_kind(),
            None,
            derive_seed(cfg.seed, LABEL_ELBO),
        )?;
        for (j, l) in r.lk_terms.iter().enumerate() {
            w.write_record([
                p.q_kind().to_string(),
                p.p_kind().to_string(),
                (j + 2).to_string(),
                (j + 1).to_string(),
                num(*l),
            ])?;
        }
        summaries.push(ElboSummary {
            q_kind: r.q_kind,
            p_kind: r.p_kind,
            points: r.points,
            recon_sigma: r.recon_sigma,
            l0: r.l0,
            lk_sum: r.lk_terms.iter().sum(),
            lt: r.lt,
            total: r.total,
            total_stderr: r.total_stderr,
        });
    }
    w.flush()?;
    out.json("elbo.json", &summaries)?;
    Ok(None)
}

#[derive(Serialize)]
struct LikelihoodSummary {
    points: usize,
    mean: f64,
    stderr: f64,
    steps: usize,
    method: String,
    /// Mean absolute gap to the exact data log-density, when it is known.
    mean_abs_error: Option<f64>,
}

pub fn likelihood(cfg: &ExperimentConfig, out: &mut RunDir) -> Result<Option<bool>, CliError> {
    let spec = cfg.build_process()?;
    let score = score_model(cfg, &spec)?;
    let data = Data::from_spec(&cfg.data)?;
    let points = data.draws(cfg.points, derive_seed(cfg.seed, LABEL_DATA));
    let report = log_likelihood_batch(&points, &spec, score.as_ref())?;
    let mix = cfg.data.mixture()?;
    let exact: Option<Vec<f64>> = mix.map(|m| points.rows().map(|x| m.log_density(x)).collect());

    let mut header: Vec<String> = (0..points.dim()).map(|i| format!("x{i}")).collect();
    header.push("log_likelihood".into());
    header.push("exact".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut w = out.csv("likelihood.csv", &header)?;
    for (i, row) in points.rows().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| num(*v)).collect();
        rec.push(num(report.per_point[i]));
        rec.push(exact.as_ref().map(|e| num(e[i])).unwrap_or_default());
        w.write_record(rec)?;
    }
    w.flush()?;
    let mean_abs_error = exact.as_ref().map(|e| {
        e.iter()
            .zip(&report.per_point)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / e.len() as f64
    });
    out.json(
        "likelihood.json",
        &LikelihoodSummary {
            points: points.len(),
            mean: report.mean,
            stderr: report.stderr,
            steps: report.steps,
            method: report.method,
            mean_abs_error,
        },
    )?;
    Ok(None)
}
