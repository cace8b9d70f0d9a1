//! Monte Carlo properties spanning several modules.

use nndiff_core::analysis::{energy_test, ks_two_sample, moment_check, PermutationConfig};
use nndiff_core::rng::{child_stream, derive_seed};
use nndiff_core::sampler::{sample, ReverseSpec};
use nndiff_core::score::{train, AnalyticScore};
use nndiff_core::walk::{ensemble, refine_nested, terminal_states, InitialSampler};
use nndiff_core::{
    GaussianMixture, IncrementKind, LrSchedule, Pairing, PointCloud, ProcessSpec, Schedule,
    TimeGrid, TrainConfig,
};

fn vp(grid: TimeGrid) -> ProcessSpec {
    ProcessSpec::from_schedule(
        Schedule::DdpmLinear {
            beta_min: 0.1,
            beta_max: 20.0,
        },
        grid,
    )
    .unwrap()
}

fn mixture_draws(mix: &GaussianMixture, n: usize, seed: u64) -> PointCloud {
    let d = mix.dim();
    let mut data = vec![0.0; n * d];
    for (i, row) in data.chunks_mut(d).enumerate() {
        mix.draw(&mut child_stream(seed, i as u64), row);
    }
    PointCloud::new(d, data).unwrap()
}

#[test]
fn moment_law_on_a_nonuniform_grid_from_mixture_data() {
    let times: Vec<f64> = (0..=24).map(|i| (i as f64 / 24.0).powi(2)).collect();
    let spec = vp(TimeGrid::custom(times).unwrap());
    let table = spec.moments();
    let mix = GaussianMixture::two_component_2d();
    let mean0 = [0.12, 0.24];
    let var0 = [1.3756, 0.6439];
    for (i, kind) in IncrementKind::ALL.into_iter().enumerate() {
        let e = ensemble(&spec, kind, &mix, 40_000, 90 + i as u64).unwrap();
        for k in [1, 6, 12, 24] {
            let slice = e.slice(k);
            let a = table.alpha_bar[k];
            for c in 0..2 {
                let check = moment_check(
                    &slice.column(c),
                    a * mean0[c],
                    a * a * var0[c] + table.gamma_bar[k],
                )
                .unwrap();
                assert!(check.pass, "{kind} k={k} coord {c}: {check:?}");
            }
        }
    }
}

#[test]
fn refined_walks_approach_the_gaussian_walk() {
    let spec = ProcessSpec::from_schedule(
        Schedule::Constant { beta: -2.0, g: 2.0 },
        TimeGrid::uniform(4).unwrap(),
    )
    .unwrap();
    let n = 20_000;
    let gauss = terminal_states(&spec, IncrementKind::Gaussian, &vec![0.0], n, 1).unwrap();
    let refined: Vec<f64> = (0..n)
        .map(|i| {
            let path = refine_nested(
                &spec,
                IncrementKind::Uniform,
                &[0.0],
                64,
                &mut child_stream(2, i as u64),
            )
            .unwrap();
            path.states.row(4)[0]
        })
        .collect();
    let coarse = terminal_states(&spec, IncrementKind::Uniform, &vec![0.0], n, 3).unwrap();
    let near = ks_two_sample(&refined, gauss.as_slice()).unwrap();
    let far = ks_two_sample(coarse.as_slice(), gauss.as_slice()).unwrap();
    assert!(!near.reject, "refined: {near:?}");
    assert!(far.statistic > near.statistic);
}

#[test]
fn reverse_sampling_recovers_a_standard_normal() {
    let spec = vp(TimeGrid::uniform(200).unwrap());
    let score = AnalyticScore::new(GaussianMixture::standard_normal(1), spec.clone());
    for (i, kind) in IncrementKind::ALL.into_iter().enumerate() {
        let rs = ReverseSpec {
            spec: &spec,
            score: &score,
            kind,
        };
        let x = sample(&rs, 50_000, 40 + i as u64).unwrap();
        // the reverse Euler chain carries O(Δ) bias; 200 steps keep it below the MC error
        let check = moment_check(x.as_slice(), 0.0, 1.0).unwrap();
        assert!(check.pass, "{kind}: {check:?}");
    }
}

#[test]
fn energy_test_holds_its_size() {
    let mix = GaussianMixture::two_component_2d();
    let reps = 40;
    let mut rejections = 0;
    for r in 0..reps {
        let a = mixture_draws(&mix, 200, derive_seed(7, 2 * r));
        let b = mixture_draws(&mix, 200, derive_seed(7, 2 * r + 1));
        let cfg = PermutationConfig {
            permutations: 99,
            seed: r,
            ..Default::default()
        };
        rejections += usize::from(energy_test(&a, &b, cfg).unwrap().rejects_at(0.05));
    }
    // P(Binomial(40, 0.05) >= 7) < 0.01
    assert!(rejections < 7, "{rejections} of {reps} rejected");
}

#[test]
fn training_loss_falls_for_every_pairing_and_seed() {
    let spec = vp(TimeGrid::uniform(64).unwrap());
    let mix = GaussianMixture::two_component_2d();
    for pairing in Pairing::ALL {
        for seed in 0..5 {
            let cfg = TrainConfig {
                pairing,
                steps: 2000,
                hidden: 32,
                learning_rate: 0.05,
                schedule: LrSchedule::Constant,
                seed,
                ..Default::default()
            };
            let out = train(&mix, &spec, &cfg).unwrap();
            let w = out.trace.len() / 10;
            let first = out.trace[..w].iter().sum::<f64>() / w as f64;
            let last = out.trace[out.trace.len() - w..].iter().sum::<f64>() / w as f64;
            assert!(last < first, "{pairing} seed {seed}: {first} -> {last}");
        }
    }
}
