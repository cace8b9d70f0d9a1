//! Fixtures shared by the benchmarks.

use nndiff_core::rng::child_stream;
use nndiff_core::walk::InitialSampler;
use nndiff_core::{GaussianMixture, PointCloud, ProcessSpec, Schedule, TimeGrid};

/// Variance-preserving linear schedule on a uniform grid of `steps` steps.
pub fn vp_process(steps: usize) -> ProcessSpec {
    ProcessSpec::from_schedule(
        Schedule::DdpmLinear {
            beta_min: 0.1,
            beta_max: 20.0,
        },
        TimeGrid::uniform(steps).expect("steps > 0"),
    )
    .expect("valid schedule")
}

/// `n` draws from the two-component 2-D mixture.
pub fn mixture_cloud(n: usize, seed: u64) -> PointCloud {
    let mix = GaussianMixture::two_component_2d();
    let mut data = vec![0.0; 2 * n];
    for (i, row) in data.chunks_mut(2).enumerate() {
        mix.draw(&mut child_stream(seed, i as u64), row);
    }
    PointCloud::new(2, data).expect("rows of width 2")
}
