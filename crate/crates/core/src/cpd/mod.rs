//! CP decomposition of 3rd-order tensors: robust tensor power method and
//! alternating least squares, each running on any [`Backend`] for its
//! contractions.
//!
//! [`Backend`]: crate::estimators::Backend

mod als;
mod metrics;
mod rtpm;

use std::time::Duration;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use als::{als, AlsConfig, AlsResult};
pub use metrics::{psnr, residual_norm, PSNR_CAP_DB};
pub use rtpm::{rtpm, rtpm_asym, RtpmConfig, RtpmResult};

/// Wall time split into sketch construction and solver iterations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub sketch_build_s: f64,
    pub iterations_s: f64,
}

impl PhaseTimings {
    pub(crate) fn new(build: Duration, iterations: Duration) -> Self {
        PhaseTimings {
            sketch_build_s: build.as_secs_f64(),
            iterations_s: iterations.as_secs_f64(),
        }
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn random_unit(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let len = norm(&v);
        if len > 0.0 {
            return v.into_iter().map(|x| x / len).collect();
        }
    }
}
