use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{norm, random_unit, PhaseTimings};
use crate::error::{Result, SketchError};
use crate::estimators::{Backend, Contraction, EstimatorConfig};
use crate::hashing::derive_seed;
use crate::tensor::{CpTensor, DenseTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtpmConfig {
    pub rank: usize,
    /// Random restarts per component (`L`).
    pub num_inits: usize,
    /// Power iterations per restart (`T`), also used for the final refinement.
    pub num_iters: usize,
    pub backend: Backend,
    pub estimator: EstimatorConfig,
    /// Seed for the random initial vectors; independent of the hash seed so
    /// that backends can be compared from identical starts.
    pub seed: u64,
}

impl RtpmConfig {
    pub fn new(rank: usize, backend: Backend, estimator: EstimatorConfig, seed: u64) -> Self {
        RtpmConfig {
            rank,
            num_inits: 15,
            num_iters: 20,
            backend,
            estimator,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.rank == 0 || self.num_inits == 0 || self.num_iters == 0 {
            return Err(SketchError::invalid(
                "rank, restarts and iterations must be >= 1",
            ));
        }
        if self.backend != Backend::Plain {
            self.estimator.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RtpmResult {
    /// Unit-norm factors with the recovered eigenvalues as weights.
    pub cp: CpTensor,
    pub eigenvalues: Vec<f64>,
    pub timings: PhaseTimings,
}

fn normalized(v: Vec<f64>) -> Option<Vec<f64>> {
    let n = norm(&v);
    (n > 0.0 && n.is_finite()).then(|| v.into_iter().map(|x| x / n).collect())
}

/// Runs `iters` symmetric power steps `u <- T(I,u,u) / ‖T(I,u,u)‖`. Stops
/// early if the image vanishes.
fn power_iterate(eng: &dyn Contraction, mut u: Vec<f64>, iters: usize) -> Result<Vec<f64>> {
    for _ in 0..iters {
        match normalized(eng.free(0, &u, &u)?) {
            Some(next) => u = next,
            None => break,
        }
    }
    Ok(u)
}

/// Symmetric robust tensor power method with deflation.
///
/// For each component: `L` random unit starts, `T` power iterations each,
/// keep the start with the largest `T(u,u,u)`, refine it with `T` more
/// iterations, record `λ = T(u,u,u)` and deflate `T <- T - λ u∘u∘u`. All
/// contractions go through the configured backend. A non-positive `λ`
/// (possible under sketch noise) is kept as is.
pub fn rtpm(t: &DenseTensor, cfg: &RtpmConfig) -> Result<RtpmResult> {
    cfg.validate()?;
    let dim = match t.shape() {
        &[a, b, c] if a == b && b == c => a,
        s => {
            return Err(SketchError::shape(format!(
                "symmetric RTPM needs a cubical 3rd-order tensor, got {s:?}"
            )))
        }
    };
    let start = Instant::now();
    let mut eng = cfg.backend.build(t, &cfg.estimator)?;
    let build = start.elapsed();

    let start = Instant::now();
    let mut factor = DMatrix::zeros(dim, cfg.rank);
    let mut eigenvalues = Vec::with_capacity(cfg.rank);
    for r in 0..cfg.rank {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for l in 0..cfg.num_inits {
            let stream = (r * cfg.num_inits + l) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, stream));
            let u = power_iterate(eng.as_ref(), random_unit(dim, &mut rng), cfg.num_iters)?;
            let value = eng.abc(&u, &u, &u)?;
            if best.as_ref().is_none_or(|(b, _)| value > *b) {
                best = Some((value, u));
            }
        }
        let (_, u) = best.expect("at least one restart");
        let u = power_iterate(eng.as_ref(), u, cfg.num_iters)?;
        let lambda = eng.abc(&u, &u, &u)?;
        if !lambda.is_finite() {
            return Err(SketchError::Numeric(format!(
                "non-finite eigenvalue for component {r}"
            )));
        }
        eng.deflate(lambda, &u, &u, &u)?;
        factor.set_column(r, &nalgebra::DVector::from_vec(u));
        eigenvalues.push(lambda);
    }
    let iterations = start.elapsed();
    let cp = CpTensor::new(
        eigenvalues.clone(),
        vec![factor.clone(), factor.clone(), factor],
    )?;
    Ok(RtpmResult {
        cp,
        eigenvalues,
        timings: PhaseTimings::new(build, iterations),
    })
}

/// Alternating rank-1 updates `u <- T(I,v,w)`, `v <- T(u,I,w)`,
/// `w <- T(u,v,I)`, each normalized.
fn alternate(eng: &dyn Contraction, mut uvw: [Vec<f64>; 3], iters: usize) -> Result<[Vec<f64>; 3]> {
    for _ in 0..iters {
        for mode in 0..3 {
            let next = {
                let [u, v, w] = &uvw;
                match mode {
                    0 => eng.free(0, v, w)?,
                    1 => eng.free(1, u, w)?,
                    _ => eng.free(2, u, v)?,
                }
            };
            match normalized(next) {
                Some(n) => uvw[mode] = n,
                None => return Ok(uvw),
            }
        }
    }
    Ok(uvw)
}

/// Asymmetric tensor power method for any 3rd-order shape, deflating with
/// `λ u∘v∘w`.
pub fn rtpm_asym(t: &DenseTensor, cfg: &RtpmConfig) -> Result<RtpmResult> {
    cfg.validate()?;
    let shape = match t.shape() {
        &[a, b, c] => [a, b, c],
        s => {
            return Err(SketchError::shape(format!(
                "expected a 3rd-order tensor, got {s:?}"
            )))
        }
    };
    let start = Instant::now();
    let mut eng = cfg.backend.build(t, &cfg.estimator)?;
    let build = start.elapsed();

    let start = Instant::now();
    let mut factors: Vec<DMatrix<f64>> =
        shape.iter().map(|&d| DMatrix::zeros(d, cfg.rank)).collect();
    let mut weights = Vec::with_capacity(cfg.rank);
    for r in 0..cfg.rank {
        let mut best: Option<(f64, [Vec<f64>; 3])> = None;
        for l in 0..cfg.num_inits {
            let stream = (r * cfg.num_inits + l) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, stream));
            let init = shape.map(|d| random_unit(d, &mut rng));
            let uvw = alternate(eng.as_ref(), init, cfg.num_iters)?;
            let value = eng.abc(&uvw[0], &uvw[1], &uvw[2])?;
            if best.as_ref().is_none_or(|(b, _)| value > *b) {
                best = Some((value, uvw));
            }
        }
        let (_, uvw) = best.expect("at least one restart");
        let [u, v, w] = alternate(eng.as_ref(), uvw, cfg.num_iters)?;
        let lambda = eng.abc(&u, &v, &w)?;
        if !lambda.is_finite() {
            return Err(SketchError::Numeric(format!(
                "non-finite weight for component {r}"
            )));
        }
        eng.deflate(lambda, &u, &v, &w)?;
        for (f, x) in factors.iter_mut().zip([u, v, w]) {
            f.set_column(r, &nalgebra::DVector::from_vec(x));
        }
        weights.push(lambda);
    }
    let iterations = start.elapsed();
    Ok(RtpmResult {
        cp: CpTensor::new(weights.clone(), factors)?,
        eigenvalues: weights,
        timings: PhaseTimings::new(build, iterations),
    })
}
