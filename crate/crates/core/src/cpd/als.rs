use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::PhaseTimings;
use crate::error::{Result, SketchError};
use crate::estimators::{Backend, Contraction, EstimatorConfig};
use crate::tensor::{other_modes, CpTensor, DenseTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlsConfig {
    pub rank: usize,
    pub max_iters: usize,
    pub backend: Backend,
    pub estimator: EstimatorConfig,
    /// Stop when the tracked relative residual changes by less than this.
    pub tol: f64,
    /// Seed for the random initial factors.
    pub seed: u64,
}

impl AlsConfig {
    pub fn new(rank: usize, backend: Backend, estimator: EstimatorConfig, seed: u64) -> Self {
        AlsConfig {
            rank,
            max_iters: 50,
            backend,
            estimator,
            tol: 1e-8,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AlsResult {
    pub cp: CpTensor,
    pub sweeps: usize,
    /// Relative residual after each sweep as seen through the backend.
    pub tracked_residuals: Vec<f64>,
    pub timings: PhaseTimings,
}

/// Elementwise product of the Gram matrices of the two non-updated factors.
fn gram_hadamard(factors: &[DMatrix<f64>], skip: usize) -> DMatrix<f64> {
    let r = factors[0].ncols();
    let mut g = DMatrix::from_element(r, r, 1.0);
    for (n, f) in factors.iter().enumerate() {
        if n != skip {
            g.component_mul_assign(&(f.transpose() * f));
        }
    }
    g
}

/// Relative residual from the backend: `‖T‖² - 2 Σ λ_r T(a_r, b_r, c_r)
/// + λᵀ (AᵀA ∗ BᵀB ∗ CᵀC) λ`.
fn tracked_residual(
    eng: &dyn Contraction,
    norm_sq: f64,
    weights: &[f64],
    factors: &[DMatrix<f64>],
) -> Result<f64> {
    let mut cross = 0.0;
    for (r, &w) in weights.iter().enumerate() {
        let col = |n: usize| factors[n].column(r).iter().copied().collect::<Vec<_>>();
        cross += w * eng.abc(&col(0), &col(1), &col(2))?;
    }
    let lam = DVector::from_column_slice(weights);
    let g = gram_hadamard(factors, usize::MAX);
    let model_sq = lam.dot(&(&g * &lam));
    let res_sq = (norm_sq - 2.0 * cross + model_sq).max(0.0);
    Ok(if norm_sq > 0.0 {
        (res_sq / norm_sq).sqrt()
    } else {
        res_sq.sqrt()
    })
}

/// CP-ALS for 3rd-order tensors.
///
/// Each mode update solves `U_n = M_n (G_n)^+` where `M_n` is the
/// matricized-tensor-times-Khatri-Rao product, assembled column by column
/// from the backend's contractions (`T(I, b_r, c_r)` etc.), and `G_n` the
/// Hadamard product of the other two Gram matrices. Columns are normalized
/// into the weights after every update.
pub fn als(t: &DenseTensor, cfg: &AlsConfig) -> Result<AlsResult> {
    if cfg.rank == 0 || cfg.max_iters == 0 {
        return Err(SketchError::invalid("rank and max_iters must be >= 1"));
    }
    if cfg.backend != Backend::Plain {
        cfg.estimator.validate()?;
    }
    let shape = match t.shape() {
        &[a, b, c] => [a, b, c],
        s => {
            return Err(SketchError::shape(format!(
                "expected a 3rd-order tensor, got {s:?}"
            )))
        }
    };
    let start = Instant::now();
    let eng = cfg.backend.build(t, &cfg.estimator)?;
    let norm_sq = t.frobenius_norm().powi(2);
    let build = start.elapsed();

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut factors: Vec<DMatrix<f64>> = shape
        .iter()
        .map(|&d| DMatrix::from_fn(d, cfg.rank, |_, _| rng.sample(StandardNormal)))
        .collect();
    let mut weights = vec![1.0; cfg.rank];
    for f in factors.iter_mut() {
        normalize_columns(f);
    }

    let mut tracked = Vec::new();
    let mut prev = f64::INFINITY;
    let mut sweeps = 0;
    for _ in 0..cfg.max_iters {
        sweeps += 1;
        for mode in 0..3 {
            let (mx, my) = other_modes(mode);
            let mut mttkrp = DMatrix::zeros(shape[mode], cfg.rank);
            for r in 0..cfg.rank {
                let x: Vec<f64> = factors[mx].column(r).iter().copied().collect();
                let y: Vec<f64> = factors[my].column(r).iter().copied().collect();
                let col = eng.free(mode, &x, &y)?;
                mttkrp.set_column(r, &DVector::from_vec(col));
            }
            let g = gram_hadamard(&factors, mode);
            let pinv = g
                .pseudo_inverse(1e-12)
                .map_err(|e| SketchError::Numeric(format!("Gram pseudo-inverse failed: {e}")))?;
            let mut updated = mttkrp * pinv;
            weights = normalize_columns(&mut updated);
            factors[mode] = updated;
        }
        let res = tracked_residual(eng.as_ref(), norm_sq, &weights, &factors)?;
        if !res.is_finite() {
            return Err(SketchError::Numeric("non-finite residual in ALS".into()));
        }
        tracked.push(res);
        if (prev - res).abs() < cfg.tol {
            break;
        }
        prev = res;
    }
    let iterations = start.elapsed();
    Ok(AlsResult {
        cp: CpTensor::new(weights, factors)?,
        sweeps,
        tracked_residuals: tracked,
        timings: PhaseTimings::new(build, iterations),
    })
}

/// Scales columns to unit norm and returns the norms; zero columns stay.
fn normalize_columns(m: &mut DMatrix<f64>) -> Vec<f64> {
    m.column_iter_mut()
        .map(|mut c| {
            let n = c.norm();
            if n > 0.0 {
                c /= n;
            }
            n
        })
        .collect()
}
