use crate::error::{Result, SketchError};
use crate::tensor::{CpTensor, DenseTensor};

/// Reported PSNR when the estimate matches the reference exactly.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Relative Frobenius residual `‖T - [[λ; U, V, W]]‖ / ‖T‖`. For an all-zero
/// `t` the absolute residual is returned.
pub fn residual_norm(t: &DenseTensor, cp: &CpTensor) -> Result<f64> {
    if cp.shape() != t.shape() {
        return Err(SketchError::shape(format!(
            "CP shape {:?} vs tensor shape {:?}",
            cp.shape(),
            t.shape()
        )));
    }
    let diff = t.sub(&cp.densify())?.frobenius_norm();
    let base = t.frobenius_norm();
    Ok(if base > 0.0 { diff / base } else { diff })
}

/// `10 log10(peak² / MSE)` with `peak = max |reference|`, capped at
/// [`PSNR_CAP_DB`].
pub fn psnr(reference: &DenseTensor, estimate: &DenseTensor) -> Result<f64> {
    if reference.shape() != estimate.shape() {
        return Err(SketchError::shape(format!(
            "{:?} vs {:?}",
            reference.shape(),
            estimate.shape()
        )));
    }
    let peak = reference.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mse = reference
        .data()
        .iter()
        .zip(estimate.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / reference.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}
