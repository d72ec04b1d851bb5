//! FFT helpers for the convolution-based sketch paths.
//!
//! Linear convolutions of total length `n` are computed on a power-of-two
//! grid of size `>= n`; circular convolutions use a grid of exactly the
//! circular length.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Result, SketchError};

/// Bound on `‖imag‖ / ‖output‖` after an inverse transform of a spectrum
/// that should be Hermitian.
pub const IMAG_RESIDUE_TOL: f64 = 1e-9;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(size: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(size)
        } else {
            p.plan_fft_forward(size)
        }
    })
}

/// Grid size used for a linear convolution whose output has `len` entries.
pub fn linear_grid(len: usize) -> usize {
    len.next_power_of_two()
}

/// Transform of `x` zero-padded to `size`.
pub fn forward(x: &[f64], size: usize) -> Vec<Complex64> {
    debug_assert!(x.len() <= size);
    let mut buf: Vec<Complex64> = Vec::with_capacity(size);
    buf.extend(x.iter().map(|&v| Complex64::new(v, 0.0)));
    buf.resize(size, Complex64::new(0.0, 0.0));
    plan(size, false).process(&mut buf);
    buf
}

/// Inverse transform (normalized) returning the first `len` real parts.
/// Fails if the discarded imaginary part is not round-off.
pub fn inverse_real(mut spectrum: Vec<Complex64>, len: usize) -> Result<Vec<f64>> {
    let size = spectrum.len();
    plan(size, true).process(&mut spectrum);
    let scale = 1.0 / size as f64;
    let mut re_sq = 0.0;
    let mut im_sq = 0.0;
    for c in &spectrum {
        re_sq += c.re * c.re;
        im_sq += c.im * c.im;
    }
    let re_norm = re_sq.sqrt() * scale;
    let im_norm = im_sq.sqrt() * scale;
    if !(re_norm.is_finite() && im_norm.is_finite()) {
        return Err(SketchError::Numeric("non-finite inverse FFT output".into()));
    }
    if im_norm > IMAG_RESIDUE_TOL * re_norm.max(f64::MIN_POSITIVE) && im_norm > 1e-300 {
        return Err(SketchError::Numeric(format!(
            "imaginary residue {im_norm:e} exceeds tolerance for output norm {re_norm:e}"
        )));
    }
    Ok(spectrum.iter().take(len).map(|c| c.re * scale).collect())
}

/// Linear convolution of all inputs, output length `sum len - (k - 1)`.
pub fn linear_convolve(inputs: &[&[f64]]) -> Result<Vec<f64>> {
    let out_len = inputs.iter().map(|x| x.len()).sum::<usize>() + 1 - inputs.len();
    let size = linear_grid(out_len);
    let mut acc = forward(inputs[0], size);
    for x in &inputs[1..] {
        for (a, b) in acc.iter_mut().zip(forward(x, size)) {
            *a *= b;
        }
    }
    inverse_real(acc, out_len)
}

/// Direct `O(n m)` linear convolution; the reference for the FFT paths.
pub fn direct_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}
