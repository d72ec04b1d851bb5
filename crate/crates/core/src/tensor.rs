//! Dense and CP-form tensors.
//!
//! Dense storage is column-major (first index fastest): the multi-index
//! `(i_1, .., i_N)` (0-based) lives at `sum_n i_n * prod_{m<n} I_m`. The
//! vectorization `vec(T)` is therefore the raw data slice, and
//! `vec(u ∘ v) = v ⊗ u`.
//!
//! Modes are 0-based throughout the API.

use nalgebra::DMatrix;

use crate::error::{Result, SketchError};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(SketchError::invalid(format!(
                "tensor shape must be non-empty with positive dims, got {shape:?}"
            )));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(SketchError::shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let len = shape.iter().product();
        Self::new(shape.to_vec(), vec![0.0; len])
    }

    /// Fills entries from a function of the multi-index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        let mut idx = vec![0usize; shape.len()];
        for v in t.data.iter_mut() {
            *v = f(&idx);
            advance(&mut idx, shape);
        }
        Ok(t)
    }

    /// Order-1 tensor holding `v`.
    pub fn from_vector(v: &[f64]) -> Result<Self> {
        Self::new(vec![v.len()], v.to_vec())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `vec(T)`.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut l = 0;
        let mut stride = 1;
        for (&i, &d) in idx.iter().zip(&self.shape) {
            debug_assert!(i < d);
            l += i * stride;
            stride *= d;
        }
        l
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.linear_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let l = self.linear_index(idx);
        self.data[l] = value;
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn nnz(&self) -> usize {
        self.data.iter().filter(|&&x| x != 0.0).count()
    }

    pub fn scaled(&self, alpha: f64) -> DenseTensor {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| alpha * x).collect(),
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &DenseTensor) -> Result<()> {
        check_same_shape(self, other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &DenseTensor) -> Result<DenseTensor> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    /// Calls `f(multi_index, value)` for every non-zero entry in storage order.
    pub fn for_each_nonzero(&self, mut f: impl FnMut(&[usize], f64)) {
        let mut idx = vec![0usize; self.shape.len()];
        for &v in &self.data {
            if v != 0.0 {
                f(&idx, v);
            }
            advance(&mut idx, &self.shape);
        }
    }

    pub fn has_non_finite(&self) -> bool {
        self.data.iter().any(|x| !x.is_finite())
    }
}

/// Increments a column-major multi-index in place.
#[inline]
pub(crate) fn advance(idx: &mut [usize], shape: &[usize]) {
    for (i, &d) in idx.iter_mut().zip(shape) {
        *i += 1;
        if *i < d {
            return;
        }
        *i = 0;
    }
}

fn check_same_shape(a: &DenseTensor, b: &DenseTensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(SketchError::shape(format!(
            "{:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    Ok(())
}

/// `[[λ; U^(1), .., U^(N)]]`, factors stored as `I_n x R` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct CpTensor {
    weights: Vec<f64>,
    factors: Vec<DMatrix<f64>>,
}

impl CpTensor {
    pub fn new(weights: Vec<f64>, factors: Vec<DMatrix<f64>>) -> Result<Self> {
        if factors.is_empty() {
            return Err(SketchError::invalid("CP tensor needs at least one factor"));
        }
        let rank = weights.len();
        for (n, f) in factors.iter().enumerate() {
            if f.ncols() != rank {
                return Err(SketchError::shape(format!(
                    "factor {n} has {} columns, expected rank {rank}",
                    f.ncols()
                )));
            }
            if f.nrows() == 0 {
                return Err(SketchError::invalid(format!("factor {n} has no rows")));
            }
        }
        Ok(CpTensor { weights, factors })
    }

    /// Single rank-1 term `λ v_1 ∘ .. ∘ v_N`.
    pub fn rank_one(weight: f64, vectors: &[&[f64]]) -> Result<Self> {
        let factors = vectors
            .iter()
            .map(|v| DMatrix::from_column_slice(v.len(), 1, v))
            .collect();
        Self::new(vec![weight], factors)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    pub fn factor(&self, mode: usize) -> &DMatrix<f64> {
        &self.factors[mode]
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(DMatrix::nrows).collect()
    }

    pub fn densify(&self) -> DenseTensor {
        densify(self)
    }

    pub fn scaled(&self, alpha: f64) -> CpTensor {
        CpTensor {
            weights: self.weights.iter().map(|w| alpha * w).collect(),
            factors: self.factors.clone(),
        }
    }
}

/// Entry `(i_1..i_N)` = `sum_r λ_r prod_n U^(n)[i_n, r]`.
pub fn densify(cp: &CpTensor) -> DenseTensor {
    let shape = cp.shape();
    let mut out = DenseTensor::zeros(&shape).expect("CP factors have positive rows");
    // Accumulate each rank-1 term as a growing Kronecker product, which
    // matches the column-major layout mode by mode.
    let mut term = Vec::with_capacity(out.len());
    for (r, &lambda) in cp.weights.iter().enumerate() {
        if lambda == 0.0 {
            continue;
        }
        term.clear();
        term.push(lambda);
        for f in &cp.factors {
            let col = f.column(r);
            let prev = std::mem::take(&mut term);
            term.reserve(prev.len() * col.len());
            for &c in col.iter() {
                term.extend(prev.iter().map(|&p| p * c));
            }
        }
        for (o, t) in out.data.iter_mut().zip(&term) {
            *o += t;
        }
    }
    out
}

/// Kolda mode-`mode` unfolding: `I_mode x prod_{k != mode} I_k`.
pub fn mode_unfold(t: &DenseTensor, mode: usize) -> Result<DMatrix<f64>> {
    if mode >= t.order() {
        return Err(SketchError::invalid(format!(
            "mode {mode} out of range for order-{} tensor",
            t.order()
        )));
    }
    let rows = t.shape[mode];
    let cols = t.len() / rows;
    let mut m = DMatrix::zeros(rows, cols);
    let mut idx = vec![0usize; t.order()];
    for &v in &t.data {
        let (r, c) = unfold_position(&idx, &t.shape, mode);
        m[(r, c)] = v;
        advance(&mut idx, &t.shape);
    }
    Ok(m)
}

/// Inverse of [`mode_unfold`].
pub fn refold(m: &DMatrix<f64>, mode: usize, shape: &[usize]) -> Result<DenseTensor> {
    if mode >= shape.len() {
        return Err(SketchError::invalid(format!("mode {mode} out of range")));
    }
    let total: usize = shape.iter().product();
    if m.nrows() != shape[mode] || m.nrows() * m.ncols() != total {
        return Err(SketchError::shape(format!(
            "{}x{} matrix cannot refold to {shape:?} along mode {mode}",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut idx = vec![0usize; shape.len()];
    let mut data = Vec::with_capacity(total);
    for _ in 0..total {
        let (r, c) = unfold_position(&idx, shape, mode);
        data.push(m[(r, c)]);
        advance(&mut idx, shape);
    }
    DenseTensor::new(shape.to_vec(), data)
}

fn unfold_position(idx: &[usize], shape: &[usize], mode: usize) -> (usize, usize) {
    let mut col = 0;
    let mut stride = 1;
    for (k, (&i, &d)) in idx.iter().zip(shape).enumerate() {
        if k == mode {
            continue;
        }
        col += i * stride;
        stride *= d;
    }
    (idx[mode], col)
}

/// `vec(a)ᵀ vec(b)`.
pub fn inner(a: &DenseTensor, b: &DenseTensor) -> Result<f64> {
    check_same_shape(a, b)?;
    Ok(dot(&a.data, &b.data))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_third_order(t: &DenseTensor, vectors: &[(usize, &[f64])]) -> Result<()> {
    if t.order() != 3 {
        return Err(SketchError::shape(format!(
            "expected a 3rd-order tensor, got order {}",
            t.order()
        )));
    }
    for &(mode, v) in vectors {
        if v.len() != t.shape[mode] {
            return Err(SketchError::shape(format!(
                "vector of length {} for mode {mode} of size {}",
                v.len(),
                t.shape[mode]
            )));
        }
    }
    Ok(())
}

/// `T(a, b, c) = sum_{ijk} T[i,j,k] a_i b_j c_k`.
pub fn contract_abc(t: &DenseTensor, a: &[f64], b: &[f64], c: &[f64]) -> Result<f64> {
    check_third_order(t, &[(0, a), (1, b), (2, c)])?;
    let (i_n, j_n) = (t.shape[0], t.shape[1]);
    let mut total = 0.0;
    for (k, &ck) in c.iter().enumerate() {
        if ck == 0.0 {
            continue;
        }
        for (j, &bj) in b.iter().enumerate() {
            if bj == 0.0 {
                continue;
            }
            let start = (k * j_n + j) * i_n;
            total += ck * bj * dot(&t.data[start..start + i_n], a);
        }
    }
    Ok(total)
}

/// `T(u, u, u)`.
pub fn contract_uuu(t: &DenseTensor, u: &[f64]) -> Result<f64> {
    contract_abc(t, u, u, u)
}

/// `T(I, u, u)`.
pub fn contract_iuu(t: &DenseTensor, u: &[f64]) -> Result<Vec<f64>> {
    contract_free(t, 0, u, u)
}

/// Contracts a 3rd-order tensor with `x` and `y` on the two modes other than
/// `free_mode` (`x` on the lower mode), leaving a vector along `free_mode`.
/// `free_mode = 0` gives `T(I, x, y)`, `1` gives `T(x, I, y)`, `2` gives
/// `T(x, y, I)`.
pub fn contract_free(t: &DenseTensor, free_mode: usize, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    if free_mode > 2 {
        return Err(SketchError::invalid(format!(
            "free mode {free_mode} out of range"
        )));
    }
    let (mx, my) = other_modes(free_mode);
    check_third_order(t, &[(mx, x), (my, y)])?;
    let shape = &t.shape;
    let mut out = vec![0.0; shape[free_mode]];
    let mut vecs: [&[f64]; 3] = [&[], &[], &[]];
    vecs[mx] = x;
    vecs[my] = y;
    let (i_n, j_n) = (shape[0], shape[1]);
    for k in 0..shape[2] {
        for j in 0..j_n {
            let start = (k * j_n + j) * i_n;
            let fiber = &t.data[start..start + i_n];
            match free_mode {
                0 => {
                    let w = vecs[1][j] * vecs[2][k];
                    if w != 0.0 {
                        for (o, &v) in out.iter_mut().zip(fiber) {
                            *o += w * v;
                        }
                    }
                }
                1 => out[j] += vecs[2][k] * dot(fiber, vecs[0]),
                _ => out[k] += vecs[1][j] * dot(fiber, vecs[0]),
            }
        }
    }
    Ok(out)
}

/// The two contracted modes for a given free mode, in increasing order.
pub(crate) fn other_modes(free_mode: usize) -> (usize, usize) {
    match free_mode {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    DMatrix::from_fn(ar * br, ac * bc, |r, c| {
        a[(r / br, c / bc)] * b[(r % br, c % bc)]
    })
}

/// Contracts mode `mode_a` of `a` with mode `mode_b` of `b`. The result keeps
/// the free modes of `a` in order followed by the free modes of `b`; if both
/// operands are vectors the scalar comes back as shape `[1]`.
pub fn contract_pair(
    a: &DenseTensor,
    b: &DenseTensor,
    mode_a: usize,
    mode_b: usize,
) -> Result<DenseTensor> {
    if mode_a >= a.order() || mode_b >= b.order() {
        return Err(SketchError::invalid("contraction mode out of range"));
    }
    if a.shape[mode_a] != b.shape[mode_b] {
        return Err(SketchError::shape(format!(
            "contracted dims differ: {} vs {}",
            a.shape[mode_a], b.shape[mode_b]
        )));
    }
    let am = mode_unfold(a, mode_a)?;
    let bm = mode_unfold(b, mode_b)?;
    let prod = am.transpose() * bm;
    let mut shape: Vec<usize> = a
        .shape
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != mode_a)
        .map(|(_, &d)| d)
        .chain(
            b.shape
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != mode_b)
                .map(|(_, &d)| d),
        )
        .collect();
    if shape.is_empty() {
        shape.push(1);
    }
    // nalgebra storage is column-major, matching the tensor layout.
    DenseTensor::new(shape, prod.as_slice().to_vec())
}
