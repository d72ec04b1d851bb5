//! Count Sketch (CS), Tensor Sketch (TS), Higher-order Count Sketch (HCS)
//! and Fast Count Sketch (FCS).
//!
//! Each tensor sketch has a direct scatter path over the dense entries and,
//! for CP-form inputs, a path built from count sketches of the factor
//! columns. The scatter paths skip zero entries, so their cost is
//! `O(nnz(T))`.
//!
//! Bucket rules for a multi-index `(i_1, .., i_N)` with per-mode pairs
//! `(h_n, s_n)`, all 0-based:
//! * TS:  `(h_1(i_1) + .. + h_N(i_N)) mod J`
//! * HCS: `(h_1(i_1), .., h_N(i_N))` in a `J_1 x .. x J_N` tensor
//! * FCS: `h_1(i_1) + .. + h_N(i_N)` in `[0, J~)`, `J~ = sum J_n - N + 1`
//!
//! and the sign is always `s_1(i_1) .. s_N(i_N)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SketchError};
use crate::fft;
use crate::hashing::{HashFamily, HashPair};
use crate::tensor::{advance, CpTensor, DenseTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SketchKind {
    Cs,
    Ts,
    Hcs,
    Fcs,
}

impl SketchKind {
    pub fn tag(self) -> u8 {
        match self {
            SketchKind::Cs => 0,
            SketchKind::Ts => 1,
            SketchKind::Hcs => 2,
            SketchKind::Fcs => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(SketchKind::Cs),
            1 => Some(SketchKind::Ts),
            2 => Some(SketchKind::Hcs),
            3 => Some(SketchKind::Fcs),
            _ => None,
        }
    }
}

impl fmt::Display for SketchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SketchKind::Cs => "cs",
            SketchKind::Ts => "ts",
            SketchKind::Hcs => "hcs",
            SketchKind::Fcs => "fcs",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for SketchKind {
    type Err = SketchError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cs" => Ok(SketchKind::Cs),
            "ts" => Ok(SketchKind::Ts),
            "hcs" => Ok(SketchKind::Hcs),
            "fcs" => Ok(SketchKind::Fcs),
            other => Err(SketchError::invalid(format!(
                "unknown sketch kind `{other}`"
            ))),
        }
    }
}

/// A vector-valued sketch (CS, TS or FCS) and the family that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchVec {
    values: Vec<f64>,
    family: Arc<HashFamily>,
    kind: SketchKind,
}

impl SketchVec {
    pub fn new(values: Vec<f64>, family: Arc<HashFamily>, kind: SketchKind) -> Result<Self> {
        let want = expected_len(&family, kind)?;
        if values.len() != want {
            return Err(SketchError::shape(format!(
                "{kind} sketch needs {want} values, got {}",
                values.len()
            )));
        }
        Ok(SketchVec {
            values,
            family,
            kind,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn family(&self) -> &Arc<HashFamily> {
        &self.family
    }

    pub fn kind(&self) -> SketchKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Inner product of two sketches built with the same family and kind.
    pub fn dot(&self, other: &SketchVec) -> Result<f64> {
        if self.kind != other.kind || self.values.len() != other.values.len() {
            return Err(SketchError::shape("sketches of different kind or length"));
        }
        Ok(crate::tensor::dot(&self.values, &other.values))
    }
}

fn expected_len(family: &HashFamily, kind: SketchKind) -> Result<usize> {
    match kind {
        SketchKind::Cs => {
            if family.order() != 1 {
                return Err(SketchError::invalid(
                    "count sketch family must have one pair",
                ));
            }
            Ok(family.pair(0).hash_len())
        }
        SketchKind::Ts => family
            .common_hash_len()
            .ok_or_else(|| SketchError::invalid("tensor sketch needs equal hash lengths")),
        SketchKind::Fcs => Ok(family.composed_len()),
        SketchKind::Hcs => Err(SketchError::invalid("HCS produces a SketchTensor")),
    }
}

/// An HCS: a `J_1 x .. x J_N` tensor plus its family.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchTensor {
    values: DenseTensor,
    family: Arc<HashFamily>,
}

impl SketchTensor {
    pub fn new(values: DenseTensor, family: Arc<HashFamily>) -> Result<Self> {
        if values.shape() != family.hash_lens().as_slice() {
            return Err(SketchError::shape(format!(
                "HCS values of shape {:?} for hash lengths {:?}",
                values.shape(),
                family.hash_lens()
            )));
        }
        Ok(SketchTensor { values, family })
    }

    pub fn values(&self) -> &DenseTensor {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut DenseTensor {
        &mut self.values
    }

    pub fn family(&self) -> &Arc<HashFamily> {
        &self.family
    }
}

fn check_shape(shape: &[usize], family: &HashFamily) -> Result<()> {
    if shape != family.input_dims().as_slice() {
        return Err(SketchError::shape(format!(
            "tensor shape {shape:?} vs family input dims {:?}",
            family.input_dims()
        )));
    }
    Ok(())
}

/// Raw count sketch of `x` into a fresh length-`J` buffer.
pub fn count_sketch(x: &[f64], pair: &HashPair) -> Result<Vec<f64>> {
    if x.len() != pair.input_dim() {
        return Err(SketchError::shape(format!(
            "vector of length {} for a hash pair over {}",
            x.len(),
            pair.input_dim()
        )));
    }
    let mut out = vec![0.0; pair.hash_len()];
    count_sketch_into(x.iter().copied(), pair, &mut out);
    Ok(out)
}

#[inline]
pub(crate) fn count_sketch_into(x: impl Iterator<Item = f64>, pair: &HashPair, out: &mut [f64]) {
    for (i, v) in x.enumerate() {
        if v != 0.0 {
            out[pair.bucket(i)] += pair.sign(i) * v;
        }
    }
}

/// Count sketch of every column of `m` (`I x R` -> `J x R`).
pub fn count_sketch_columns(m: &DMatrix<f64>, pair: &HashPair) -> Result<DMatrix<f64>> {
    if m.nrows() != pair.input_dim() {
        return Err(SketchError::shape(format!(
            "matrix with {} rows for a hash pair over {}",
            m.nrows(),
            pair.input_dim()
        )));
    }
    let mut out = DMatrix::zeros(pair.hash_len(), m.ncols());
    for (col, mut dst) in m.column_iter().zip(out.column_iter_mut()) {
        count_sketch_into(col.iter().copied(), pair, dst.as_mut_slice());
    }
    Ok(out)
}

/// `CS(x; h, s)_j = sum_{h(i) = j} s(i) x(i)`.
pub fn cs_vector(x: &[f64], pair: &HashPair) -> Result<SketchVec> {
    let values = count_sketch(x, pair)?;
    let family = Arc::new(HashFamily::from_pairs(vec![pair.clone()])?);
    SketchVec::new(values, family, SketchKind::Cs)
}

/// Visits every mode-0 fiber of `shape`, passing the fiber's start offset and
/// the multi-index of the remaining modes (mode-0 entry fixed at 0).
fn for_each_fiber(shape: &[usize], mut f: impl FnMut(usize, &[usize])) {
    let fiber_len = shape[0];
    let fibers: usize = shape[1..].iter().product();
    let mut idx = vec![0usize; shape.len()];
    for k in 0..fibers {
        f(k * fiber_len, &idx);
        if shape.len() > 1 {
            advance(&mut idx[1..], &shape[1..]);
        }
    }
}

/// Sum of buckets and product of signs over modes `1..N`.
#[inline]
fn outer_hash(family: &HashFamily, idx: &[usize]) -> (usize, f64) {
    let mut b = 0;
    let mut s = 1.0;
    for (n, p) in family.pairs().iter().enumerate().skip(1) {
        b += p.bucket(idx[n]);
        s *= p.sign(idx[n]);
    }
    (b, s)
}

/// Scatter with the summed bucket; `wrap = Some(J)` reduces it mod `J`.
fn scatter_summed(t: &DenseTensor, family: &HashFamily, out: &mut [f64], wrap: Option<usize>) {
    let data = t.data();
    let first = family.pair(0);
    let fiber_len = t.shape()[0];
    for_each_fiber(t.shape(), |start, idx| {
        let fiber = &data[start..start + fiber_len];
        if fiber.iter().all(|&v| v == 0.0) {
            return;
        }
        let (ob, os) = outer_hash(family, idx);
        for (i, &v) in fiber.iter().enumerate() {
            if v != 0.0 {
                let mut b = ob + first.bucket(i);
                if let Some(j) = wrap {
                    b %= j;
                }
                out[b] += os * first.sign(i) * v;
            }
        }
    });
}

/// TS by direct scatter with the modular bucket rule.
pub fn ts_dense(t: &DenseTensor, family: &Arc<HashFamily>) -> Result<SketchVec> {
    check_shape(t.shape(), family)?;
    let j = family
        .common_hash_len()
        .ok_or_else(|| SketchError::invalid("tensor sketch needs equal hash lengths"))?;
    let mut out = vec![0.0; j];
    scatter_summed(t, family, &mut out, Some(j));
    SketchVec::new(out, family.clone(), SketchKind::Ts)
}

fn check_cp(cp: &CpTensor, family: &HashFamily) -> Result<()> {
    check_shape(&cp.shape(), family)
}

/// Accumulates `sum_r λ_r prod_n F(CS_n(U^(n))[:, r])` on a grid of `size`.
fn cp_spectrum(cp: &CpTensor, family: &HashFamily, size: usize) -> Result<Vec<Complex64>> {
    let sketched = cp
        .factors()
        .iter()
        .zip(family.pairs())
        .map(|(f, p)| count_sketch_columns(f, p))
        .collect::<Result<Vec<_>>>()?;
    let mut acc = vec![Complex64::new(0.0, 0.0); size];
    for (r, &lambda) in cp.weights().iter().enumerate() {
        if lambda == 0.0 {
            continue;
        }
        let mut prod = fft::forward(sketched[0].column(r).as_slice(), size);
        for s in &sketched[1..] {
            for (a, b) in prod
                .iter_mut()
                .zip(fft::forward(s.column(r).as_slice(), size))
            {
                *a *= b;
            }
        }
        for (a, p) in acc.iter_mut().zip(prod) {
            *a += p * lambda;
        }
    }
    Ok(acc)
}

/// TS of a CP tensor by length-`J` circular convolution of factor sketches.
pub fn ts_cp(cp: &CpTensor, family: &Arc<HashFamily>) -> Result<SketchVec> {
    check_cp(cp, family)?;
    let j = family
        .common_hash_len()
        .ok_or_else(|| SketchError::invalid("tensor sketch needs equal hash lengths"))?;
    let spectrum = cp_spectrum(cp, family, j)?;
    let values = fft::inverse_real(spectrum, j)?;
    SketchVec::new(values, family.clone(), SketchKind::Ts)
}

/// HCS by per-mode bucket scatter.
pub fn hcs_dense(t: &DenseTensor, family: &Arc<HashFamily>) -> Result<SketchTensor> {
    check_shape(t.shape(), family)?;
    let lens = family.hash_lens();
    let mut out = DenseTensor::zeros(&lens)?;
    let strides: Vec<usize> = lens
        .iter()
        .scan(1usize, |acc, &j| {
            let s = *acc;
            *acc *= j;
            Some(s)
        })
        .collect();
    let data = t.data();
    let first = family.pair(0);
    let fiber_len = t.shape()[0];
    let sink = out.data_mut();
    for_each_fiber(t.shape(), |start, idx| {
        let fiber = &data[start..start + fiber_len];
        if fiber.iter().all(|&v| v == 0.0) {
            return;
        }
        let mut base = 0;
        let mut sign = 1.0;
        for (n, p) in family.pairs().iter().enumerate().skip(1) {
            base += p.bucket(idx[n]) * strides[n];
            sign *= p.sign(idx[n]);
        }
        for (i, &v) in fiber.iter().enumerate() {
            if v != 0.0 {
                sink[base + first.bucket(i)] += sign * first.sign(i) * v;
            }
        }
    });
    SketchTensor::new(out, family.clone())
}

/// HCS of a CP tensor: `sum_r λ_r CS_1(u_r^(1)) ∘ .. ∘ CS_N(u_r^(N))`,
/// materializing each outer product.
pub fn hcs_cp(cp: &CpTensor, family: &Arc<HashFamily>) -> Result<SketchTensor> {
    check_cp(cp, family)?;
    let sketched = cp
        .factors()
        .iter()
        .zip(family.pairs())
        .map(|(f, p)| count_sketch_columns(f, p))
        .collect::<Result<Vec<_>>>()?;
    let lens = family.hash_lens();
    let mut out = DenseTensor::zeros(&lens)?;
    let total = out.len();
    let mut term: Vec<f64> = Vec::with_capacity(total);
    for (r, &lambda) in cp.weights().iter().enumerate() {
        if lambda == 0.0 {
            continue;
        }
        term.clear();
        term.push(lambda);
        for s in &sketched {
            let prev = std::mem::take(&mut term);
            term.reserve(prev.len() * s.nrows());
            for &c in s.column(r).iter() {
                term.extend(prev.iter().map(|&p| p * c));
            }
        }
        for (o, t) in out.data_mut().iter_mut().zip(&term) {
            *o += t;
        }
    }
    SketchTensor::new(out, family.clone())
}

/// FCS by streaming scatter with the summed bucket; the length-`I~` hash
/// tables are never built.
pub fn fcs_dense(t: &DenseTensor, family: &Arc<HashFamily>) -> Result<SketchVec> {
    check_shape(t.shape(), family)?;
    let mut out = vec![0.0; family.composed_len()];
    scatter_summed(t, family, &mut out, None);
    SketchVec::new(out, family.clone(), SketchKind::Fcs)
}

/// FCS of a CP tensor by zero-padded (linear) FFT convolution of the factor
/// sketches, truncated to `J~`.
pub fn fcs_cp(cp: &CpTensor, family: &Arc<HashFamily>) -> Result<SketchVec> {
    check_cp(cp, family)?;
    let len = family.composed_len();
    let spectrum = cp_spectrum(cp, family, fft::linear_grid(len))?;
    let values = fft::inverse_real(spectrum, len)?;
    SketchVec::new(values, family.clone(), SketchKind::Fcs)
}

/// Count sketch of `vec(T)` under an explicit long pair (the plain CS
/// baseline; the pair has one entry per tensor element).
pub fn cs_tensor(t: &DenseTensor, long_pair: &HashPair) -> Result<SketchVec> {
    cs_vector(t.data(), long_pair)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::hashing::HashPair;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair(b: &[u32], s: &[i8], j: usize) -> HashPair {
        HashPair::from_maps(b.to_vec(), s.to_vec(), j).unwrap()
    }

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> DenseTensor {
        DenseTensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
    }

    fn random_cp(shape: &[usize], rank: usize, rng: &mut ChaCha8Rng) -> CpTensor {
        let factors = shape
            .iter()
            .map(|&d| DMatrix::from_fn(d, rank, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let weights = (0..rank).map(|_| rng.random_range(0.5..2.0)).collect();
        CpTensor::new(weights, factors).unwrap()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        let scale = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol * scale, "{x} vs {y}");
        }
    }

    #[test]
    fn cs_hand_example() {
        let p = pair(&[0, 1, 0], &[1, -1, 1], 2);
        let s = cs_vector(&[1.0, 2.0, 3.0], &p).unwrap();
        assert_eq!(s.values(), &[4.0, -2.0]);
        assert_eq!(s.kind(), SketchKind::Cs);
    }

    #[test]
    fn cs_identity_and_zero() {
        let p = pair(&[0, 1, 2, 3], &[1, 1, 1, 1], 4);
        let x = [0.5, -1.0, 2.0, 3.0];
        assert_eq!(cs_vector(&x, &p).unwrap().values(), &x);
        let q = HashPair::new(4, 3, 1).unwrap();
        assert!(cs_vector(&[0.0; 4], &q)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.0));
        assert!(cs_vector(&[1.0; 3], &q).is_err());
    }

    #[test]
    fn ts_order_one_is_cs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fam = Arc::new(HashFamily::uniform(&[9], 4, 3).unwrap());
        let x: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = DenseTensor::from_vector(&x).unwrap();
        let ts = ts_dense(&t, &fam).unwrap();
        let cs = cs_vector(&x, fam.pair(0)).unwrap();
        assert_eq!(ts.values(), cs.values());
        let fc = fcs_dense(&t, &fam).unwrap();
        assert_eq!(fc.values(), cs.values());
    }

    #[test]
    fn ts_two_by_two_hand_oracle() {
        // h1 = [0, 1], h2 = [1, 1], J = 2, s1 = [+, -], s2 = [+, +].
        // T = [[1, 2], [3, 4]] (row i, col j).
        // Buckets (h1 + h2) mod 2: (0,0)->1, (0,1)->1, (1,0)->0, (1,1)->0.
        // bucket 0: -3 - 4 = -7; bucket 1: 1 + 2 = 3.
        let fam = Arc::new(
            HashFamily::from_pairs(vec![pair(&[0, 1], &[1, -1], 2), pair(&[1, 1], &[1, 1], 2)])
                .unwrap(),
        );
        let t = DenseTensor::new(vec![2, 2], vec![1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!(ts_dense(&t, &fam).unwrap().values(), &[-7.0, 3.0]);
        let z = DenseTensor::zeros(&[2, 2]).unwrap();
        assert!(ts_dense(&z, &fam)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn ts_rejects_unequal_lengths() {
        let fam = Arc::new(HashFamily::new(&[3, 3], &[2, 3], 1).unwrap());
        let t = DenseTensor::zeros(&[3, 3]).unwrap();
        assert!(matches!(
            ts_dense(&t, &fam),
            Err(SketchError::InvalidArgument(_))
        ));
    }

    #[test]
    fn ts_cp_rank_one_length_one() {
        let fam = Arc::new(HashFamily::uniform(&[2, 3], 1, 5).unwrap());
        let u = [1.0, 2.0];
        let v = [3.0, -1.0, 0.5];
        let cp = CpTensor::rank_one(2.0, &[&u, &v]).unwrap();
        let su: f64 = u
            .iter()
            .enumerate()
            .map(|(i, x)| fam.pair(0).sign(i) * x)
            .sum();
        let sv: f64 = v
            .iter()
            .enumerate()
            .map(|(i, x)| fam.pair(1).sign(i) * x)
            .sum();
        let got = ts_cp(&cp, &fam).unwrap();
        assert!((got.values()[0] - 2.0 * su * sv).abs() < 1e-12);
    }

    #[test]
    fn ts_cp_matches_dense_and_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cp = random_cp(&[8, 8, 8], 3, &mut rng);
        let fam = Arc::new(HashFamily::uniform(&[8, 8, 8], 16, 7).unwrap());
        let fast = ts_cp(&cp, &fam).unwrap();
        let slow = ts_dense(&cp.densify(), &fam).unwrap();
        assert_close(fast.values(), slow.values(), 1e-9);
        let scaled = ts_cp(&cp.scaled(-2.5), &fam).unwrap();
        let want: Vec<f64> = fast.values().iter().map(|v| -2.5 * v).collect();
        assert_close(scaled.values(), &want, 1e-12);
    }

    #[test]
    fn hcs_identity_hashes() {
        let fam = Arc::new(
            HashFamily::from_pairs(vec![
                pair(&[0, 1, 2], &[1; 3], 3),
                pair(&[0, 1], &[1; 2], 2),
            ])
            .unwrap(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_tensor(&[3, 2], &mut rng);
        assert_eq!(hcs_dense(&t, &fam).unwrap().values(), &t);
    }

    #[test]
    fn hcs_three_by_three_hand_oracle() {
        // h1 = [0, 1, 1], s1 = [+, +, -]; h2 = [1, 0, 0], s2 = [-, +, +].
        let fam = Arc::new(
            HashFamily::from_pairs(vec![
                pair(&[0, 1, 1], &[1, 1, -1], 2),
                pair(&[1, 0, 0], &[-1, 1, 1], 2),
            ])
            .unwrap(),
        );
        let t = DenseTensor::from_fn(&[3, 3], |i| (1 + i[0] + 3 * i[1]) as f64).unwrap();
        // Direct evaluation of the definition.
        let mut want = [[0.0; 2]; 2];
        let (h1, s1) = ([0, 1, 1], [1.0, 1.0, -1.0]);
        let (h2, s2) = ([1, 0, 0], [-1.0, 1.0, 1.0]);
        for i in 0..3 {
            for j in 0..3 {
                want[h1[i]][h2[j]] += s1[i] * s2[j] * t.get(&[i, j]);
            }
        }
        let got = hcs_dense(&t, &fam).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                assert_eq!(got.values().get(&[a, b]), want[a][b]);
            }
        }
        let z = DenseTensor::zeros(&[3, 3]).unwrap();
        assert!(hcs_dense(&z, &fam)
            .unwrap()
            .values()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        assert!(hcs_dense(&DenseTensor::zeros(&[3, 2]).unwrap(), &fam).is_err());
    }

    #[test]
    fn hcs_cp_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cp = random_cp(&[5, 6, 4], 2, &mut rng);
        let fam = Arc::new(HashFamily::new(&[5, 6, 4], &[3, 4, 2], 9).unwrap());
        let fast = hcs_cp(&cp, &fam).unwrap();
        let slow = hcs_dense(&cp.densify(), &fam).unwrap();
        assert_close(fast.values().data(), slow.values().data(), 1e-12);

        let one = Arc::new(HashFamily::uniform(&[5, 6, 4], 1, 2).unwrap());
        let r1 = CpTensor::new(
            vec![1.5],
            cp.factors()
                .iter()
                .map(|f| f.columns(0, 1).into_owned())
                .collect(),
        )
        .unwrap();
        let mut want = 1.5;
        for (f, p) in r1.factors().iter().zip(one.pairs()) {
            want *= f
                .column(0)
                .iter()
                .enumerate()
                .map(|(i, x)| p.sign(i) * x)
                .sum::<f64>();
        }
        assert!((hcs_cp(&r1, &one).unwrap().values().data()[0] - want).abs() < 1e-12);
        assert!(hcs_cp(&cp.scaled(0.0), &fam)
            .unwrap()
            .values()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn fcs_two_by_two_hand_example() {
        let fam = Arc::new(
            HashFamily::from_pairs(vec![pair(&[0, 1], &[1, 1], 2), pair(&[0, 0], &[1, 1], 2)])
                .unwrap(),
        );
        let cp = CpTensor::rank_one(1.0, &[&[1.0, 2.0], &[1.0, 1.0]]).unwrap();
        let dense = fcs_dense(&cp.densify(), &fam).unwrap();
        assert_eq!(dense.values(), &[2.0, 4.0, 0.0]);
        let fast = fcs_cp(&cp, &fam).unwrap();
        assert_close(fast.values(), &[2.0, 4.0, 0.0], 1e-14);
    }

    #[test]
    fn fcs_dense_is_cs_of_vectorization() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = random_tensor(&[3, 4, 5], &mut rng);
        let fam = Arc::new(HashFamily::new(&[3, 4, 5], &[4, 3, 5], 12).unwrap());
        let long = fam.materialize_composed();
        let want = cs_tensor(&t, &long).unwrap();
        let got = fcs_dense(&t, &fam).unwrap();
        assert_close(got.values(), want.values(), 1e-12);
    }

    #[test]
    fn fcs_cp_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cp = random_cp(&[10, 12, 14], 5, &mut rng);
        let fam = Arc::new(HashFamily::new(&[10, 12, 14], &[7, 9, 5], 13).unwrap());
        let fast = fcs_cp(&cp, &fam).unwrap();
        let slow = fcs_dense(&cp.densify(), &fam).unwrap();
        assert_eq!(fast.len(), 7 + 9 + 5 - 2);
        assert_close(fast.values(), slow.values(), 1e-9);
    }

    #[test]
    fn fcs_cp_single_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cp = random_cp(&[6], 3, &mut rng);
        let fam = Arc::new(HashFamily::uniform(&[6], 4, 1).unwrap());
        let mut combined = vec![0.0; 6];
        for (r, &w) in cp.weights().iter().enumerate() {
            for (i, c) in combined.iter_mut().enumerate() {
                *c += w * cp.factor(0)[(i, r)];
            }
        }
        let want = cs_vector(&combined, fam.pair(0)).unwrap();
        assert_close(fcs_cp(&cp, &fam).unwrap().values(), want.values(), 1e-12);
    }

    #[test]
    fn sketch_vec_length_contract() {
        let fam = Arc::new(HashFamily::new(&[3, 3], &[2, 4], 1).unwrap());
        assert!(SketchVec::new(vec![0.0; 5], fam.clone(), SketchKind::Fcs).is_ok());
        assert!(SketchVec::new(vec![0.0; 4], fam.clone(), SketchKind::Fcs).is_err());
        assert!(SketchVec::new(vec![0.0; 4], fam, SketchKind::Ts).is_err());
    }
}
