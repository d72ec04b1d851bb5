//! Sketch-domain compression of Kronecker products and 3-1 mode tensor
//! contractions, plus the sketched regression forward map.
//!
//! Operands index a 4th-order result `C[i1, i2, i3, i4]`:
//! * Kronecker: `C[i1, i2, i3, i4] = A[i1, i2] B[i3, i4]`, which is the
//!   matrix entry `(A ⊗ B)[I3 i1 + i3, I4 i2 + i4]`.
//! * Contraction: `C[i1, i2, i3, i4] = sum_l A[i1, i2, l] B[l, i3, i4]`.
//!
//! Hash pair `n` of a copy's family hashes `i_n`. The FCS codec never
//! materializes `C`: it convolves the 2-mode sketches of the operand slices.
//! HCS and CS codecs are baselines; the CS codec builds `C` explicitly.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SketchError};
use crate::estimators::{median, median_vectors, HashLens};
use crate::fft;
use crate::hashing::{derive_seed, HashFamily, HashPair};
use crate::sketch;
use crate::tensor::{CpTensor, DenseTensor};

const CS_SALT: u64 = 0xC0DE_C5C5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Codec {
    Fcs,
    Hcs,
    Cs,
}

impl Codec {
    pub fn name(self) -> &'static str {
        match self {
            Codec::Fcs => "fcs",
            Codec::Hcs => "hcs",
            Codec::Cs => "cs",
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Codec::Fcs => 0,
            Codec::Hcs => 1,
            Codec::Cs => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Codec::Fcs),
            1 => Some(Codec::Hcs),
            2 => Some(Codec::Cs),
            _ => None,
        }
    }
}

impl std::fmt::Display for Codec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Codec {
    type Err = SketchError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fcs" => Ok(Codec::Fcs),
            "hcs" => Ok(Codec::Hcs),
            "cs" => Ok(Codec::Cs),
            other => Err(SketchError::invalid(format!("unknown codec `{other}`"))),
        }
    }
}

/// Which product a sketch compresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Product {
    Kron,
    Contraction { contracted: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub codec: Codec,
    /// Per-mode hash lengths over `(i1, i2, i3, i4)`. The CS codec uses a
    /// single long pair of the matching FCS length `sum J_n - 3`.
    pub hash_lens: HashLens,
    pub sketch_count: usize,
    pub seed: u64,
}

impl CodecConfig {
    pub fn new(codec: Codec, hash_len: usize, sketch_count: usize, seed: u64) -> Self {
        CodecConfig {
            codec,
            hash_lens: HashLens::Uniform(hash_len),
            sketch_count,
            seed,
        }
    }

    /// Families for each of the `D` copies over a result of shape `dims`.
    pub fn families(&self, dims: [usize; 4]) -> Result<Vec<Arc<HashFamily>>> {
        if self.sketch_count == 0 {
            return Err(SketchError::invalid("sketch count D must be at least 1"));
        }
        let lens = self.hash_lens.resolve(4)?;
        if lens.contains(&0) {
            return Err(SketchError::invalid("hash lengths must be at least 1"));
        }
        (0..self.sketch_count as u64)
            .map(|d| {
                let family = match self.codec {
                    Codec::Fcs | Codec::Hcs => {
                        HashFamily::new(&dims, &lens, derive_seed(self.seed, d))?
                    }
                    Codec::Cs => {
                        let long = lens.iter().sum::<usize>() - 3;
                        let total = dims.iter().product::<usize>();
                        HashFamily::new(&[total], &[long], derive_seed(self.seed ^ CS_SALT, d))?
                    }
                };
                Ok(Arc::new(family))
            })
            .collect()
    }
}

/// One sketch copy: its family and flat values (HCS values are the
/// column-major `J1 x J2 x J3 x J4` tensor).
#[derive(Debug, Clone, PartialEq)]
pub struct CodecCopy {
    pub family: Arc<HashFamily>,
    pub values: Vec<f64>,
}

/// `D` independent sketches of a Kronecker product or contraction.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedProduct {
    codec: Codec,
    product: Product,
    dims: [usize; 4],
    copies: Vec<CodecCopy>,
}

pub type KronSketch = CompressedProduct;
pub type ContractionSketch = CompressedProduct;

fn expected_len(codec: Codec, family: &HashFamily) -> usize {
    match codec {
        Codec::Fcs | Codec::Cs => family.composed_len(),
        Codec::Hcs => family.hash_lens().iter().product(),
    }
}

impl CompressedProduct {
    /// Reassembles a sketch, e.g. after reading it from disk.
    pub fn from_parts(
        codec: Codec,
        product: Product,
        dims: [usize; 4],
        copies: Vec<CodecCopy>,
    ) -> Result<Self> {
        if copies.is_empty() {
            return Err(SketchError::invalid(
                "compressed product needs at least one copy",
            ));
        }
        for c in &copies {
            let fam_dims = c.family.input_dims();
            let ok = match codec {
                Codec::Cs => fam_dims == [dims.iter().product::<usize>()],
                _ => fam_dims == dims,
            };
            if !ok {
                return Err(SketchError::shape(format!(
                    "family over {fam_dims:?} for a product of shape {dims:?}"
                )));
            }
            if c.values.len() != expected_len(codec, &c.family) {
                return Err(SketchError::shape(format!(
                    "{} values for a {codec} sketch of length {}",
                    c.values.len(),
                    expected_len(codec, &c.family)
                )));
            }
        }
        Ok(CompressedProduct {
            codec,
            product,
            dims,
            copies,
        })
    }

    pub fn codec(&self) -> Codec {
        self.codec
    }

    pub fn product(&self) -> Product {
        self.product
    }

    /// `(I1, I2, I3, I4)`.
    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn copies(&self) -> &[CodecCopy] {
        &self.copies
    }

    /// Stored values per copy.
    pub fn sketch_len(&self) -> usize {
        self.copies[0].values.len()
    }

    /// `I~ / (values per copy)`.
    pub fn compression_ratio(&self) -> f64 {
        self.dims.iter().product::<usize>() as f64 / self.sketch_len() as f64
    }

    /// Hash table bytes over all copies.
    pub fn hash_memory(&self) -> usize {
        self.copies.iter().map(|c| c.family.memory_bytes()).sum()
    }

    fn check_index(&self, idx: [usize; 4]) -> Result<()> {
        if idx.iter().zip(&self.dims).any(|(i, d)| i >= d) {
            return Err(SketchError::invalid(format!(
                "index {idx:?} out of range for {:?}",
                self.dims
            )));
        }
        Ok(())
    }

    fn read(&self, copy: &CodecCopy, idx: [usize; 4]) -> f64 {
        let f = &copy.family;
        match self.codec {
            Codec::Fcs => {
                let (b, s) = f.compose_unchecked(&idx);
                // Composed buckets never reach the length; the modulo mirrors
                // the stated decompression rule.
                s * copy.values[b % copy.values.len()]
            }
            Codec::Hcs => {
                let mut lin = 0;
                let mut stride = 1;
                let mut s = 1.0;
                for (p, &i) in f.pairs().iter().zip(&idx) {
                    lin += p.bucket(i) * stride;
                    stride *= p.hash_len();
                    s *= p.sign(i);
                }
                s * copy.values[lin]
            }
            Codec::Cs => {
                let [i1, i2, i3, i4] = idx;
                let [d1, d2, d3, _] = self.dims;
                let lin = i1 + d1 * (i2 + d2 * (i3 + d3 * i4));
                let p = f.pair(0);
                p.sign(lin) * copy.values[p.bucket(lin)]
            }
        }
    }

    /// Median over copies of the signed single-bucket read of `C[i1..i4]`.
    pub fn entry(&self, idx: [usize; 4]) -> Result<f64> {
        self.check_index(idx)?;
        let reads: Vec<f64> = self.copies.iter().map(|c| self.read(c, idx)).collect();
        median(&reads)
    }

    /// Every entry of `C` as a column-major `(I1, I2, I3, I4)` tensor;
    /// `O(D I~)` work.
    pub fn reconstruct(&self) -> Result<DenseTensor> {
        let per_copy: Vec<Vec<f64>> = self
            .copies
            .par_iter()
            .map(|c| {
                let mut out = Vec::with_capacity(self.dims.iter().product());
                for i4 in 0..self.dims[3] {
                    for i3 in 0..self.dims[2] {
                        for i2 in 0..self.dims[1] {
                            for i1 in 0..self.dims[0] {
                                out.push(self.read(c, [i1, i2, i3, i4]));
                            }
                        }
                    }
                }
                out
            })
            .collect();
        DenseTensor::new(self.dims.to_vec(), median_vectors(&per_copy)?)
    }
}

fn check_kron(sk: &CompressedProduct) -> Result<()> {
    match sk.product {
        Product::Kron => Ok(()),
        _ => Err(SketchError::invalid(
            "sketch does not hold a Kronecker product",
        )),
    }
}

/// 2-mode FCS of `get(i, j)` over `rows x cols` under `(p, q)`.
fn fcs_pairwise(
    rows: usize,
    cols: usize,
    p: &HashPair,
    q: &HashPair,
    get: impl Fn(usize, usize) -> f64,
) -> Vec<f64> {
    let mut out = vec![0.0; p.hash_len() + q.hash_len() - 1];
    for j in 0..cols {
        let (bq, sq) = (q.bucket(j), q.sign(j));
        for i in 0..rows {
            let v = get(i, j);
            if v != 0.0 {
                out[p.bucket(i) + bq] += p.sign(i) * sq * v;
            }
        }
    }
    out
}

/// 2-mode HCS of `get(i, j)` as a column-major `J_p x J_q` matrix.
fn hcs_pairwise(
    rows: usize,
    cols: usize,
    p: &HashPair,
    q: &HashPair,
    get: impl Fn(usize, usize) -> f64,
) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(p.hash_len(), q.hash_len());
    for j in 0..cols {
        for i in 0..rows {
            let v = get(i, j);
            if v != 0.0 {
                out[(p.bucket(i), q.bucket(j))] += p.sign(i) * q.sign(j) * v;
            }
        }
    }
    out
}

/// Operands in contraction form: `a` is `(I1, I2, L)`, `b` is `(L, I3, I4)`.
struct Operands<'a> {
    a: &'a DenseTensor,
    b: &'a DenseTensor,
    dims: [usize; 4],
    contracted: usize,
}

impl Operands<'_> {
    fn a_at(&self, l: usize, i1: usize, i2: usize) -> f64 {
        let [d1, d2, _, _] = self.dims;
        self.a.data()[i1 + d1 * (i2 + d2 * l)]
    }

    fn b_at(&self, l: usize, i3: usize, i4: usize) -> f64 {
        let [_, _, d3, _] = self.dims;
        self.b.data()[l + self.contracted * (i3 + d3 * i4)]
    }

    fn materialize(&self) -> Vec<f64> {
        let [d1, d2, d3, d4] = self.dims;
        let mut out = vec![0.0; d1 * d2 * d3 * d4];
        let mut k = 0;
        for i4 in 0..d4 {
            for i3 in 0..d3 {
                for i2 in 0..d2 {
                    for i1 in 0..d1 {
                        out[k] = (0..self.contracted)
                            .map(|l| self.a_at(l, i1, i2) * self.b_at(l, i3, i4))
                            .sum();
                        k += 1;
                    }
                }
            }
        }
        out
    }

    fn sketch(&self, codec: Codec, family: &HashFamily) -> Result<Vec<f64>> {
        let [d1, d2, d3, d4] = self.dims;
        let p = family.pairs();
        match codec {
            Codec::Fcs => {
                let len = family.composed_len();
                let grid = fft::linear_grid(len);
                let mut acc = vec![Complex64::new(0.0, 0.0); grid];
                for l in 0..self.contracted {
                    let sa = fcs_pairwise(d1, d2, &p[0], &p[1], |i, j| self.a_at(l, i, j));
                    let sb = fcs_pairwise(d3, d4, &p[2], &p[3], |i, j| self.b_at(l, i, j));
                    let fb = fft::forward(&sb, grid);
                    for ((o, x), y) in acc.iter_mut().zip(fft::forward(&sa, grid)).zip(fb) {
                        *o += x * y;
                    }
                }
                fft::inverse_real(acc, len)
            }
            Codec::Hcs => {
                let (j12, j34) = (
                    p[0].hash_len() * p[1].hash_len(),
                    p[2].hash_len() * p[3].hash_len(),
                );
                let mut ha = DMatrix::zeros(j12, self.contracted);
                let mut hb = DMatrix::zeros(self.contracted, j34);
                for l in 0..self.contracted {
                    let sa = hcs_pairwise(d1, d2, &p[0], &p[1], |i, j| self.a_at(l, i, j));
                    let sb = hcs_pairwise(d3, d4, &p[2], &p[3], |i, j| self.b_at(l, i, j));
                    ha.column_mut(l).copy_from_slice(sa.as_slice());
                    for (k, v) in sb.iter().enumerate() {
                        hb[(l, k)] = *v;
                    }
                }
                Ok((ha * hb).as_slice().to_vec())
            }
            Codec::Cs => sketch::count_sketch(&self.materialize(), family.pair(0)),
        }
    }
}

fn compress(
    ops: &Operands,
    product: Product,
    codec: Codec,
    families: Vec<Arc<HashFamily>>,
) -> Result<CompressedProduct> {
    let copies = families
        .into_par_iter()
        .map(|family| {
            let values = ops.sketch(codec, &family)?;
            Ok(CodecCopy { family, values })
        })
        .collect::<Result<Vec<_>>>()?;
    CompressedProduct::from_parts(codec, product, ops.dims, copies)
}

fn as_slab(m: &DMatrix<f64>, trailing: bool) -> Result<DenseTensor> {
    let shape = if trailing {
        vec![m.nrows(), m.ncols(), 1]
    } else {
        vec![1, m.nrows(), m.ncols()]
    };
    DenseTensor::new(shape, m.as_slice().to_vec())
}

/// Sketches `A ⊗ B` under explicit per-copy families.
pub fn compress_kron_with(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    codec: Codec,
    families: Vec<Arc<HashFamily>>,
) -> Result<KronSketch> {
    let (ta, tb) = (as_slab(a, true)?, as_slab(b, false)?);
    let ops = Operands {
        a: &ta,
        b: &tb,
        dims: [a.nrows(), a.ncols(), b.nrows(), b.ncols()],
        contracted: 1,
    };
    compress(&ops, Product::Kron, codec, families)
}

/// Sketches `A ⊗ B` with `D` families drawn from `cfg`.
pub fn compress_kron(a: &DMatrix<f64>, b: &DMatrix<f64>, cfg: &CodecConfig) -> Result<KronSketch> {
    let families = cfg.families([a.nrows(), a.ncols(), b.nrows(), b.ncols()])?;
    compress_kron_with(a, b, cfg.codec, families)
}

fn contraction_dims(a: &DenseTensor, b: &DenseTensor) -> Result<([usize; 4], usize)> {
    match (a.shape(), b.shape()) {
        (&[i1, i2, l], &[l2, i3, i4]) if l == l2 => Ok(([i1, i2, i3, i4], l)),
        (sa, sb) => Err(SketchError::shape(format!(
            "contraction needs (I1, I2, L) and (L, I3, I4), got {sa:?} and {sb:?}"
        ))),
    }
}

/// Sketches the contraction of mode 3 of `a` with mode 1 of `b` under
/// explicit per-copy families.
pub fn compress_contraction_with(
    a: &DenseTensor,
    b: &DenseTensor,
    codec: Codec,
    families: Vec<Arc<HashFamily>>,
) -> Result<ContractionSketch> {
    let (dims, contracted) = contraction_dims(a, b)?;
    let ops = Operands {
        a,
        b,
        dims,
        contracted,
    };
    compress(&ops, Product::Contraction { contracted }, codec, families)
}

pub fn compress_contraction(
    a: &DenseTensor,
    b: &DenseTensor,
    cfg: &CodecConfig,
) -> Result<ContractionSketch> {
    let (dims, _) = contraction_dims(a, b)?;
    compress_contraction_with(a, b, cfg.codec, cfg.families(dims)?)
}

/// Estimate of `(A ⊗ B)[row, col]`.
pub fn decompress_kron(sk: &KronSketch, row: usize, col: usize) -> Result<f64> {
    check_kron(sk)?;
    let [d1, d2, d3, d4] = sk.dims;
    if row >= d1 * d3 || col >= d2 * d4 {
        return Err(SketchError::invalid(format!(
            "({row}, {col}) out of range for a {}x{} product",
            d1 * d3,
            d2 * d4
        )));
    }
    sk.entry([row / d3, col / d4, row % d3, col % d4])
}

/// Estimate of every entry of `A ⊗ B` as an `I1 I3 x I2 I4` matrix.
pub fn reconstruct_kron(sk: &KronSketch) -> Result<DMatrix<f64>> {
    check_kron(sk)?;
    let [d1, d2, d3, d4] = sk.dims;
    let t = sk.reconstruct()?;
    Ok(DMatrix::from_fn(d1 * d3, d2 * d4, |r, c| {
        t.get(&[r / d3, c / d4, r % d3, c % d4])
    }))
}

/// Estimate of `sum_l A[i1, i2, l] B[l, i3, i4]`.
pub fn decompress_contraction(
    sk: &ContractionSketch,
    i1: usize,
    i2: usize,
    i3: usize,
    i4: usize,
) -> Result<f64> {
    if !matches!(sk.product, Product::Contraction { .. }) {
        return Err(SketchError::invalid("sketch does not hold a contraction"));
    }
    sk.entry([i1, i2, i3, i4])
}

/// `I~ / J~` of an FCS family.
pub fn compression_ratio(family: &HashFamily) -> f64 {
    family.total_input() as f64 / family.composed_len() as f64
}

/// Bytes of hash tables held by a family; for the CS baseline pass its
/// one-pair family over `I~` entries.
pub fn hash_memory(family: &HashFamily) -> usize {
    family.memory_bytes()
}

/// Per-mode FCS hash lengths for a target ratio: `J~ = ceil(I~ / cr)`,
/// split as evenly as possible with earlier modes taking the remainder.
pub fn fcs_lens_for_ratio(dims: &[usize], cr: f64) -> Result<Vec<usize>> {
    if dims.is_empty() || dims.contains(&0) || !(cr.is_finite() && cr > 0.0) {
        return Err(SketchError::invalid(
            "need positive dims and a positive finite ratio",
        ));
    }
    let n = dims.len();
    let total: usize = dims.iter().product();
    let target = (total as f64 / cr).ceil().max(1.0) as usize;
    let sum = target + n - 1;
    Ok((0..n).map(|k| sum / n + usize::from(k < sum % n)).collect())
}

/// Uniform HCS hash length whose `J^N` is closest to `I~ / cr`.
pub fn hcs_len_for_ratio(dims: &[usize], cr: f64) -> Result<usize> {
    if dims.is_empty() || dims.contains(&0) || !(cr.is_finite() && cr > 0.0) {
        return Err(SketchError::invalid(
            "need positive dims and a positive finite ratio",
        ));
    }
    let total: usize = dims.iter().product();
    let j = (total as f64 / cr).powf(1.0 / dims.len() as f64).round();
    Ok((j as usize).max(1))
}

/// Layer weights for [`sketched_regression_forward`].
#[derive(Debug, Clone)]
pub enum RegressionWeights {
    /// `C x I~`, row `c` is `vec` of the `c`-th weight tensor.
    Dense(DMatrix<f64>),
    /// One CP-form weight tensor per output.
    Cp(Vec<CpTensor>),
}

/// `Y ~= FCS(X) FCS(W)^T + b` where each row of `x` (length `I~`) and each
/// weight tensor is sketched to length `J~`; median over `D` families.
pub fn sketched_regression_forward(
    x: &DMatrix<f64>,
    w: &RegressionWeights,
    bias: &[f64],
    dims: &[usize],
    families: &[Arc<HashFamily>],
) -> Result<DMatrix<f64>> {
    let total: usize = dims.iter().product();
    let outputs = match w {
        RegressionWeights::Dense(m) => {
            if m.ncols() != total {
                return Err(SketchError::shape(format!(
                    "weights have {} columns, expected {total}",
                    m.ncols()
                )));
            }
            m.nrows()
        }
        RegressionWeights::Cp(v) => v.len(),
    };
    if x.ncols() != total || bias.len() != outputs {
        return Err(SketchError::shape(format!(
            "inputs {}x{}, {} outputs, bias of length {}",
            x.nrows(),
            x.ncols(),
            outputs,
            bias.len()
        )));
    }
    if families.is_empty() {
        return Err(SketchError::invalid("need at least one family"));
    }
    let sketch_rows = |m: &DMatrix<f64>, family: &Arc<HashFamily>| -> Result<DMatrix<f64>> {
        let rows = (0..m.nrows())
            .map(|r| {
                let t = DenseTensor::new(dims.to_vec(), m.row(r).iter().copied().collect())?;
                Ok(sketch::fcs_dense(&t, family)?.into_values())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_fn(
            m.nrows(),
            family.composed_len(),
            |r, j| rows[r][j],
        ))
    };
    let per_copy = families
        .par_iter()
        .map(|family| {
            let sx = sketch_rows(x, family)?;
            let sw = match w {
                RegressionWeights::Dense(m) => sketch_rows(m, family)?,
                RegressionWeights::Cp(cps) => {
                    let rows = cps
                        .iter()
                        .map(|cp| Ok(sketch::fcs_cp(cp, family)?.into_values()))
                        .collect::<Result<Vec<_>>>()?;
                    DMatrix::from_fn(outputs, family.composed_len(), |r, j| rows[r][j])
                }
            };
            Ok((sx * sw.transpose()).as_slice().to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut y = DMatrix::from_vec(x.nrows(), outputs, median_vectors(&per_copy)?);
    for (mut col, &b) in y.column_iter_mut().zip(bias) {
        col.add_scalar_mut(b);
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{contract_pair, kron};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-5.0..5.0))
    }

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> DenseTensor {
        DenseTensor::from_fn(shape, |_| rng.random_range(0.0..10.0)).unwrap()
    }

    /// Family whose composed FCS bucket is the column-major linear index.
    fn injective(dims: [usize; 4]) -> Arc<HashFamily> {
        let mut stride = 1;
        let pairs = dims
            .iter()
            .map(|&d| {
                let buckets = (0..d).map(|i| (i * stride) as u32).collect();
                let len = (d - 1) * stride + 1;
                stride *= d;
                HashPair::from_maps(buckets, vec![1; d], len).unwrap()
            })
            .collect();
        Arc::new(HashFamily::from_pairs(pairs).unwrap())
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den.max(f64::MIN_POSITIVE)).sqrt()
    }

    #[test]
    fn scalar_kron() {
        let a = DMatrix::from_element(1, 1, 2.0);
        let b = DMatrix::from_element(1, 1, 3.0);
        let sk = compress_kron(&a, &b, &CodecConfig::new(Codec::Fcs, 1, 1, 4)).unwrap();
        assert_eq!(sk.sketch_len(), 1);
        let expected = 6.0 * sk.copies()[0].family.compose(&[0, 0, 0, 0]).unwrap().1;
        assert!((sk.copies()[0].values[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn kron_matches_materialized_fcs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..5 {
            let a = random_matrix(3, 4, &mut rng);
            let b = random_matrix(4, 5, &mut rng);
            let sk = compress_kron(&a, &b, &CodecConfig::new(Codec::Fcs, 7, 2, seed)).unwrap();
            assert_eq!(sk.sketch_len(), 4 * 7 - 3);
            let k = kron(&a, &b);
            // The Kronecker matrix is the 4th-order tensor (i3, i1, i4, i2).
            let t = DenseTensor::new(vec![4, 3, 5, 4], k.as_slice().to_vec()).unwrap();
            for copy in sk.copies() {
                let p = copy.family.pairs();
                let reordered = Arc::new(
                    HashFamily::from_pairs(vec![
                        p[2].clone(),
                        p[0].clone(),
                        p[3].clone(),
                        p[1].clone(),
                    ])
                    .unwrap(),
                );
                let oracle = sketch::fcs_dense(&t, &reordered).unwrap();
                assert!(rel_err(&copy.values, oracle.values()) <= 1e-9);
            }
        }
    }

    #[test]
    fn contraction_matches_materialized_sketches() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_tensor(&[3, 4, 5], &mut rng);
        let b = random_tensor(&[5, 4, 3], &mut rng);
        let c = contract_pair(&a, &b, 2, 0).unwrap();
        for codec in [Codec::Fcs, Codec::Hcs, Codec::Cs] {
            let sk = compress_contraction(&a, &b, &CodecConfig::new(codec, 6, 3, 9)).unwrap();
            for copy in sk.copies() {
                let oracle = match codec {
                    Codec::Fcs => sketch::fcs_dense(&c, &copy.family).unwrap().into_values(),
                    Codec::Hcs => sketch::hcs_dense(&c, &copy.family)
                        .unwrap()
                        .values()
                        .data()
                        .to_vec(),
                    Codec::Cs => sketch::count_sketch(c.data(), copy.family.pair(0)).unwrap(),
                };
                assert!(rel_err(&copy.values, &oracle) <= 1e-9, "{codec}");
            }
        }
    }

    #[test]
    fn single_slice_contraction_is_kron() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(3, 2, &mut rng);
        let b = random_matrix(2, 4, &mut rng);
        let cfg = CodecConfig::new(Codec::Fcs, 5, 2, 1);
        let k = compress_kron(&a, &b, &cfg).unwrap();
        let ta = DenseTensor::new(vec![3, 2, 1], a.as_slice().to_vec()).unwrap();
        let tb = DenseTensor::new(vec![1, 2, 4], b.as_slice().to_vec()).unwrap();
        let c = compress_contraction(&ta, &tb, &cfg).unwrap();
        for (x, y) in k.copies().iter().zip(c.copies()) {
            assert!(rel_err(&x.values, &y.values) <= 1e-12);
        }
    }

    #[test]
    fn injective_family_decompresses_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_matrix(3, 4, &mut rng);
        let b = random_matrix(4, 5, &mut rng);
        let sk = compress_kron_with(&a, &b, Codec::Fcs, vec![injective([3, 4, 4, 5])]).unwrap();
        let k = kron(&a, &b);
        let rec = reconstruct_kron(&sk).unwrap();
        assert!(rel_err(rec.as_slice(), k.as_slice()) < 1e-10);
        assert!((decompress_kron(&sk, 7, 13).unwrap() - k[(7, 13)]).abs() < 1e-9);

        let ta = random_tensor(&[2, 3, 4], &mut rng);
        let tb = random_tensor(&[4, 3, 2], &mut rng);
        let sk =
            compress_contraction_with(&ta, &tb, Codec::Fcs, vec![injective([2, 3, 3, 2])]).unwrap();
        let c = contract_pair(&ta, &tb, 2, 0).unwrap();
        assert!(
            (decompress_contraction(&sk, 1, 2, 0, 1).unwrap() - c.get(&[1, 2, 0, 1])).abs() < 1e-9
        );
    }

    #[test]
    fn zero_operands_and_errors() {
        let a = DMatrix::zeros(3, 4);
        let b = DMatrix::from_element(2, 2, 1.0);
        let sk = compress_kron(&a, &b, &CodecConfig::new(Codec::Fcs, 4, 3, 0)).unwrap();
        assert!(sk
            .copies()
            .iter()
            .all(|c| c.values.iter().all(|&v| v == 0.0)));
        assert_eq!(decompress_kron(&sk, 0, 0).unwrap(), 0.0);
        assert!(decompress_kron(&sk, 6, 0).is_err());
        assert!(decompress_contraction(&sk, 0, 0, 0, 0).is_err());

        let ta = DenseTensor::zeros(&[2, 2, 3]).unwrap();
        let tb = DenseTensor::zeros(&[4, 2, 2]).unwrap();
        let cfg = CodecConfig::new(Codec::Fcs, 4, 1, 0);
        assert!(compress_contraction(&ta, &tb, &cfg).is_err());
    }

    #[test]
    fn entry_reads_are_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_matrix(3, 4, &mut rng);
        let b = random_matrix(4, 5, &mut rng);
        let truth = kron(&a, &b)[(5, 9)];
        let trials = 4000;
        let reads: Vec<f64> = (0..trials)
            .map(|s| {
                let sk = compress_kron(&a, &b, &CodecConfig::new(Codec::Fcs, 8, 1, s)).unwrap();
                decompress_kron(&sk, 5, 9).unwrap()
            })
            .collect();
        let mean = reads.iter().sum::<f64>() / trials as f64;
        let var = reads.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        assert!((mean - truth).abs() <= 4.0 * (var / trials as f64).sqrt());
    }

    #[test]
    fn ratio_helpers() {
        let fam = HashFamily::new(&[5], &[5], 0).unwrap();
        assert_eq!(compression_ratio(&fam), 1.0);
        let lens = fcs_lens_for_ratio(&[7, 7, 32], 20.0).unwrap();
        assert_eq!(lens.iter().sum::<usize>() - 2, 79);
        assert!(lens.iter().max().unwrap() - lens.iter().min().unwrap() <= 1);
        let lens = fcs_lens_for_ratio(&[3, 4, 4, 5], 2.0).unwrap();
        assert_eq!(lens.iter().sum::<usize>() - 3, 120);
        assert_eq!(hcs_len_for_ratio(&[4, 4, 4, 4], 16.0).unwrap(), 2);
        assert!(fcs_lens_for_ratio(&[3], 0.0).is_err());

        let fcs = HashFamily::uniform(&[30, 40, 40, 50], 10, 0).unwrap();
        let cs = HashFamily::new(&[30 * 40 * 40 * 50], &[fcs.composed_len()], 0).unwrap();
        assert!(hash_memory(&fcs) < hash_memory(&cs));
        let ratio = hash_memory(&fcs) as f64 / hash_memory(&cs) as f64;
        assert!((ratio - 160.0 / 2_400_000.0).abs() < 1e-12);
    }

    #[test]
    fn regression_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dims = [2, 3, 2];
        let x = random_matrix(4, 12, &mut rng);
        let w = random_matrix(3, 12, &mut rng);
        let bias = [0.5, -1.0, 2.0];
        let fams: Vec<_> = (0..3)
            .map(|d| Arc::new(HashFamily::uniform(&dims, 4, d).unwrap()))
            .collect();

        let zero = RegressionWeights::Dense(DMatrix::zeros(3, 12));
        let y = sketched_regression_forward(&x, &zero, &bias, &dims, &fams).unwrap();
        assert!(y
            .row_iter()
            .all(|r| r.iter().zip(&bias).all(|(a, b)| a == b)));

        // Injective family: exact product.
        let inj = {
            let p = injective([2, 3, 2, 1]);
            Arc::new(HashFamily::from_pairs(p.pairs()[..3].to_vec()).unwrap())
        };
        let y = sketched_regression_forward(
            &x,
            &RegressionWeights::Dense(w.clone()),
            &bias,
            &dims,
            &[inj],
        )
        .unwrap();
        let mut exact = &x * w.transpose();
        for (mut c, &b) in exact.column_iter_mut().zip(&bias) {
            c.add_scalar_mut(b);
        }
        assert!(rel_err(y.as_slice(), exact.as_slice()) < 1e-10);

        // CP weights agree with their dense form.
        let cps: Vec<CpTensor> = (0..2)
            .map(|_| {
                let f = dims
                    .iter()
                    .map(|&d| random_matrix(d, 2, &mut rng))
                    .collect();
                CpTensor::new(vec![1.0, 0.5], f).unwrap()
            })
            .collect();
        let dense = DMatrix::from_fn(2, 12, |r, c| cps[r].densify().data()[c]);
        let a =
            sketched_regression_forward(&x, &RegressionWeights::Cp(cps), &[0.0, 0.0], &dims, &fams)
                .unwrap();
        let b = sketched_regression_forward(
            &x,
            &RegressionWeights::Dense(dense),
            &[0.0, 0.0],
            &dims,
            &fams,
        )
        .unwrap();
        assert!(rel_err(a.as_slice(), b.as_slice()) < 1e-9);
    }
}
