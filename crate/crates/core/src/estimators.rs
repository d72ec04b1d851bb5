//! Sketched estimators for tensor inner products and the contractions
//! `T(a, b, c)` and `T(I, x, y)` (with the identity on any mode), combined
//! across `D` independent sketches by an elementwise median.
//!
//! The FCS and TS estimators work in the Fourier domain. For a 3rd-order
//! `T` with sketch `S(T)` and spectrum `X = F(S(T))`:
//!
//! * `T(a, b, c) ≈ <S(T), S(a ∘ b ∘ c)>`, where `S(a ∘ b ∘ c)` is the
//!   convolution of the three factor count sketches, evaluated through
//!   Parseval without an inverse transform;
//! * `T(I, x, y)_i ≈ s_1(i) z[h_1(i)]` with
//!   `z = F⁻¹(X · conj(F(CS_2 x)) · conj(F(CS_3 y)))`, so `z` is built once
//!   and each entry is a single read.
//!
//! FCS uses a zero-padded grid (linear convolution), TS a grid of exactly
//! `J` points (circular convolution).

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SketchError};
use crate::fft;
use crate::hashing::{derive_seed, HashFamily, HashPair};
use crate::sketch::{self, SketchKind, SketchTensor, SketchVec};
use crate::tensor::{self, other_modes, DenseTensor};

/// Per-mode hash lengths: one shared value or one per mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HashLens {
    Uniform(usize),
    PerMode(Vec<usize>),
}

impl HashLens {
    pub fn resolve(&self, order: usize) -> Result<Vec<usize>> {
        match self {
            HashLens::Uniform(j) => Ok(vec![*j; order]),
            HashLens::PerMode(v) if v.len() == order => Ok(v.clone()),
            HashLens::PerMode(v) => Err(SketchError::invalid(format!(
                "{} hash lengths for an order-{order} tensor",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub hash_lens: HashLens,
    pub sketch_count: usize,
    pub seed: u64,
    #[serde(default)]
    pub reduction: Reduction,
}

impl EstimatorConfig {
    pub fn new(hash_len: usize, sketch_count: usize, seed: u64) -> Self {
        EstimatorConfig {
            hash_lens: HashLens::Uniform(hash_len),
            sketch_count,
            seed,
            reduction: Reduction::Median,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sketch_count == 0 {
            return Err(SketchError::invalid("sketch count D must be at least 1"));
        }
        let lens = match &self.hash_lens {
            HashLens::Uniform(j) => std::slice::from_ref(j),
            HashLens::PerMode(v) => v.as_slice(),
        };
        if lens.is_empty() || lens.contains(&0) {
            return Err(SketchError::invalid("hash lengths must be at least 1"));
        }
        Ok(())
    }

    /// Family of sketch copy `d`. TS and FCS estimators built from the same
    /// config share these families.
    pub fn family(&self, dims: &[usize], copy: usize) -> Result<HashFamily> {
        let lens = self.hash_lens.resolve(dims.len())?;
        HashFamily::new(dims, &lens, derive_seed(self.seed, copy as u64))
    }

    pub fn families(&self, dims: &[usize]) -> Result<Vec<Arc<HashFamily>>> {
        self.validate()?;
        (0..self.sketch_count)
            .map(|d| self.family(dims, d).map(Arc::new))
            .collect()
    }
}

/// Median of `D` scalars; even `D` averages the two middle order statistics.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(SketchError::invalid("median of an empty set"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(SketchError::Numeric("NaN among estimates".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Elementwise median of `D` equal-length vectors.
pub fn median_vectors(estimates: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = estimates
        .first()
        .ok_or_else(|| SketchError::invalid("median of an empty set"))?;
    if estimates.len() == 1 {
        return Ok(first.clone());
    }
    if estimates.iter().any(|e| e.len() != first.len()) {
        return Err(SketchError::shape("estimates of different lengths"));
    }
    let mut column = vec![0.0; estimates.len()];
    (0..first.len())
        .map(|i| {
            for (c, e) in column.iter_mut().zip(estimates) {
                *c = e[i];
            }
            median(&column)
        })
        .collect()
}

/// Single-copy inner-product estimate `<S(a), S(b)>` for a vector sketch
/// kind (`Ts` or `Fcs`) under `family`.
pub fn sketched_inner(
    kind: SketchKind,
    a: &DenseTensor,
    b: &DenseTensor,
    family: &Arc<HashFamily>,
) -> Result<f64> {
    let (sa, sb) = match kind {
        SketchKind::Fcs => (sketch::fcs_dense(a, family)?, sketch::fcs_dense(b, family)?),
        SketchKind::Ts => (sketch::ts_dense(a, family)?, sketch::ts_dense(b, family)?),
        SketchKind::Hcs => {
            let ha = sketch::hcs_dense(a, family)?;
            let hb = sketch::hcs_dense(b, family)?;
            return tensor::inner(ha.values(), hb.values());
        }
        SketchKind::Cs => {
            let long = family.materialize_composed();
            (sketch::cs_tensor(a, &long)?, sketch::cs_tensor(b, &long)?)
        }
    };
    sa.dot(&sb)
}

/// Median over `D` independent FCS families of `<FCS(a), FCS(b)>`.
pub fn est_inner(a: &DenseTensor, b: &DenseTensor, cfg: &EstimatorConfig) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(SketchError::shape(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let estimates = cfg
        .families(a.shape())?
        .iter()
        .map(|f| sketched_inner(SketchKind::Fcs, a, b, f))
        .collect::<Result<Vec<_>>>()?;
    median(&estimates)
}

/// A 3rd-order tensor's vector sketch (FCS or TS) together with its cached
/// spectrum, ready for repeated contraction queries.
#[derive(Debug, Clone)]
pub struct PrecomputedSketch {
    sketch: SketchVec,
    spectrum: Vec<Complex64>,
    grid: usize,
}

/// The FCS flavour of [`PrecomputedSketch`].
pub type PrecomputedFcs = PrecomputedSketch;

impl PrecomputedSketch {
    pub fn new(t: &DenseTensor, family: &Arc<HashFamily>, kind: SketchKind) -> Result<Self> {
        let sketch = match kind {
            SketchKind::Fcs => sketch::fcs_dense(t, family)?,
            SketchKind::Ts => sketch::ts_dense(t, family)?,
            other => {
                return Err(SketchError::invalid(format!(
                    "precomputed contraction sketches are FCS or TS, not {other}"
                )))
            }
        };
        Self::from_sketch(sketch)
    }

    pub fn fcs(t: &DenseTensor, family: &Arc<HashFamily>) -> Result<Self> {
        Self::new(t, family, SketchKind::Fcs)
    }

    pub fn from_sketch(sketch: SketchVec) -> Result<Self> {
        if sketch.family().order() != 3 {
            return Err(SketchError::invalid(
                "contraction estimators need order-3 families",
            ));
        }
        let grid = match sketch.kind() {
            SketchKind::Fcs => fft::linear_grid(sketch.len()),
            SketchKind::Ts => sketch.len(),
            other => return Err(SketchError::invalid(format!("unsupported kind {other}"))),
        };
        let spectrum = fft::forward(sketch.values(), grid);
        Ok(PrecomputedSketch {
            sketch,
            spectrum,
            grid,
        })
    }

    pub fn sketch(&self) -> &SketchVec {
        &self.sketch
    }

    pub fn family(&self) -> &Arc<HashFamily> {
        self.sketch.family()
    }

    pub fn kind(&self) -> SketchKind {
        self.sketch.kind()
    }

    fn pair(&self, mode: usize) -> &HashPair {
        self.family().pair(mode)
    }

    fn check_len(&self, mode: usize, v: &[f64]) -> Result<()> {
        let want = self.pair(mode).input_dim();
        if v.len() != want {
            return Err(SketchError::shape(format!(
                "vector of length {} for mode {mode} of size {want}",
                v.len()
            )));
        }
        Ok(())
    }

    fn factor_spectrum(&self, mode: usize, v: &[f64]) -> Result<Vec<Complex64>> {
        self.check_len(mode, v)?;
        let cs = sketch::count_sketch(v, self.pair(mode))?;
        Ok(fft::forward(&cs, self.grid))
    }

    /// `<S(T), S(a ∘ b ∘ c)>`.
    pub fn estimate_abc(&self, a: &[f64], b: &[f64], c: &[f64]) -> Result<f64> {
        let fa = self.factor_spectrum(0, a)?;
        let fb = self.factor_spectrum(1, b)?;
        let fc = self.factor_spectrum(2, c)?;
        // Parseval: sum_k x_k y_k = (1/P) sum_k conj(X_k) Y_k for real x, y.
        let mut acc = 0.0;
        for (((x, p), q), r) in self.spectrum.iter().zip(&fa).zip(&fb).zip(&fc) {
            acc += (x.conj() * p * q * r).re;
        }
        Ok(acc / self.grid as f64)
    }

    /// Cross-correlation vector `z` for the free mode; entry `i` of the
    /// estimate is `s(i) z[h(i)]` under the free mode's pair.
    pub fn correlation(&self, free_mode: usize, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        if free_mode > 2 {
            return Err(SketchError::invalid(format!(
                "free mode {free_mode} out of range"
            )));
        }
        let (mx, my) = other_modes(free_mode);
        let fx = self.factor_spectrum(mx, x)?;
        let fy = self.factor_spectrum(my, y)?;
        let prod: Vec<Complex64> = self
            .spectrum
            .iter()
            .zip(&fx)
            .zip(&fy)
            .map(|((s, p), q)| s * p.conj() * q.conj())
            .collect();
        fft::inverse_real(prod, self.pair(free_mode).hash_len())
    }

    /// Estimate of the contraction leaving `free_mode` open.
    pub fn estimate_free(&self, free_mode: usize, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let z = self.correlation(free_mode, x, y)?;
        let p = self.pair(free_mode);
        Ok((0..p.input_dim())
            .map(|i| p.sign(i) * z[p.bucket(i)])
            .collect())
    }

    /// `S(T) -= weight * S(a ∘ b ∘ c)`, keeping the cached spectrum in sync.
    pub fn deflate(&mut self, weight: f64, a: &[f64], b: &[f64], c: &[f64]) -> Result<()> {
        let fa = self.factor_spectrum(0, a)?;
        let fb = self.factor_spectrum(1, b)?;
        let fc = self.factor_spectrum(2, c)?;
        let term: Vec<Complex64> = fa
            .iter()
            .zip(&fb)
            .zip(&fc)
            .map(|((p, q), r)| p * q * r * weight)
            .collect();
        let values = fft::inverse_real(term.clone(), self.sketch.len())?;
        for (v, t) in self.sketch.values_mut().iter_mut().zip(values) {
            *v -= t;
        }
        for (s, t) in self.spectrum.iter_mut().zip(term) {
            *s -= t;
        }
        Ok(())
    }
}

/// Builds `D` precomputed FCS copies of `t`, one per family of `cfg`.
pub fn precompute_fcs(t: &DenseTensor, cfg: &EstimatorConfig) -> Result<Vec<PrecomputedFcs>> {
    precompute(t, cfg, SketchKind::Fcs)
}

pub fn precompute(
    t: &DenseTensor,
    cfg: &EstimatorConfig,
    kind: SketchKind,
) -> Result<Vec<PrecomputedSketch>> {
    cfg.families(t.shape())?
        .iter()
        .map(|f| PrecomputedSketch::new(t, f, kind))
        .collect()
}

/// Median over copies of the sketched `T(u, u, u)`.
pub fn est_uuu(pre: &[PrecomputedFcs], u: &[f64]) -> Result<f64> {
    let est = pre
        .iter()
        .map(|p| p.estimate_abc(u, u, u))
        .collect::<Result<Vec<_>>>()?;
    median(&est)
}

/// Median over copies of the sketched `T(I, u, u)`.
pub fn est_iuu(pre: &[PrecomputedFcs], u: &[f64]) -> Result<Vec<f64>> {
    est_iuv_generic(pre, u, u, 0)
}

/// Median over copies of the sketched contraction with the identity on
/// `free_mode`; `x` goes on the lower remaining mode, `y` on the higher.
pub fn est_iuv_generic(
    pre: &[PrecomputedFcs],
    x: &[f64],
    y: &[f64],
    free_mode: usize,
) -> Result<Vec<f64>> {
    let est = pre
        .iter()
        .map(|p| p.estimate_free(free_mode, x, y))
        .collect::<Result<Vec<_>>>()?;
    median_vectors(&est)
}

/// The contraction queries the CP solvers issue, answered exactly or from
/// sketches.
pub trait Contraction: Send + Sync {
    fn shape(&self) -> [usize; 3];

    /// `T(a, b, c)`.
    fn abc(&self, a: &[f64], b: &[f64], c: &[f64]) -> Result<f64>;

    /// Contraction with the identity on `free_mode`; `x` on the lower
    /// remaining mode, `y` on the higher one.
    fn free(&self, free_mode: usize, x: &[f64], y: &[f64]) -> Result<Vec<f64>>;

    /// `T -= weight * a ∘ b ∘ c`.
    fn deflate(&mut self, weight: f64, a: &[f64], b: &[f64], c: &[f64]) -> Result<()>;
}

fn shape3(t: &DenseTensor) -> Result<[usize; 3]> {
    match t.shape() {
        &[a, b, c] => Ok([a, b, c]),
        s => Err(SketchError::shape(format!(
            "expected a 3rd-order tensor, got {s:?}"
        ))),
    }
}

/// Exact contractions on the dense tensor.
#[derive(Debug, Clone)]
pub struct PlainContraction {
    tensor: DenseTensor,
}

impl PlainContraction {
    pub fn new(tensor: DenseTensor) -> Result<Self> {
        shape3(&tensor)?;
        Ok(PlainContraction { tensor })
    }

    pub fn tensor(&self) -> &DenseTensor {
        &self.tensor
    }
}

impl Contraction for PlainContraction {
    fn shape(&self) -> [usize; 3] {
        shape3(&self.tensor).expect("checked at construction")
    }

    fn abc(&self, a: &[f64], b: &[f64], c: &[f64]) -> Result<f64> {
        tensor::contract_abc(&self.tensor, a, b, c)
    }

    fn free(&self, free_mode: usize, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        tensor::contract_free(&self.tensor, free_mode, x, y)
    }

    fn deflate(&mut self, weight: f64, a: &[f64], b: &[f64], c: &[f64]) -> Result<()> {
        let r1 = tensor::CpTensor::rank_one(weight, &[a, b, c])?.densify();
        self.tensor.axpy(-1.0, &r1)
    }
}

/// Median-of-`D` FCS or TS contraction estimates.
#[derive(Debug, Clone)]
pub struct ConvContraction {
    copies: Vec<PrecomputedSketch>,
    shape: [usize; 3],
}

impl ConvContraction {
    pub fn new(t: &DenseTensor, cfg: &EstimatorConfig, kind: SketchKind) -> Result<Self> {
        let shape = shape3(t)?;
        Ok(ConvContraction {
            copies: precompute(t, cfg, kind)?,
            shape,
        })
    }

    pub fn copies(&self) -> &[PrecomputedSketch] {
        &self.copies
    }
}

impl Contraction for ConvContraction {
    fn shape(&self) -> [usize; 3] {
        self.shape
    }

    fn abc(&self, a: &[f64], b: &[f64], c: &[f64]) -> Result<f64> {
        let est = self
            .copies
            .iter()
            .map(|p| p.estimate_abc(a, b, c))
            .collect::<Result<Vec<_>>>()?;
        median(&est)
    }

    fn free(&self, free_mode: usize, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        est_iuv_generic(&self.copies, x, y, free_mode)
    }

    fn deflate(&mut self, weight: f64, a: &[f64], b: &[f64], c: &[f64]) -> Result<()> {
        self.copies
            .iter_mut()
            .try_for_each(|p| p.deflate(weight, a, b, c))
    }
}

/// Median-of-`D` HCS contraction estimates; queries cost `O(J^3)`.
#[derive(Debug, Clone)]
pub struct HcsContraction {
    copies: Vec<SketchTensor>,
    shape: [usize; 3],
}

impl HcsContraction {
    pub fn new(t: &DenseTensor, cfg: &EstimatorConfig) -> Result<Self> {
        let shape = shape3(t)?;
        let copies = cfg
            .families(t.shape())?
            .iter()
            .map(|f| sketch::hcs_dense(t, f))
            .collect::<Result<Vec<_>>>()?;
        Ok(HcsContraction { copies, shape })
    }

    fn factor_sketches(sk: &SketchTensor, vs: [(usize, &[f64]); 2]) -> Result<[Vec<f64>; 2]> {
        let f = sk.family();
        Ok([
            sketch::count_sketch(vs[0].1, f.pair(vs[0].0))?,
            sketch::count_sketch(vs[1].1, f.pair(vs[1].0))?,
        ])
    }
}

impl Contraction for HcsContraction {
    fn shape(&self) -> [usize; 3] {
        self.shape
    }

    fn abc(&self, a: &[f64], b: &[f64], c: &[f64]) -> Result<f64> {
        let est = self
            .copies
            .iter()
            .map(|sk| {
                let f = sk.family();
                let ca = sketch::count_sketch(a, f.pair(0))?;
                let cb = sketch::count_sketch(b, f.pair(1))?;
                let cc = sketch::count_sketch(c, f.pair(2))?;
                tensor::contract_abc(sk.values(), &ca, &cb, &cc)
            })
            .collect::<Result<Vec<_>>>()?;
        median(&est)
    }

    fn free(&self, free_mode: usize, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        if free_mode > 2 {
            return Err(SketchError::invalid(format!(
                "free mode {free_mode} out of range"
            )));
        }
        let (mx, my) = other_modes(free_mode);
        let est = self
            .copies
            .iter()
            .map(|sk| {
                let [cx, cy] = Self::factor_sketches(sk, [(mx, x), (my, y)])?;
                let z = tensor::contract_free(sk.values(), free_mode, &cx, &cy)?;
                let p = sk.family().pair(free_mode);
                Ok((0..p.input_dim())
                    .map(|i| p.sign(i) * z[p.bucket(i)])
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        median_vectors(&est)
    }

    fn deflate(&mut self, weight: f64, a: &[f64], b: &[f64], c: &[f64]) -> Result<()> {
        for sk in &mut self.copies {
            let f = sk.family().clone();
            let ca = sketch::count_sketch(a, f.pair(0))?;
            let cb = sketch::count_sketch(b, f.pair(1))?;
            let cc = sketch::count_sketch(c, f.pair(2))?;
            let term = tensor::CpTensor::rank_one(weight, &[&ca, &cb, &cc])?.densify();
            sk.values_mut().axpy(-1.0, &term)?;
        }
        Ok(())
    }
}

/// Median-of-`D` estimates from a plain count sketch of `vec(T)` under a
/// long hash pair of length `J~` (the same sketch dimension as FCS).
/// Stores `O(I^3)` hash entries and answers `T(I, x, y)` in
/// `O(nnz(x) nnz(y) I)`.
#[derive(Debug, Clone)]
pub struct CsContraction {
    copies: Vec<(HashPair, Vec<f64>)>,
    shape: [usize; 3],
}

impl CsContraction {
    pub fn new(t: &DenseTensor, cfg: &EstimatorConfig) -> Result<Self> {
        let shape = shape3(t)?;
        let copies = cfg
            .families(t.shape())?
            .iter()
            .enumerate()
            .map(|(d, f)| {
                let total = f.total_input();
                let seed = derive_seed(cfg.seed ^ 0xC5C5_C5C5, d as u64);
                let long = HashPair::new(total, f.composed_len(), seed)?;
                let values = sketch::count_sketch(t.data(), &long)?;
                Ok((long, values))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CsContraction { copies, shape })
    }

    pub fn hash_memory_bytes(&self) -> usize {
        self.copies.iter().map(|(p, _)| p.memory_bytes()).sum()
    }
}

impl Contraction for CsContraction {
    fn shape(&self) -> [usize; 3] {
        self.shape
    }

    fn abc(&self, a: &[f64], b: &[f64], c: &[f64]) -> Result<f64> {
        let [i_n, j_n, k_n] = self.shape;
        if a.len() != i_n || b.len() != j_n || c.len() != k_n {
            return Err(SketchError::shape("vector lengths do not match the tensor"));
        }
        let est = self
            .copies
            .iter()
            .map(|(pair, values)| {
                let mut acc = 0.0;
                for (k, &ck) in c.iter().enumerate() {
                    for (j, &bj) in b.iter().enumerate() {
                        let w = ck * bj;
                        if w == 0.0 {
                            continue;
                        }
                        let base = (k * j_n + j) * i_n;
                        for (i, &ai) in a.iter().enumerate() {
                            let l = base + i;
                            acc += w * ai * pair.sign(l) * values[pair.bucket(l)];
                        }
                    }
                }
                acc
            })
            .collect::<Vec<_>>();
        median(&est)
    }

    fn free(&self, free_mode: usize, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        if free_mode > 2 {
            return Err(SketchError::invalid(format!(
                "free mode {free_mode} out of range"
            )));
        }
        let shape = self.shape;
        let (mx, my) = other_modes(free_mode);
        if x.len() != shape[mx] || y.len() != shape[my] {
            return Err(SketchError::shape("vector lengths do not match the tensor"));
        }
        let est = self
            .copies
            .iter()
            .map(|(pair, values)| {
                let mut out = vec![0.0; shape[free_mode]];
                let mut idx = [0usize; 3];
                for (p, &xv) in x.iter().enumerate() {
                    for (q, &yv) in y.iter().enumerate() {
                        let w = xv * yv;
                        if w == 0.0 {
                            continue;
                        }
                        idx[mx] = p;
                        idx[my] = q;
                        for (i, o) in out.iter_mut().enumerate() {
                            idx[free_mode] = i;
                            let l = idx[0] + shape[0] * (idx[1] + shape[1] * idx[2]);
                            *o += w * pair.sign(l) * values[pair.bucket(l)];
                        }
                    }
                }
                out
            })
            .collect::<Vec<_>>();
        median_vectors(&est)
    }

    fn deflate(&mut self, weight: f64, a: &[f64], b: &[f64], c: &[f64]) -> Result<()> {
        let r1 = tensor::CpTensor::rank_one(weight, &[a, b, c])?.densify();
        for (pair, values) in &mut self.copies {
            let s = sketch::count_sketch(r1.data(), pair)?;
            for (v, t) in values.iter_mut().zip(s) {
                *v -= t;
            }
        }
        Ok(())
    }
}

/// Which contraction engine a solver uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Plain,
    Cs,
    Ts,
    Hcs,
    Fcs,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Plain => "plain",
            Backend::Cs => "cs",
            Backend::Ts => "ts",
            Backend::Hcs => "hcs",
            Backend::Fcs => "fcs",
        }
    }

    /// Builds the contraction engine for `t`. `cfg` is ignored for `Plain`.
    pub fn build(self, t: &DenseTensor, cfg: &EstimatorConfig) -> Result<Box<dyn Contraction>> {
        Ok(match self {
            Backend::Plain => Box::new(PlainContraction::new(t.clone())?),
            Backend::Cs => Box::new(CsContraction::new(t, cfg)?),
            Backend::Ts => Box::new(ConvContraction::new(t, cfg, SketchKind::Ts)?),
            Backend::Hcs => Box::new(HcsContraction::new(t, cfg)?),
            Backend::Fcs => Box::new(ConvContraction::new(t, cfg, SketchKind::Fcs)?),
        })
    }
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Backend {
    type Err = SketchError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "plain" => Ok(Backend::Plain),
            "cs" => Ok(Backend::Cs),
            "ts" => Ok(Backend::Ts),
            "hcs" => Ok(Backend::Hcs),
            "fcs" => Ok(Backend::Fcs),
            other => Err(SketchError::invalid(format!("unknown backend `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::CpTensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> DenseTensor {
        DenseTensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
    }

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    /// Family whose composed buckets are injective over a cubical `I^3`
    /// index set: mode n maps i to i * I^n, hash length I^n (I - 1) + 1.
    fn injective_family(i: usize) -> Arc<HashFamily> {
        let pairs = (0..3u32)
            .map(|n| {
                let stride = (i as u32).pow(n);
                let buckets = (0..i as u32).map(|x| x * stride).collect();
                let signs = (0..i)
                    .map(|x| {
                        if (x + n as usize).is_multiple_of(2) {
                            1
                        } else {
                            -1
                        }
                    })
                    .collect();
                HashPair::from_maps(buckets, signs, stride as usize * (i - 1) + 1).unwrap()
            })
            .collect();
        Arc::new(HashFamily::from_pairs(pairs).unwrap())
    }

    #[test]
    fn median_rules() {
        assert_eq!(median(&[3.5]).unwrap(), 3.5);
        assert_eq!(median(&[1.0, 2.0, 100.0]).unwrap(), 2.0);
        assert_eq!(median(&[10.0, 1.0, 3.0, 2.0]).unwrap(), 2.5);
        assert!(median(&[]).is_err());
        assert!(median_vectors(&[]).is_err());
        let v = median_vectors(&[vec![1.0, 5.0], vec![2.0, -1.0], vec![100.0, 0.0]]).unwrap();
        assert_eq!(v, vec![2.0, 0.0]);
    }

    #[test]
    fn config_validation() {
        assert!(EstimatorConfig::new(8, 0, 1).validate().is_err());
        assert!(EstimatorConfig::new(0, 3, 1).validate().is_err());
        let cfg = EstimatorConfig::new(8, 3, 1);
        let fams = cfg.families(&[4, 4, 4]).unwrap();
        assert_eq!(fams.len(), 3);
        assert_ne!(fams[0], fams[1]);
        assert_eq!(*fams[2], cfg.family(&[4, 4, 4], 2).unwrap());
    }

    #[test]
    fn est_inner_of_zero_is_zero() {
        let z = DenseTensor::zeros(&[3, 3, 3]).unwrap();
        assert_eq!(
            est_inner(&z, &z, &EstimatorConfig::new(5, 3, 1)).unwrap(),
            0.0
        );
        let a = DenseTensor::zeros(&[3, 3]).unwrap();
        assert!(est_inner(&z, &a, &EstimatorConfig::new(5, 3, 1)).is_err());
    }

    #[test]
    fn injective_family_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_tensor(&[3, 3, 3], &mut rng);
        let b = random_tensor(&[3, 3, 3], &mut rng);
        let fam = injective_family(3);
        assert!(fam.composed_len() >= 27);
        let est = sketched_inner(SketchKind::Fcs, &a, &b, &fam).unwrap();
        assert!((est - tensor::inner(&a, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn injective_rank_one_contractions_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = unit(random_vec(4, &mut rng));
        let t = CpTensor::rank_one(2.0, &[&u, &u, &u]).unwrap().densify();
        let pre = vec![PrecomputedFcs::fcs(&t, &injective_family(4)).unwrap()];
        assert!((est_uuu(&pre, &u).unwrap() - 2.0).abs() < 1e-10);
        for (g, w) in est_iuu(&pre, &u).unwrap().iter().zip(&u) {
            assert!((g - 2.0 * w).abs() < 1e-10);
        }
        assert_eq!(est_uuu(&pre, &[0.0; 4]).unwrap(), 0.0);
    }

    #[test]
    fn estimate_abc_equals_sketch_inner_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_tensor(&[5, 6, 4], &mut rng);
        let (a, b, c) = (
            random_vec(5, &mut rng),
            random_vec(6, &mut rng),
            random_vec(4, &mut rng),
        );
        let r1 = CpTensor::rank_one(1.0, &[&a, &b, &c]).unwrap().densify();
        for kind in [SketchKind::Fcs, SketchKind::Ts] {
            let fam = Arc::new(HashFamily::uniform(&[5, 6, 4], 7, 9).unwrap());
            let pre = PrecomputedSketch::new(&t, &fam, kind).unwrap();
            let want = sketched_inner(kind, &t, &r1, &fam).unwrap();
            assert!((pre.estimate_abc(&a, &b, &c).unwrap() - want).abs() < 1e-10);
        }
    }

    #[test]
    fn free_estimates_match_per_entry_inner_products() {
        // Every entry of the fast estimate equals <S(T), S(e_i ∘ x ∘ y)>
        // under the same family, for every free mode and both kinds.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let shape = [4, 5, 3];
        let t = random_tensor(&shape, &mut rng);
        for kind in [SketchKind::Fcs, SketchKind::Ts] {
            let fam = Arc::new(HashFamily::uniform(&shape, 6, 21).unwrap());
            let pre = PrecomputedSketch::new(&t, &fam, kind).unwrap();
            for free in 0..3 {
                let (mx, my) = other_modes(free);
                let x = random_vec(shape[mx], &mut rng);
                let y = random_vec(shape[my], &mut rng);
                let got = pre.estimate_free(free, &x, &y).unwrap();
                for (i, g) in got.iter().enumerate() {
                    let mut e = vec![0.0; shape[free]];
                    e[i] = 1.0;
                    let mut vs: [&[f64]; 3] = [&[], &[], &[]];
                    vs[free] = &e;
                    vs[mx] = &x;
                    vs[my] = &y;
                    let r1 = CpTensor::rank_one(1.0, &vs).unwrap().densify();
                    let want = sketched_inner(kind, &t, &r1, &fam).unwrap();
                    assert!((g - want).abs() < 1e-10, "{kind} free={free} i={i}");
                }
            }
        }
    }

    #[test]
    fn est_iuu_is_iuv_with_equal_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = random_tensor(&[6, 6, 6], &mut rng);
        let u = random_vec(6, &mut rng);
        let pre = precompute_fcs(&t, &EstimatorConfig::new(10, 3, 4)).unwrap();
        assert_eq!(
            est_iuu(&pre, &u).unwrap(),
            est_iuv_generic(&pre, &u, &u, 0).unwrap()
        );
        let zero = vec![0.0; 6];
        assert!(est_iuv_generic(&pre, &u, &zero, 1)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        assert!(est_iuv_generic(&pre, &u, &u, 3).is_err());
        assert!(est_iuu(&pre, &[1.0; 5]).is_err());
    }

    #[test]
    fn zero_tensor_gives_zero_vector() {
        let t = DenseTensor::zeros(&[5, 5, 5]).unwrap();
        let pre = precompute_fcs(&t, &EstimatorConfig::new(8, 2, 1)).unwrap();
        assert!(est_iuu(&pre, &[0.3; 5]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deflation_matches_sketch_of_deflated_tensor() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = random_tensor(&[5, 4, 6], &mut rng);
        let (a, b, c) = (
            random_vec(5, &mut rng),
            random_vec(4, &mut rng),
            random_vec(6, &mut rng),
        );
        let cfg = EstimatorConfig::new(7, 2, 8);
        let mut deflated = t.clone();
        deflated
            .axpy(
                -1.7,
                &CpTensor::rank_one(1.0, &[&a, &b, &c]).unwrap().densify(),
            )
            .unwrap();
        let (x, y) = (random_vec(5, &mut rng), random_vec(4, &mut rng));
        for backend in [
            Backend::Fcs,
            Backend::Ts,
            Backend::Hcs,
            Backend::Cs,
            Backend::Plain,
        ] {
            let mut eng = backend.build(&t, &cfg).unwrap();
            eng.deflate(1.7, &a, &b, &c).unwrap();
            let fresh = backend.build(&deflated, &cfg).unwrap();
            let g = eng.free(2, &x, &y).unwrap();
            let w = fresh.free(2, &x, &y).unwrap();
            for (p, q) in g.iter().zip(&w) {
                assert!((p - q).abs() < 1e-10, "{backend}");
            }
            let g = eng.abc(&a, &b, &c).unwrap();
            let w = fresh.abc(&a, &b, &c).unwrap();
            assert!((g - w).abs() < 1e-10, "{backend}");
        }
    }

    #[test]
    fn hcs_and_cs_backends_agree_with_their_sketch_definitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = random_tensor(&[4, 3, 5], &mut rng);
        let cfg = EstimatorConfig::new(3, 1, 2);
        let (a, b, c) = (
            random_vec(4, &mut rng),
            random_vec(3, &mut rng),
            random_vec(5, &mut rng),
        );
        let r1 = CpTensor::rank_one(1.0, &[&a, &b, &c]).unwrap().densify();
        let fam = Arc::new(cfg.family(&[4, 3, 5], 0).unwrap());
        let hcs = Backend::Hcs.build(&t, &cfg).unwrap();
        let want = sketched_inner(SketchKind::Hcs, &t, &r1, &fam).unwrap();
        assert!((hcs.abc(&a, &b, &c).unwrap() - want).abs() < 1e-10);

        // Plain CS against a direct long-pair evaluation.
        let cs = CsContraction::new(&t, &cfg).unwrap();
        let (pair, values) = &cs.copies[0];
        let want = crate::tensor::dot(values, &sketch::count_sketch(r1.data(), pair).unwrap());
        assert!((cs.abc(&a, &b, &c).unwrap() - want).abs() < 1e-10);
        assert_eq!(pair.hash_len(), 3 * 3 - 2);
    }

    #[test]
    fn plain_backend_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = random_tensor(&[4, 4, 4], &mut rng);
        let u = random_vec(4, &mut rng);
        let eng = Backend::Plain
            .build(&t, &EstimatorConfig::new(1, 1, 0))
            .unwrap();
        assert_eq!(
            eng.abc(&u, &u, &u).unwrap(),
            tensor::contract_uuu(&t, &u).unwrap()
        );
        assert_eq!(
            eng.free(0, &u, &u).unwrap(),
            tensor::contract_iuu(&t, &u).unwrap()
        );
    }

    #[test]
    fn fcs_estimate_concentrates_with_large_j() {
        // Random 8x8x8, J=512, D=5: error within a small multiple of
        // ||T||_F ||u||^3 / sqrt(J~) for at least 95% of seeds.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = random_tensor(&[8, 8, 8], &mut rng);
        let u = unit(random_vec(8, &mut rng));
        let truth = tensor::contract_uuu(&t, &u).unwrap();
        let scale = t.frobenius_norm() / ((3 * 512 - 2) as f64).sqrt();
        let seeds = 40;
        let ok = (0..seeds)
            .filter(|&s| {
                let pre = precompute_fcs(&t, &EstimatorConfig::new(512, 5, s)).unwrap();
                (est_uuu(&pre, &u).unwrap() - truth).abs() <= 3.0 * scale
            })
            .count();
        assert!(ok * 100 >= 95 * seeds as usize, "{ok}/{seeds}");
    }

    #[test]
    fn est_iuu_concentrates_around_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let t = random_tensor(&[6, 6, 6], &mut rng);
        let u = unit(random_vec(6, &mut rng));
        let truth = tensor::contract_iuu(&t, &u).unwrap();
        let pre = precompute_fcs(&t, &EstimatorConfig::new(400, 9, 3)).unwrap();
        let est = est_iuu(&pre, &u).unwrap();
        let err = est
            .iter()
            .zip(&truth)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = t.frobenius_norm() * (6.0f64).sqrt() / (1198f64).sqrt();
        assert!(err <= 3.0 * scale, "err {err} scale {scale}");
    }
}
