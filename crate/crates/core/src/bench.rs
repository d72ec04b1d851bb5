//! Synthetic data and the experiment grid runner behind `sketchtensor bench`.
//!
//! A run expands an [`ExperimentSpec`] into grid cells, evaluates them in
//! parallel and returns the rows in grid order. Numeric columns depend only
//! on the spec. Timing columns are medians over `repetitions` runs.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::compression::{
    compress_contraction, compress_kron, fcs_lens_for_ratio, hcs_len_for_ratio, reconstruct_kron,
    Codec, CodecConfig, CompressedProduct,
};
use crate::cpd::{als, psnr, residual_norm, rtpm, AlsConfig, RtpmConfig};
use crate::error::{Result, SketchError};
use crate::estimators::{median, Backend, EstimatorConfig, HashLens};
use crate::hashing::{derive_seed, HashFamily, HASH_ENTRY_BYTES};
use crate::sketch::{fcs_dense, ts_dense};
use crate::tensor::{contract_pair, kron, CpTensor, DenseTensor};

/// `R` orthonormal columns in `R^dim` from the QR factorization of a
/// Gaussian matrix.
pub fn orthonormal_basis(dim: usize, rank: usize, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
    if rank == 0 || rank > dim {
        return Err(SketchError::invalid(format!(
            "need 1 <= rank <= dim, got rank {rank} for dim {dim}"
        )));
    }
    let g = DMatrix::from_fn(dim, rank, |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(g.qr().q())
}

fn add_noise(t: &mut DenseTensor, sigma: f64, rng: &mut impl Rng) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(SketchError::invalid(format!(
            "noise level must be >= 0, got {sigma}"
        )));
    }
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| SketchError::invalid(e.to_string()))?;
        for v in t.data_mut() {
            *v += normal.sample(rng);
        }
    }
    Ok(())
}

/// Noise-free part of [`gen_synthetic_symmetric`]: `sum_r u_r∘u_r∘u_r`.
pub fn synthetic_symmetric_cp(dim: usize, rank: usize, seed: u64) -> Result<CpTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = orthonormal_basis(dim, rank, &mut rng)?;
    CpTensor::new(vec![1.0; rank], vec![u.clone(), u.clone(), u])
}

/// `sum_r u_r∘u_r∘u_r` over a random orthonormal basis plus i.i.d.
/// `N(0, sigma^2)` noise on every entry.
pub fn gen_synthetic_symmetric(
    dim: usize,
    rank: usize,
    sigma: f64,
    seed: u64,
) -> Result<DenseTensor> {
    let mut t = synthetic_symmetric_cp(dim, rank, seed)?.densify();
    add_noise(
        &mut t,
        sigma,
        &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 1)),
    )?;
    Ok(t)
}

/// Noise-free part of [`gen_synthetic_asymmetric`]: `sum_r u_r∘v_r∘w_r`.
pub fn synthetic_asymmetric_cp(dim: usize, rank: usize, seed: u64) -> Result<CpTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors = (0..3)
        .map(|_| orthonormal_basis(dim, rank, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    CpTensor::new(vec![1.0; rank], factors)
}

/// `sum_r u_r∘v_r∘w_r` over three independent orthonormal bases plus noise.
pub fn gen_synthetic_asymmetric(
    dim: usize,
    rank: usize,
    sigma: f64,
    seed: u64,
) -> Result<DenseTensor> {
    let mut t = synthetic_asymmetric_cp(dim, rank, seed)?.densify();
    add_noise(
        &mut t,
        sigma,
        &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 1)),
    )?;
    Ok(t)
}

/// Tensor with i.i.d. entries uniform on `[lo, hi)`.
pub fn gen_uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Result<DenseTensor> {
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        return Err(SketchError::invalid(format!("empty range [{lo}, {hi})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenseTensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    RtpmCompare,
    AlsCompare,
    KronCompress,
    ContractionCompress,
    VarianceStudy,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::RtpmCompare => "rtpm-compare",
            ExperimentKind::AlsCompare => "als-compare",
            ExperimentKind::KronCompress => "kron-compress",
            ExperimentKind::ContractionCompress => "contraction-compress",
            ExperimentKind::VarianceStudy => "variance-study",
        }
    }
}

fn default_hash_lens() -> Vec<usize> {
    vec![300]
}
fn default_sketch_counts() -> Vec<usize> {
    vec![10]
}
fn default_sigmas() -> Vec<f64> {
    vec![0.0]
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_dim() -> usize {
    30
}
fn default_rank() -> usize {
    5
}
fn default_trials() -> usize {
    20_000
}
fn default_repetitions() -> usize {
    3
}
fn default_max_iters() -> usize {
    50
}
fn default_num_inits() -> usize {
    15
}
fn default_num_iters() -> usize {
    20
}

/// One experiment grid. Unused fields are ignored by kinds they do not
/// apply to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    /// Solver backends (`plain`, `cs`, `ts`, `hcs`, `fcs`), compression
    /// codecs (`fcs`, `hcs`, `cs`) or, for `variance-study`, `ts`/`fcs`.
    pub backends: Vec<String>,
    /// Per-mode hash lengths `J`.
    #[serde(default = "default_hash_lens")]
    pub hash_lens: Vec<usize>,
    /// Compression kinds only: target compression ratios. When nonempty they
    /// replace `hash_lens`.
    #[serde(default)]
    pub ratios: Vec<f64>,
    /// Independent sketch counts `D`.
    #[serde(default = "default_sketch_counts")]
    pub sketch_counts: Vec<usize>,
    #[serde(default = "default_sigmas")]
    pub sigmas: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Side length `I` of the synthetic tensors (cubical).
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_rank")]
    pub rank: usize,
    /// Compression kinds: first operand shape (`[I1, I2]` or `[I1, I2, L]`).
    #[serde(default)]
    pub shape_a: Option<Vec<usize>>,
    /// Compression kinds: second operand shape (`[I3, I4]` or `[L, I3, I4]`).
    #[serde(default)]
    pub shape_b: Option<Vec<usize>>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_num_inits")]
    pub num_inits: usize,
    #[serde(default = "default_num_iters")]
    pub num_iters: usize,
    /// Output prefix; `<prefix>.csv` and `<prefix>.json` are written.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind, backends: &[&str]) -> Self {
        ExperimentSpec {
            kind,
            backends: backends.iter().map(|s| s.to_string()).collect(),
            hash_lens: default_hash_lens(),
            ratios: Vec::new(),
            sketch_counts: default_sketch_counts(),
            sigmas: default_sigmas(),
            seeds: default_seeds(),
            dim: default_dim(),
            rank: default_rank(),
            shape_a: None,
            shape_b: None,
            trials: default_trials(),
            repetitions: default_repetitions(),
            max_iters: default_max_iters(),
            num_inits: default_num_inits(),
            num_iters: default_num_iters(),
            output: None,
        }
    }

    fn compress_kind(&self) -> bool {
        matches!(
            self.kind,
            ExperimentKind::KronCompress | ExperimentKind::ContractionCompress
        )
    }

    fn shapes(&self) -> (Vec<usize>, Vec<usize>) {
        let (a, b) = match self.kind {
            ExperimentKind::KronCompress => (vec![30, 40], vec![40, 50]),
            _ => (vec![30, 40, 50], vec![50, 40, 30]),
        };
        (
            self.shape_a.clone().unwrap_or(a),
            self.shape_b.clone().unwrap_or(b),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let empty = |name: &str| Err(SketchError::invalid(format!("`{name}` must not be empty")));
        if self.backends.is_empty() {
            return empty("backends");
        }
        if self.seeds.is_empty() {
            return empty("seeds");
        }
        if self.sketch_counts.is_empty() {
            return empty("sketch_counts");
        }
        if self.sigmas.is_empty() {
            return empty("sigmas");
        }
        if self.hash_lens.is_empty() && !(self.compress_kind() && !self.ratios.is_empty()) {
            return empty("hash_lens");
        }
        if self.hash_lens.contains(&0) || self.sketch_counts.contains(&0) {
            return Err(SketchError::invalid(
                "hash lengths and sketch counts must be >= 1",
            ));
        }
        if self.ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(SketchError::invalid("ratios must be positive"));
        }
        if self.sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(SketchError::invalid("noise levels must be >= 0"));
        }
        if self.repetitions == 0 || self.dim == 0 || self.rank == 0 {
            return Err(SketchError::invalid(
                "repetitions, dim and rank must be >= 1",
            ));
        }
        for b in &self.backends {
            match self.kind {
                ExperimentKind::RtpmCompare | ExperimentKind::AlsCompare => {
                    b.parse::<Backend>()?;
                }
                ExperimentKind::KronCompress | ExperimentKind::ContractionCompress => {
                    b.parse::<Codec>()?;
                }
                ExperimentKind::VarianceStudy => {
                    if !matches!(b.to_ascii_lowercase().as_str(), "ts" | "fcs") {
                        return Err(SketchError::invalid(format!(
                            "variance-study compares `ts` and `fcs`, got `{b}`"
                        )));
                    }
                }
            }
        }
        match self.kind {
            ExperimentKind::RtpmCompare | ExperimentKind::AlsCompare => {
                if self.rank > self.dim {
                    return Err(SketchError::invalid("rank must not exceed dim"));
                }
                if self.max_iters == 0 || self.num_inits == 0 || self.num_iters == 0 {
                    return Err(SketchError::invalid("iteration counts must be >= 1"));
                }
            }
            ExperimentKind::VarianceStudy => {
                if self.trials < 2 {
                    return Err(SketchError::invalid(
                        "variance-study needs at least 2 trials",
                    ));
                }
            }
            _ => {
                let (a, b) = self.shapes();
                let want = if self.kind == ExperimentKind::KronCompress {
                    2
                } else {
                    3
                };
                if a.len() != want || b.len() != want || a.contains(&0) || b.contains(&0) {
                    return Err(SketchError::invalid(format!(
                        "{} needs operand shapes of order {want}",
                        self.kind.name()
                    )));
                }
                if want == 3 && a[2] != b[0] {
                    return Err(SketchError::shape("contracted dimensions differ"));
                }
            }
        }
        Ok(())
    }
}

/// One output row. Columns that do not apply to a kind are `None` (empty in
/// CSV, `null` in JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub experiment: String,
    pub backend: String,
    pub hash_len: usize,
    pub sketch_len: usize,
    pub sketch_count: usize,
    pub sigma: f64,
    pub seed: u64,
    pub target_cr: Option<f64>,
    pub compression_ratio: Option<f64>,
    pub residual: Option<f64>,
    pub psnr_db: Option<f64>,
    pub relative_error: Option<f64>,
    pub var_ts: Option<f64>,
    pub var_fcs: Option<f64>,
    pub build_s: Option<f64>,
    pub iterate_s: Option<f64>,
    pub compress_s: Option<f64>,
    pub decompress_s: Option<f64>,
    pub hash_memory_bytes: usize,
}

impl MetricsRow {
    fn blank(spec: &ExperimentSpec, cell: &Cell) -> Self {
        MetricsRow {
            experiment: spec.kind.name().to_string(),
            backend: cell.backend.to_ascii_lowercase(),
            hash_len: cell.hash_len,
            sketch_len: 0,
            sketch_count: cell.sketch_count,
            sigma: cell.sigma,
            seed: cell.seed,
            target_cr: cell.ratio,
            compression_ratio: None,
            residual: None,
            psnr_db: None,
            relative_error: None,
            var_ts: None,
            var_fcs: None,
            build_s: None,
            iterate_s: None,
            compress_s: None,
            decompress_s: None,
            hash_memory_bytes: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub rows: Vec<MetricsRow>,
}

#[derive(Debug, Clone)]
struct Cell {
    backend: String,
    hash_len: usize,
    ratio: Option<f64>,
    sketch_count: usize,
    sigma: f64,
    seed: u64,
}

fn expand(spec: &ExperimentSpec) -> Vec<Cell> {
    let sizes: Vec<(usize, Option<f64>)> = if spec.compress_kind() && !spec.ratios.is_empty() {
        spec.ratios.iter().map(|&r| (0, Some(r))).collect()
    } else {
        spec.hash_lens.iter().map(|&j| (j, None)).collect()
    };
    let sigmas: &[f64] = if spec.compress_kind() {
        &[0.0]
    } else {
        &spec.sigmas
    };
    let counts: &[usize] = if spec.kind == ExperimentKind::VarianceStudy {
        &[1]
    } else {
        &spec.sketch_counts
    };
    let mut cells = Vec::new();
    for &seed in &spec.seeds {
        for &sigma in sigmas {
            for backend in &spec.backends {
                for &(hash_len, ratio) in &sizes {
                    for &sketch_count in counts {
                        cells.push(Cell {
                            backend: backend.clone(),
                            hash_len,
                            ratio,
                            sketch_count,
                            sigma,
                            seed,
                        });
                    }
                }
            }
        }
    }
    if spec.kind == ExperimentKind::VarianceStudy {
        // One row per (J, seed) carrying every requested variance.
        cells.retain(|c| c.backend == spec.backends[0]);
    }
    cells
}

fn median_secs(times: &[Duration]) -> Result<f64> {
    median(&times.iter().map(Duration::as_secs_f64).collect::<Vec<_>>())
}

fn backend_hash_memory(
    backend: Backend,
    dims: &[usize],
    hash_lens: usize,
    d: usize,
) -> Result<usize> {
    Ok(match backend {
        Backend::Plain => 0,
        Backend::Cs => d * dims.iter().product::<usize>() * HASH_ENTRY_BYTES,
        _ => d * HashFamily::uniform(dims, hash_lens, 0)?.memory_bytes(),
    })
}

fn sketch_len(backend: Backend, order: usize, j: usize) -> usize {
    match backend {
        Backend::Plain => 0,
        Backend::Ts => j,
        Backend::Hcs => j.pow(order as u32),
        Backend::Cs | Backend::Fcs => order * j - order + 1,
    }
}

fn run_cpd_cell(spec: &ExperimentSpec, cell: &Cell) -> Result<MetricsRow> {
    let backend: Backend = cell.backend.parse()?;
    let asym = spec.kind == ExperimentKind::AlsCompare;
    let t = if asym {
        gen_synthetic_asymmetric(spec.dim, spec.rank, cell.sigma, cell.seed)?
    } else {
        gen_synthetic_symmetric(spec.dim, spec.rank, cell.sigma, cell.seed)?
    };
    // Hash seeds depend on the seed and sketch size only, so every backend of
    // one cell row sees the same families.
    let est = EstimatorConfig::new(cell.hash_len, cell.sketch_count, derive_seed(cell.seed, 2));
    let mut row = MetricsRow::blank(spec, cell);
    let (mut builds, mut iters) = (Vec::new(), Vec::new());
    for rep in 0..spec.repetitions {
        let (cp, timings) = if asym {
            let mut cfg =
                AlsConfig::new(spec.rank, backend, est.clone(), derive_seed(cell.seed, 3));
            cfg.max_iters = spec.max_iters;
            let r = als(&t, &cfg)?;
            (r.cp, r.timings)
        } else {
            let mut cfg =
                RtpmConfig::new(spec.rank, backend, est.clone(), derive_seed(cell.seed, 3));
            cfg.num_inits = spec.num_inits;
            cfg.num_iters = spec.num_iters;
            let r = rtpm(&t, &cfg)?;
            (r.cp, r.timings)
        };
        builds.push(Duration::from_secs_f64(timings.sketch_build_s));
        iters.push(Duration::from_secs_f64(timings.iterations_s));
        if rep == 0 {
            let est_t = cp.densify();
            row.residual = Some(residual_norm(&t, &cp)?);
            row.psnr_db = Some(psnr(&t, &est_t)?);
        }
    }
    let dims = [spec.dim; 3];
    row.sketch_len = sketch_len(backend, 3, cell.hash_len);
    if backend != Backend::Plain {
        row.compression_ratio = Some(t.len() as f64 / row.sketch_len as f64);
    }
    row.hash_memory_bytes = backend_hash_memory(backend, &dims, cell.hash_len, cell.sketch_count)?;
    row.build_s = Some(median_secs(&builds)?);
    row.iterate_s = Some(median_secs(&iters)?);
    Ok(row)
}

fn codec_config(codec: Codec, dims: [usize; 4], cell: &Cell) -> Result<CodecConfig> {
    let hash_lens = match (cell.ratio, codec) {
        (None, _) => HashLens::Uniform(cell.hash_len),
        (Some(r), Codec::Hcs) => HashLens::Uniform(hcs_len_for_ratio(&dims, r)?),
        (Some(r), _) => HashLens::PerMode(fcs_lens_for_ratio(&dims, r)?),
    };
    Ok(CodecConfig {
        codec,
        hash_lens,
        sketch_count: cell.sketch_count,
        seed: derive_seed(cell.seed, 2),
    })
}

fn relative_error(est: &[f64], truth: &[f64]) -> f64 {
    let num: f64 = est.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = truth.iter().map(|b| b * b).sum();
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}

fn run_compress_cell(spec: &ExperimentSpec, cell: &Cell) -> Result<MetricsRow> {
    let codec: Codec = cell.backend.parse()?;
    let (sa, sb) = spec.shapes();
    let kron_kind = spec.kind == ExperimentKind::KronCompress;
    let (a, b) = if kron_kind {
        (
            gen_uniform(&sa, -5.0, 5.0, cell.seed)?,
            gen_uniform(&sb, -5.0, 5.0, derive_seed(cell.seed, 1))?,
        )
    } else {
        (
            gen_uniform(&sa, 0.0, 10.0, cell.seed)?,
            gen_uniform(&sb, 0.0, 10.0, derive_seed(cell.seed, 1))?,
        )
    };
    let dims = if kron_kind {
        [sa[0], sa[1], sb[0], sb[1]]
    } else {
        [sa[0], sa[1], sb[1], sb[2]]
    };
    let cfg = codec_config(codec, dims, cell)?;
    let as_matrix =
        |t: &DenseTensor| DMatrix::from_column_slice(t.shape()[0], t.shape()[1], t.data());
    let compress = || -> Result<CompressedProduct> {
        if kron_kind {
            compress_kron(&as_matrix(&a), &as_matrix(&b), &cfg)
        } else {
            compress_contraction(&a, &b, &cfg)
        }
    };
    let decompress = |sk: &CompressedProduct| -> Result<Vec<f64>> {
        if kron_kind {
            Ok(reconstruct_kron(sk)?.as_slice().to_vec())
        } else {
            Ok(sk.reconstruct()?.into_data())
        }
    };
    let truth: Vec<f64> = if kron_kind {
        kron(&as_matrix(&a), &as_matrix(&b)).as_slice().to_vec()
    } else {
        contract_pair(&a, &b, 2, 0)?.into_data()
    };

    let mut row = MetricsRow::blank(spec, cell);
    let (mut comp, mut decomp) = (Vec::new(), Vec::new());
    for rep in 0..spec.repetitions {
        let start = Instant::now();
        let sk = compress()?;
        comp.push(start.elapsed());
        let start = Instant::now();
        let rec = decompress(&sk)?;
        decomp.push(start.elapsed());
        if rep == 0 {
            row.relative_error = Some(relative_error(&rec, &truth));
            row.sketch_len = sk.sketch_len();
            row.compression_ratio = Some(sk.compression_ratio());
            row.hash_memory_bytes = sk.hash_memory();
            row.hash_len = sk.copies()[0]
                .family
                .hash_lens()
                .into_iter()
                .max()
                .unwrap_or(0);
        }
    }
    row.compress_s = Some(median_secs(&comp)?);
    row.decompress_s = Some(median_secs(&decomp)?);
    Ok(row)
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Empirical variances of single-sketch TS and FCS inner-product estimates
/// over `trials` shared families on `dim^3` inputs.
pub fn variance_study(dim: usize, hash_len: usize, trials: usize, seed: u64) -> Result<(f64, f64)> {
    let shape = [dim; 3];
    let a = gen_uniform(&shape, -1.0, 1.0, seed)?;
    let b = gen_uniform(&shape, -1.0, 1.0, derive_seed(seed, 1))?;
    let mut ts = Vec::with_capacity(trials);
    let mut fcs = Vec::with_capacity(trials);
    for t in 0..trials as u64 {
        let family = Arc::new(HashFamily::uniform(
            &shape,
            hash_len,
            derive_seed(seed ^ 0x7A, t),
        )?);
        ts.push(ts_dense(&a, &family)?.dot(&ts_dense(&b, &family)?)?);
        fcs.push(fcs_dense(&a, &family)?.dot(&fcs_dense(&b, &family)?)?);
    }
    Ok((sample_variance(&ts), sample_variance(&fcs)))
}

fn run_variance_cell(spec: &ExperimentSpec, cell: &Cell) -> Result<MetricsRow> {
    let (var_ts, var_fcs) = variance_study(spec.dim, cell.hash_len, spec.trials, cell.seed)?;
    let mut row = MetricsRow::blank(spec, cell);
    row.backend = spec.backends.join("+").to_ascii_lowercase();
    row.sketch_len = cell.hash_len;
    let wants = |k: &str| spec.backends.iter().any(|b| b.eq_ignore_ascii_case(k));
    row.var_ts = wants("ts").then_some(var_ts);
    row.var_fcs = wants("fcs").then_some(var_fcs);
    row.hash_memory_bytes = HashFamily::uniform(&[spec.dim; 3], cell.hash_len, 0)?.memory_bytes();
    Ok(row)
}

fn run_cell(spec: &ExperimentSpec, cell: &Cell) -> Result<MetricsRow> {
    match spec.kind {
        ExperimentKind::RtpmCompare | ExperimentKind::AlsCompare => run_cpd_cell(spec, cell),
        ExperimentKind::KronCompress | ExperimentKind::ContractionCompress => {
            run_compress_cell(spec, cell)
        }
        ExperimentKind::VarianceStudy => run_variance_cell(spec, cell),
    }
}

/// Runs every grid cell with at most `jobs` worker threads (`0` picks the
/// rayon default) and returns rows in grid order.
pub fn run_experiment(spec: &ExperimentSpec, jobs: usize) -> Result<ExperimentReport> {
    use rayon::prelude::*;
    spec.validate()?;
    let cells = expand(spec);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| SketchError::invalid(format!("thread pool: {e}")))?;
    let rows = pool.install(|| {
        cells
            .par_iter()
            .map(|c| run_cell(spec, c))
            .collect::<Result<Vec<_>>>()
    })?;
    if rows.iter().any(row_has_non_finite) {
        return Err(SketchError::Numeric(
            "non-finite metric in experiment output".into(),
        ));
    }
    Ok(ExperimentReport {
        spec: spec.clone(),
        rows,
    })
}

fn row_has_non_finite(r: &MetricsRow) -> bool {
    [
        r.residual,
        r.psnr_db,
        r.relative_error,
        r.var_ts,
        r.var_fcs,
        r.compression_ratio,
    ]
    .iter()
    .flatten()
    .any(|v| !v.is_finite())
}

pub fn write_csv(rows: &[MetricsRow], w: impl std::io::Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)
            .map_err(|e| SketchError::Format(e.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `<prefix>.csv` and `<prefix>.json`.
pub fn write_report(report: &ExperimentReport, prefix: &Path) -> Result<(PathBuf, PathBuf)> {
    let csv_path = prefix.with_extension("csv");
    let json_path = prefix.with_extension("json");
    write_csv(&report.rows, std::fs::File::create(&csv_path)?)?;
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(&json_path, json + "\n")?;
    Ok((csv_path, json_path))
}

/// JSON schema of [`ExperimentReport`], shipped with the crate.
pub const REPORT_SCHEMA: &str = include_str!("../schemas/experiment_report.schema.json");
