//! Command-line front end.
//!
//! Every subcommand accepts `--config <file.json>`; flags override keys of
//! that document. The seed falls back to `SKETCHTENSOR_SEED`, then 0.
//! Exit codes: 0 success, 2 invalid arguments or input, 3 NaN/Inf detected.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use sketchtensor::bench::{self, ExperimentSpec};
use sketchtensor::compression::{
    compress_contraction, compress_kron, decompress_contraction, decompress_kron,
    fcs_lens_for_ratio, hcs_len_for_ratio, reconstruct_kron, Codec, CodecConfig, CompressedProduct,
    Product,
};
use sketchtensor::cpd::{als, psnr, residual_norm, rtpm, rtpm_asym, AlsConfig, RtpmConfig};
use sketchtensor::estimators::{est_inner, Backend, EstimatorConfig, HashLens, Reduction};
use sketchtensor::io::{self, SketchBundle};
use sketchtensor::sketch::{self, SketchKind};
use sketchtensor::tensor::{self, CpTensor, DenseTensor};
use sketchtensor::{derive_seed, HashFamily, Result, SketchError};

const SEED_ENV: &str = "SKETCHTENSOR_SEED";
/// Largest tensor for which `estimate` also computes the exact value.
const ORACLE_LIMIT: usize = 1 << 24;

#[derive(Parser)]
#[command(name = "sketchtensor", version, about = "Tensor sketching toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sketch a dense or CP tensor into a bundle of D copies.
    Sketch(SketchArgs),
    /// Estimate T(u,u,u), T(I,u,u) or <T, S> from sketches.
    Estimate(EstimateArgs),
    /// Robust tensor power method.
    CpdRtpm(CpdArgs),
    /// Alternating least squares.
    CpdAls(CpdArgs),
    /// Compress a Kronecker product A ⊗ B.
    CompressKron(CompressArgs),
    /// Compress the contraction of mode 3 of A with mode 1 of B.
    CompressContraction(CompressArgs),
    /// Read entries back from a compressed product bundle.
    Decompress(DecompressArgs),
    /// Run an experiment grid and write CSV + JSON.
    Bench(BenchArgs),
    /// Generate synthetic tensors.
    Gen(GenArgs),
}

#[derive(Args)]
struct Common {
    /// JSON document with default values for this subcommand.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (falls back to SKETCHTENSOR_SEED, then 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the metrics JSON to this file.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct SketchArgs {
    #[command(flatten)]
    common: Common,
    /// Dense tensor file (STEN1).
    #[arg(long, conflicts_with = "cp")]
    input: Option<PathBuf>,
    /// CP tensor file (SCPT1); uses the FFT path for TS and FCS.
    #[arg(long)]
    cp: Option<PathBuf>,
    #[arg(long)]
    kind: Option<String>,
    /// Hash length per mode; comma-separated for per-mode lengths. For `cs`
    /// this is the length of the single long pair.
    #[arg(long, value_delimiter = ',')]
    hash_len: Option<Vec<usize>>,
    /// Number of independent copies D.
    #[arg(long)]
    copies: Option<usize>,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, ValueEnum, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum Query {
    Uuu,
    Iuu,
    Inner,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    tensor: PathBuf,
    /// Vector `u` (STEN1 or text) for `uuu` and `iuu`.
    #[arg(long)]
    vector: Option<PathBuf>,
    /// Second tensor for `inner`.
    #[arg(long)]
    other: Option<PathBuf>,
    #[arg(long, value_enum)]
    query: Option<Query>,
    #[arg(long)]
    backend: Option<String>,
    #[arg(long, value_delimiter = ',')]
    hash_len: Option<Vec<usize>>,
    #[arg(long)]
    copies: Option<usize>,
}

#[derive(Args)]
struct CpdArgs {
    #[command(flatten)]
    common: Common,
    /// Dense 3rd-order tensor file.
    #[arg(long)]
    input: PathBuf,
    /// CP output file (SCPT1).
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    backend: Option<String>,
    #[arg(long, value_delimiter = ',')]
    hash_len: Option<Vec<usize>>,
    #[arg(long)]
    copies: Option<usize>,
    /// ALS sweeps.
    #[arg(long)]
    max_iters: Option<usize>,
    /// ALS stopping tolerance on the residual change.
    #[arg(long)]
    tol: Option<f64>,
    /// RTPM restarts per component.
    #[arg(long)]
    num_inits: Option<usize>,
    /// RTPM power iterations.
    #[arg(long)]
    num_iters: Option<usize>,
    /// RTPM: use the alternating asymmetric variant.
    #[arg(long)]
    asymmetric: bool,
}

#[derive(Args)]
struct CompressArgs {
    #[command(flatten)]
    common: Common,
    /// First operand (STEN1): a matrix for Kronecker, (I1, I2, L) for contraction.
    #[arg(long)]
    a: PathBuf,
    /// Second operand (STEN1): a matrix for Kronecker, (L, I3, I4) for contraction.
    #[arg(long)]
    b: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long)]
    codec: Option<String>,
    #[arg(long, value_delimiter = ',')]
    hash_len: Option<Vec<usize>>,
    /// Target compression ratio; overrides `hash_len`.
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    copies: Option<usize>,
}

#[derive(Args)]
struct DecompressArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Entry to read: `row,col` for Kronecker, `i1,i2,i3,i4` for contraction.
    /// Repeatable.
    #[arg(long = "index", value_delimiter = ',', num_args = 1, action = clap::ArgAction::Append)]
    index: Vec<String>,
    /// Reconstruct every entry.
    #[arg(long)]
    all: bool,
    /// With `--all`: write the reconstruction (STEN1).
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Exact product (STEN1) to report the relative error against.
    #[arg(long)]
    oracle: Option<PathBuf>,
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Experiment spec JSON.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    kind: Option<String>,
    #[arg(long, value_delimiter = ',')]
    backends: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    hash_lens: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    sketch_counts: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    sigmas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
    /// Output prefix for `<prefix>.csv` and `<prefix>.json`.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Symmetric,
    Asymmetric,
    Uniform,
}

#[derive(Args)]
struct GenArgs {
    #[arg(value_enum)]
    kind: GenKind,
    #[arg(long, default_value_t = 30)]
    dim: usize,
    #[arg(long, default_value_t = 5)]
    rank: usize,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Uniform: tensor shape.
    #[arg(long, value_delimiter = ',')]
    shape: Option<Vec<usize>>,
    #[arg(long, default_value_t = -5.0, allow_hyphen_values = true)]
    low: f64,
    #[arg(long, default_value_t = 5.0, allow_hyphen_values = true)]
    high: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short)]
    output: PathBuf,
}

fn invalid(msg: impl Into<String>) -> SketchError {
    SketchError::InvalidArgument(msg.into())
}

fn env_seed() -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| invalid(format!("{SEED_ENV} is not an unsigned integer: `{s}`"))),
        Err(_) => Ok(0),
    }
}

/// Config file keys, overridden by flags that were given.
fn merged(config: Option<&Path>, flags: Vec<(&str, Option<Value>)>) -> Result<Map<String, Value>> {
    let mut map = match config {
        Some(p) => match serde_json::from_str::<Value>(&std::fs::read_to_string(p)?)? {
            Value::Object(m) => m,
            _ => return Err(invalid("config must be a JSON object")),
        },
        None => Map::new(),
    };
    for (k, v) in flags {
        if let Some(v) = v {
            map.insert(k.to_string(), v);
        }
    }
    Ok(map)
}

fn with_seed(mut map: Map<String, Value>, seed: Option<u64>) -> Result<Map<String, Value>> {
    if let Some(s) = seed {
        map.insert("seed".into(), json!(s));
    } else if !map.contains_key("seed") {
        map.insert("seed".into(), json!(env_seed()?));
    }
    Ok(map)
}

fn decode<T: DeserializeOwned>(map: Map<String, Value>) -> Result<T> {
    serde_json::from_value(Value::Object(map)).map_err(|e| invalid(format!("config: {e}")))
}

fn hash_len_value(v: Option<Vec<usize>>) -> Option<Value> {
    v.map(|l| if l.len() == 1 { json!(l[0]) } else { json!(l) })
}

fn emit(metrics: &Value, path: Option<&Path>) -> Result<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(metrics)?;
    if let Err(e) = writeln!(std::io::stdout().lock(), "{text}") {
        // A closed pipe (e.g. `| head`) is not a failure.
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            return Err(e.into());
        }
    }
    if let Some(p) = path {
        std::fs::write(p, text + "\n")?;
    }
    Ok(())
}

fn check_finite(t: &DenseTensor, what: &str) -> Result<()> {
    if t.has_non_finite() {
        return Err(SketchError::Numeric(format!("{what} contains NaN or Inf")));
    }
    Ok(())
}

fn check_values(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(SketchError::Numeric(format!("{what} contains NaN or Inf")));
    }
    Ok(())
}

fn default_hash_len() -> HashLens {
    HashLens::Uniform(300)
}
fn default_copies() -> usize {
    10
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SketchConfig {
    kind: SketchKind,
    #[serde(default = "default_hash_len")]
    hash_len: HashLens,
    #[serde(default = "default_copies")]
    copies: usize,
    seed: u64,
}

fn run_sketch(a: SketchArgs) -> Result<Value> {
    let map = merged(
        a.common.config.as_deref(),
        vec![
            ("kind", a.kind.map(Value::from)),
            ("hash_len", hash_len_value(a.hash_len)),
            ("copies", a.copies.map(Value::from)),
        ],
    )?;
    let cfg: SketchConfig = decode(with_seed(map, a.common.seed)?)?;
    let input = match (&a.input, &a.cp) {
        (Some(p), None) => Input::Dense(io::load_dense(p)?),
        (None, Some(p)) => Input::Cp(io::load_cp(p)?),
        _ => return Err(invalid("give exactly one of --input and --cp")),
    };
    let dims = input.shape();
    let est = EstimatorConfig {
        hash_lens: cfg.hash_len.clone(),
        sketch_count: cfg.copies,
        seed: cfg.seed,
        reduction: Reduction::Median,
    };
    est.validate()?;
    let start = Instant::now();
    let bundle = match cfg.kind {
        SketchKind::Cs => {
            let long = match &cfg.hash_len {
                HashLens::Uniform(j) => *j,
                HashLens::PerMode(_) => return Err(invalid("cs takes a single hash length")),
            };
            let dense = input.dense();
            let total = dense.len();
            let sketches = (0..cfg.copies as u64)
                .map(|d| {
                    let fam = Arc::new(HashFamily::new(
                        &[total],
                        &[long],
                        derive_seed(cfg.seed, d),
                    )?);
                    let values = sketch::count_sketch(dense.data(), fam.pair(0))?;
                    sketchtensor::SketchVec::new(values, fam, SketchKind::Cs)
                })
                .collect::<Result<Vec<_>>>()?;
            SketchBundle::from_vectors(&sketches)?
        }
        SketchKind::Hcs => {
            let sketches = est
                .families(&dims)?
                .iter()
                .map(|f| match &input {
                    Input::Dense(t) => sketch::hcs_dense(t, f),
                    Input::Cp(cp) => sketch::hcs_cp(cp, f),
                })
                .collect::<Result<Vec<_>>>()?;
            SketchBundle::from_hcs(&sketches)?
        }
        kind => {
            let sketches = est
                .families(&dims)?
                .iter()
                .map(|f| match (&input, kind) {
                    (Input::Dense(t), SketchKind::Ts) => sketch::ts_dense(t, f),
                    (Input::Dense(t), _) => sketch::fcs_dense(t, f),
                    (Input::Cp(cp), SketchKind::Ts) => sketch::ts_cp(cp, f),
                    (Input::Cp(cp), _) => sketch::fcs_cp(cp, f),
                })
                .collect::<Result<Vec<_>>>()?;
            SketchBundle::from_vectors(&sketches)?
        }
    };
    let elapsed = start.elapsed().as_secs_f64();
    for c in &bundle.copies {
        check_values(&c.values, "sketch")?;
    }
    io::save_bundle(&a.output, &bundle)?;
    let len = bundle.copies[0].values.len();
    let hash_memory: usize = bundle.copies.iter().map(|c| c.family.memory_bytes()).sum();
    Ok(json!({
        "kind": cfg.kind,
        "copies": cfg.copies,
        "sketch_len": len,
        "compression_ratio": dims.iter().product::<usize>() as f64 / len as f64,
        "hash_memory_bytes": hash_memory,
        "sketch_s": elapsed,
        "output": a.output,
    }))
}

enum Input {
    Dense(DenseTensor),
    Cp(CpTensor),
}

impl Input {
    fn shape(&self) -> Vec<usize> {
        match self {
            Input::Dense(t) => t.shape().to_vec(),
            Input::Cp(cp) => cp.shape(),
        }
    }

    fn dense(&self) -> DenseTensor {
        match self {
            Input::Dense(t) => t.clone(),
            Input::Cp(cp) => cp.densify(),
        }
    }
}

fn default_backend() -> Backend {
    Backend::Fcs
}
fn default_query() -> Query {
    Query::Uuu
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EstimateConfig {
    #[serde(default = "default_query")]
    query: Query,
    #[serde(default = "default_backend")]
    backend: Backend,
    #[serde(default = "default_hash_len")]
    hash_len: HashLens,
    #[serde(default = "default_copies")]
    copies: usize,
    seed: u64,
}

fn run_estimate(a: EstimateArgs) -> Result<Value> {
    let map = merged(
        a.common.config.as_deref(),
        vec![
            (
                "query",
                a.query
                    .map(|q| serde_json::to_value(q).expect("enum serializes")),
            ),
            ("backend", a.backend.map(Value::from)),
            ("hash_len", hash_len_value(a.hash_len)),
            ("copies", a.copies.map(Value::from)),
        ],
    )?;
    let cfg: EstimateConfig = decode(with_seed(map, a.common.seed)?)?;
    let est = EstimatorConfig {
        hash_lens: cfg.hash_len,
        sketch_count: cfg.copies,
        seed: cfg.seed,
        reduction: Reduction::Median,
    };
    let t = io::load_dense(&a.tensor)?;
    check_finite(&t, "tensor")?;
    let small = t.len() <= ORACLE_LIMIT;
    let start = Instant::now();
    let (estimate, exact): (Value, Option<Value>) = match cfg.query {
        Query::Inner => {
            let other = io::load_dense(
                a.other
                    .as_ref()
                    .ok_or_else(|| invalid("`inner` needs --other"))?,
            )?;
            check_finite(&other, "second tensor")?;
            let v = est_inner(&t, &other, &est)?;
            let exact = small.then(|| tensor::inner(&t, &other)).transpose()?;
            (json!(v), exact.map(Value::from))
        }
        q => {
            let u = io::load_vector(
                a.vector
                    .as_ref()
                    .ok_or_else(|| invalid("this query needs --vector"))?,
            )?;
            check_values(&u, "vector")?;
            let eng = cfg.backend.build(&t, &est)?;
            if q == Query::Uuu {
                let v = eng.abc(&u, &u, &u)?;
                let exact = small.then(|| tensor::contract_uuu(&t, &u)).transpose()?;
                (json!(v), exact.map(Value::from))
            } else {
                let v = eng.free(0, &u, &u)?;
                let exact = small.then(|| tensor::contract_iuu(&t, &u)).transpose()?;
                (json!(v), exact.map(Value::from))
            }
        }
    };
    let elapsed = start.elapsed().as_secs_f64();
    let flat = |v: &Value| -> Vec<f64> {
        match v {
            Value::Array(a) => a.iter().filter_map(Value::as_f64).collect(),
            v => v.as_f64().into_iter().collect(),
        }
    };
    check_values(&flat(&estimate), "estimate")?;
    let mut out = json!({
        "query": cfg.query,
        "backend": cfg.backend,
        "estimate": estimate,
        "elapsed_s": elapsed,
    });
    if let Some(ex) = exact {
        let (e, x) = (flat(&estimate), flat(&ex));
        let err: f64 = e
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = x.iter().map(|b| b * b).sum::<f64>().sqrt();
        out["exact"] = ex;
        out["abs_error"] = json!(err);
        out["relative_error"] = if norm > 0.0 {
            json!(err / norm)
        } else {
            Value::Null
        };
    }
    Ok(out)
}

fn default_max_iters() -> usize {
    50
}
fn default_tol() -> f64 {
    1e-8
}
fn default_num_inits() -> usize {
    15
}
fn default_num_iters() -> usize {
    20
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CpdConfig {
    rank: usize,
    #[serde(default = "default_backend")]
    backend: Backend,
    #[serde(default = "default_hash_len")]
    hash_len: HashLens,
    #[serde(default = "default_copies")]
    copies: usize,
    seed: u64,
    #[serde(default = "default_max_iters")]
    max_iters: usize,
    #[serde(default = "default_tol")]
    tol: f64,
    #[serde(default = "default_num_inits")]
    num_inits: usize,
    #[serde(default = "default_num_iters")]
    num_iters: usize,
    #[serde(default)]
    asymmetric: bool,
}

fn run_cpd(a: CpdArgs, use_als: bool) -> Result<Value> {
    let map = merged(
        a.common.config.as_deref(),
        vec![
            ("rank", a.rank.map(Value::from)),
            ("backend", a.backend.map(Value::from)),
            ("hash_len", hash_len_value(a.hash_len)),
            ("copies", a.copies.map(Value::from)),
            ("max_iters", a.max_iters.map(Value::from)),
            ("tol", a.tol.map(Value::from)),
            ("num_inits", a.num_inits.map(Value::from)),
            ("num_iters", a.num_iters.map(Value::from)),
            ("asymmetric", a.asymmetric.then_some(Value::from(true))),
        ],
    )?;
    let cfg: CpdConfig = decode(with_seed(map, a.common.seed)?)?;
    let t = io::load_dense(&a.input)?;
    check_finite(&t, "tensor")?;
    // Hashes and initial vectors draw from separate streams of one seed.
    let est = EstimatorConfig {
        hash_lens: cfg.hash_len,
        sketch_count: cfg.copies,
        seed: derive_seed(cfg.seed, 2),
        reduction: Reduction::Median,
    };
    let init_seed = derive_seed(cfg.seed, 3);
    let (cp, timings, extra) = if use_als {
        let mut c = AlsConfig::new(cfg.rank, cfg.backend, est, init_seed);
        c.max_iters = cfg.max_iters;
        c.tol = cfg.tol;
        let r = als(&t, &c)?;
        (r.cp, r.timings, json!({ "sweeps": r.sweeps }))
    } else {
        let mut c = RtpmConfig::new(cfg.rank, cfg.backend, est, init_seed);
        c.num_inits = cfg.num_inits;
        c.num_iters = cfg.num_iters;
        let r = if cfg.asymmetric {
            rtpm_asym(&t, &c)?
        } else {
            rtpm(&t, &c)?
        };
        (r.cp, r.timings, json!({ "eigenvalues": r.eigenvalues }))
    };
    check_values(cp.weights(), "CP weights")?;
    for f in cp.factors() {
        check_values(f.as_slice(), "CP factors")?;
    }
    let residual = residual_norm(&t, &cp)?;
    let peak = psnr(&t, &cp.densify())?;
    if let Some(out) = &a.output {
        io::save_cp(out, &cp)?;
    }
    let mut m = json!({
        "algorithm": if use_als { "als" } else if cfg.asymmetric { "rtpm-asym" } else { "rtpm" },
        "backend": cfg.backend,
        "rank": cfg.rank,
        "residual": residual,
        "psnr_db": peak,
        "sketch_build_s": timings.sketch_build_s,
        "iterations_s": timings.iterations_s,
    });
    if let (Value::Object(m), Value::Object(e)) = (&mut m, extra) {
        m.extend(e);
    }
    Ok(m)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CompressConfig {
    #[serde(default = "default_codec")]
    codec: Codec,
    #[serde(default = "default_compress_len")]
    hash_len: HashLens,
    #[serde(default)]
    ratio: Option<f64>,
    #[serde(default = "default_copies")]
    copies: usize,
    seed: u64,
}

fn default_codec() -> Codec {
    Codec::Fcs
}
fn default_compress_len() -> HashLens {
    HashLens::Uniform(100)
}

fn as_matrix(t: &DenseTensor) -> Result<DMatrix<f64>> {
    match t.shape() {
        &[r, c] => Ok(DMatrix::from_column_slice(r, c, t.data())),
        s => Err(SketchError::ShapeMismatch(format!(
            "expected a matrix, got shape {s:?}"
        ))),
    }
}

fn run_compress(a: CompressArgs, kron_kind: bool) -> Result<Value> {
    let map = merged(
        a.common.config.as_deref(),
        vec![
            ("codec", a.codec.map(Value::from)),
            ("hash_len", hash_len_value(a.hash_len)),
            ("ratio", a.ratio.map(Value::from)),
            ("copies", a.copies.map(Value::from)),
        ],
    )?;
    let cfg: CompressConfig = decode(with_seed(map, a.common.seed)?)?;
    let (ta, tb) = (io::load_dense(&a.a)?, io::load_dense(&a.b)?);
    check_finite(&ta, "first operand")?;
    check_finite(&tb, "second operand")?;
    let dims = match (kron_kind, ta.shape(), tb.shape()) {
        (true, &[i1, i2], &[i3, i4]) => [i1, i2, i3, i4],
        (false, &[i1, i2, _], &[_, i3, i4]) => [i1, i2, i3, i4],
        (_, sa, sb) => {
            return Err(SketchError::ShapeMismatch(format!(
                "operand shapes {sa:?} and {sb:?}"
            )))
        }
    };
    let hash_lens = match (cfg.ratio, cfg.codec) {
        (None, _) => cfg.hash_len,
        (Some(r), Codec::Hcs) => HashLens::Uniform(hcs_len_for_ratio(&dims, r)?),
        (Some(r), _) => HashLens::PerMode(fcs_lens_for_ratio(&dims, r)?),
    };
    let codec_cfg = CodecConfig {
        codec: cfg.codec,
        hash_lens,
        sketch_count: cfg.copies,
        seed: cfg.seed,
    };
    let start = Instant::now();
    let sk = if kron_kind {
        compress_kron(&as_matrix(&ta)?, &as_matrix(&tb)?, &codec_cfg)?
    } else {
        compress_contraction(&ta, &tb, &codec_cfg)?
    };
    let elapsed = start.elapsed().as_secs_f64();
    for c in sk.copies() {
        check_values(&c.values, "sketch")?;
    }
    io::save_bundle(&a.output, &SketchBundle::from_product(&sk))?;
    Ok(json!({
        "codec": sk.codec(),
        "product": sk.product(),
        "dims": sk.dims(),
        "copies": sk.copies().len(),
        "sketch_len": sk.sketch_len(),
        "compression_ratio": sk.compression_ratio(),
        "hash_memory_bytes": sk.hash_memory(),
        "compress_s": elapsed,
        "output": a.output,
    }))
}

fn full_reconstruction(sk: &CompressedProduct) -> Result<DenseTensor> {
    match sk.product() {
        Product::Kron => {
            let m = reconstruct_kron(sk)?;
            DenseTensor::new(vec![m.nrows(), m.ncols()], m.as_slice().to_vec())
        }
        Product::Contraction { .. } => sk.reconstruct(),
    }
}

fn run_decompress(a: DecompressArgs) -> Result<Value> {
    let sk = io::load_bundle(&a.bundle)?.into_product()?;
    let mut out = json!({ "codec": sk.codec(), "product": sk.product() });
    let start = Instant::now();
    if !a.index.is_empty() {
        let flat = a
            .index
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| invalid(format!("bad index `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let width = if sk.product() == Product::Kron { 2 } else { 4 };
        if flat.len() % width != 0 {
            return Err(invalid(format!("indices come in groups of {width}")));
        }
        let values = flat
            .chunks(width)
            .map(|c| match *c {
                [r, col] => decompress_kron(&sk, r, col),
                [i1, i2, i3, i4] => decompress_contraction(&sk, i1, i2, i3, i4),
                _ => unreachable!("chunk width checked"),
            })
            .collect::<Result<Vec<_>>>()?;
        check_values(&values, "decompressed values")?;
        out["indices"] = json!(flat.chunks(width).collect::<Vec<_>>());
        out["values"] = json!(values);
    }
    if a.all {
        let rec = full_reconstruction(&sk)?;
        check_finite(&rec, "reconstruction")?;
        out["decompress_s"] = json!(start.elapsed().as_secs_f64());
        if let Some(p) = &a.oracle {
            let truth = io::load_dense(p)?;
            if truth.shape() != rec.shape() {
                return Err(SketchError::ShapeMismatch(format!(
                    "oracle shape {:?} vs reconstruction {:?}",
                    truth.shape(),
                    rec.shape()
                )));
            }
            let err = rec.sub(&truth)?.frobenius_norm();
            let norm = truth.frobenius_norm();
            out["relative_error"] = json!(if norm > 0.0 { err / norm } else { err });
        }
        if let Some(p) = &a.output {
            io::save_dense(p, &rec)?;
        }
    } else {
        if a.index.is_empty() {
            return Err(invalid("give --index or --all"));
        }
        if a.oracle.is_some() || a.output.is_some() {
            return Err(invalid("--oracle and --output need --all"));
        }
        out["decompress_s"] = json!(start.elapsed().as_secs_f64());
    }
    Ok(out)
}

fn run_bench(a: BenchArgs) -> Result<Value> {
    let map = merged(
        a.spec.as_deref(),
        vec![
            ("kind", a.kind.map(Value::from)),
            ("backends", a.backends.map(|v| json!(v))),
            ("hash_lens", a.hash_lens.map(|v| json!(v))),
            ("ratios", a.ratios.map(|v| json!(v))),
            ("sketch_counts", a.sketch_counts.map(|v| json!(v))),
            ("sigmas", a.sigmas.map(|v| json!(v))),
            ("dim", a.dim.map(Value::from)),
            ("rank", a.rank.map(Value::from)),
            ("trials", a.trials.map(Value::from)),
            ("repetitions", a.repetitions.map(Value::from)),
            ("output", a.output.map(|p| json!(p))),
        ],
    )?;
    let mut map = map;
    if let Some(s) = a.seeds {
        map.insert("seeds".into(), json!(s));
    } else if !map.contains_key("seeds") {
        map.insert("seeds".into(), json!([env_seed()?]));
    }
    let spec: ExperimentSpec = decode(map)?;
    let report = bench::run_experiment(&spec, a.jobs)?;
    let mut out = json!({ "experiment": spec.kind.name(), "rows": report.rows.len() });
    match &spec.output {
        Some(prefix) => {
            let (csv, json_path) = bench::write_report(&report, prefix)?;
            out["csv"] = json!(csv);
            out["json"] = json!(json_path);
        }
        None => bench::write_csv(&report.rows, std::io::stderr())?,
    }
    Ok(out)
}

fn run_gen(a: GenArgs) -> Result<Value> {
    let seed = match a.seed {
        Some(s) => s,
        None => env_seed()?,
    };
    let t = match a.kind {
        GenKind::Symmetric => bench::gen_synthetic_symmetric(a.dim, a.rank, a.sigma, seed)?,
        GenKind::Asymmetric => bench::gen_synthetic_asymmetric(a.dim, a.rank, a.sigma, seed)?,
        GenKind::Uniform => {
            let shape = a.shape.ok_or_else(|| invalid("uniform needs --shape"))?;
            bench::gen_uniform(&shape, a.low, a.high, seed)?
        }
    };
    io::save_dense(&a.output, &t)?;
    Ok(json!({ "shape": t.shape(), "seed": seed, "norm": t.frobenius_norm(), "output": a.output }))
}

fn run(cli: Cli) -> Result<()> {
    let (metrics, path) = match cli.command {
        Command::Sketch(a) => {
            let p = a.common.metrics.clone();
            (run_sketch(a)?, p)
        }
        Command::Estimate(a) => {
            let p = a.common.metrics.clone();
            (run_estimate(a)?, p)
        }
        Command::CpdRtpm(a) => {
            let p = a.common.metrics.clone();
            (run_cpd(a, false)?, p)
        }
        Command::CpdAls(a) => {
            let p = a.common.metrics.clone();
            (run_cpd(a, true)?, p)
        }
        Command::CompressKron(a) => {
            let p = a.common.metrics.clone();
            (run_compress(a, true)?, p)
        }
        Command::CompressContraction(a) => {
            let p = a.common.metrics.clone();
            (run_compress(a, false)?, p)
        }
        Command::Decompress(a) => {
            let p = a.metrics.clone();
            (run_decompress(a)?, p)
        }
        Command::Bench(a) => (run_bench(a)?, None),
        Command::Gen(a) => (run_gen(a)?, None),
    };
    emit(&metrics, path.as_deref())
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
