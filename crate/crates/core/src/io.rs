//! Binary file formats. All integers and floats are little-endian and all
//! arrays column-major.
//!
//! * Dense tensor: `STEN1`, `u8` order `N`, `N x u64` dims, then the values
//!   as `f64`.
//! * CP tensor: `SCPT1`, `u8` order `N`, `u64` rank `R`, `N x u64` dims, `R`
//!   weights, then each `I_n x R` factor.
//! * Sketch bundle: `SSKB1`, `u32` header length and a JSON [`BundleHeader`],
//!   `u32` copy count `D`, then per copy a `u32` length and a JSON family
//!   sidecar, a `u64` value count and the values.
//!
//! Vectors may also be given as plain text: numbers separated by commas or
//! whitespace.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::compression::{Codec, CodecCopy, CompressedProduct, Product};
use crate::error::{Result, SketchError};
use crate::hashing::{FamilySidecar, HashFamily};
use crate::sketch::{SketchKind, SketchTensor, SketchVec};
use crate::tensor::{CpTensor, DenseTensor};

pub const DENSE_MAGIC: &[u8; 5] = b"STEN1";
pub const CP_MAGIC: &[u8; 5] = b"SCPT1";
pub const BUNDLE_MAGIC: &[u8; 5] = b"SSKB1";

fn format_err(msg: impl Into<String>) -> SketchError {
    SketchError::Format(msg.into())
}

fn read_magic(r: &mut impl Read, magic: &[u8; 5]) -> Result<()> {
    let mut buf = [0u8; 5];
    r.read_exact(&mut buf)?;
    if &buf != magic {
        return Err(format_err(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&buf),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_len(r: &mut impl Read) -> Result<usize> {
    usize::try_from(read_u64(r)?).map_err(|_| format_err("length does not fit in memory"))
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    // Guard against absurd headers before allocating.
    if n > (1usize << 40) {
        return Err(format_err(format!("refusing to read {n} values")));
    }
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn write_f64s(w: &mut impl Write, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_dims(r: &mut impl Read, n: usize) -> Result<Vec<usize>> {
    let dims = (0..n).map(|_| read_len(r)).collect::<Result<Vec<_>>>()?;
    if dims.contains(&0) {
        return Err(format_err("zero dimension in header"));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format_err("dimension product overflows"))?;
    Ok(dims)
}

fn check_trailing(r: &mut impl Read) -> Result<()> {
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(format_err("trailing bytes after payload"));
    }
    Ok(())
}

fn order_byte(n: usize) -> Result<u8> {
    u8::try_from(n).map_err(|_| SketchError::invalid(format!("order {n} exceeds 255")))
}

pub fn write_dense(w: &mut impl Write, t: &DenseTensor) -> Result<()> {
    w.write_all(DENSE_MAGIC)?;
    w.write_all(&[order_byte(t.order())?])?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    write_f64s(w, t.data())
}

pub fn read_dense(r: &mut impl Read) -> Result<DenseTensor> {
    read_magic(r, DENSE_MAGIC)?;
    let n = read_u8(r)? as usize;
    if n == 0 {
        return Err(format_err("order 0 tensor"));
    }
    let dims = read_dims(r, n)?;
    let values = read_f64s(r, dims.iter().product())?;
    check_trailing(r)?;
    DenseTensor::new(dims, values)
}

pub fn write_cp(w: &mut impl Write, cp: &CpTensor) -> Result<()> {
    w.write_all(CP_MAGIC)?;
    w.write_all(&[order_byte(cp.order())?])?;
    w.write_all(&(cp.rank() as u64).to_le_bytes())?;
    for d in cp.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    write_f64s(w, cp.weights())?;
    for f in cp.factors() {
        write_f64s(w, f.as_slice())?;
    }
    Ok(())
}

pub fn read_cp(r: &mut impl Read) -> Result<CpTensor> {
    read_magic(r, CP_MAGIC)?;
    let n = read_u8(r)? as usize;
    if n == 0 {
        return Err(format_err("order 0 CP tensor"));
    }
    let rank = read_len(r)?;
    let dims = read_dims(r, n)?;
    let weights = read_f64s(r, rank)?;
    let factors = dims
        .iter()
        .map(|&d| {
            let len = d
                .checked_mul(rank)
                .ok_or_else(|| format_err("factor size overflows"))?;
            Ok(DMatrix::from_vec(d, rank, read_f64s(r, len)?))
        })
        .collect::<Result<Vec<_>>>()?;
    check_trailing(r)?;
    CpTensor::new(weights, factors)
}

/// What a sketch bundle holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "content", rename_all = "snake_case")]
pub enum BundleHeader {
    /// `D` sketches of one tensor. `shape` is the per-copy value shape
    /// (`[J~]`, `[J]` or the HCS tensor shape).
    Tensor { kind: SketchKind, shape: Vec<usize> },
    /// `D` sketches of a Kronecker product or contraction of shape `dims`.
    Product {
        codec: Codec,
        product: Product,
        dims: [usize; 4],
    },
}

/// A header plus per-copy families and values.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchBundle {
    pub header: BundleHeader,
    pub copies: Vec<CodecCopy>,
}

impl SketchBundle {
    pub fn from_vectors(sketches: &[SketchVec]) -> Result<Self> {
        let first = sketches
            .first()
            .ok_or_else(|| SketchError::invalid("bundle needs at least one sketch"))?;
        let copies = sketches
            .iter()
            .map(|s| CodecCopy {
                family: s.family().clone(),
                values: s.values().to_vec(),
            })
            .collect();
        Ok(SketchBundle {
            header: BundleHeader::Tensor {
                kind: first.kind(),
                shape: vec![first.len()],
            },
            copies,
        })
    }

    pub fn from_hcs(sketches: &[SketchTensor]) -> Result<Self> {
        let first = sketches
            .first()
            .ok_or_else(|| SketchError::invalid("bundle needs at least one sketch"))?;
        let copies = sketches
            .iter()
            .map(|s| CodecCopy {
                family: s.family().clone(),
                values: s.values().data().to_vec(),
            })
            .collect();
        Ok(SketchBundle {
            header: BundleHeader::Tensor {
                kind: SketchKind::Hcs,
                shape: first.values().shape().to_vec(),
            },
            copies,
        })
    }

    pub fn from_product(sk: &CompressedProduct) -> Self {
        SketchBundle {
            header: BundleHeader::Product {
                codec: sk.codec(),
                product: sk.product(),
                dims: sk.dims(),
            },
            copies: sk.copies().to_vec(),
        }
    }

    pub fn into_product(self) -> Result<CompressedProduct> {
        match self.header {
            BundleHeader::Product {
                codec,
                product,
                dims,
            } => CompressedProduct::from_parts(codec, product, dims, self.copies),
            BundleHeader::Tensor { .. } => {
                Err(format_err("bundle holds tensor sketches, not a product"))
            }
        }
    }
}

pub fn write_bundle(w: &mut impl Write, bundle: &SketchBundle) -> Result<()> {
    w.write_all(BUNDLE_MAGIC)?;
    let header = serde_json::to_vec(&bundle.header)?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&(bundle.copies.len() as u32).to_le_bytes())?;
    for c in &bundle.copies {
        let side = serde_json::to_vec(&c.family.to_sidecar())?;
        w.write_all(&(side.len() as u32).to_le_bytes())?;
        w.write_all(&side)?;
        w.write_all(&(c.values.len() as u64).to_le_bytes())?;
        write_f64s(w, &c.values)?;
    }
    Ok(())
}

fn read_json_block<T: serde::de::DeserializeOwned>(r: &mut impl Read) -> Result<T> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(serde_json::from_slice(&buf)?)
}

pub fn read_bundle(r: &mut impl Read) -> Result<SketchBundle> {
    read_magic(r, BUNDLE_MAGIC)?;
    let header: BundleHeader = read_json_block(r)?;
    let d = read_u32(r)? as usize;
    let copies = (0..d)
        .map(|_| {
            let side: FamilySidecar = read_json_block(r)?;
            let family = Arc::new(HashFamily::from_sidecar(&side)?);
            let n = read_len(r)?;
            Ok(CodecCopy {
                family,
                values: read_f64s(r, n)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    check_trailing(r)?;
    if let BundleHeader::Tensor { shape, .. } = &header {
        let len: usize = shape.iter().product();
        if copies.iter().any(|c| c.values.len() != len) {
            return Err(format_err("copy length disagrees with header shape"));
        }
    }
    Ok(SketchBundle { header, copies })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn load_dense(path: impl AsRef<Path>) -> Result<DenseTensor> {
    read_dense(&mut open(path.as_ref())?)
}

pub fn save_dense(path: impl AsRef<Path>, t: &DenseTensor) -> Result<()> {
    let mut w = create(path.as_ref())?;
    write_dense(&mut w, t)?;
    Ok(w.flush()?)
}

pub fn load_cp(path: impl AsRef<Path>) -> Result<CpTensor> {
    read_cp(&mut open(path.as_ref())?)
}

pub fn save_cp(path: impl AsRef<Path>, cp: &CpTensor) -> Result<()> {
    let mut w = create(path.as_ref())?;
    write_cp(&mut w, cp)?;
    Ok(w.flush()?)
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<SketchBundle> {
    read_bundle(&mut open(path.as_ref())?)
}

pub fn save_bundle(path: impl AsRef<Path>, bundle: &SketchBundle) -> Result<()> {
    let mut w = create(path.as_ref())?;
    write_bundle(&mut w, bundle)?;
    Ok(w.flush()?)
}

/// Reads a vector from a dense tensor file (any order, flattened) or from
/// text.
pub fn load_vector(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    open(path.as_ref())?.read_to_end(&mut bytes)?;
    if bytes.starts_with(DENSE_MAGIC) {
        return Ok(read_dense(&mut bytes.as_slice())?.into_data());
    }
    let text = String::from_utf8(bytes)
        .map_err(|_| format_err("vector file is neither STEN1 nor text"))?;
    parse_vector(&text)
}

pub fn parse_vector(text: &str) -> Result<Vec<f64>> {
    let values = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| format_err(format!("not a number: `{s}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(format_err("empty vector"));
    }
    Ok(values)
}
