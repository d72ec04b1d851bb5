//! Tensor sketching toolkit: Count Sketch, Tensor Sketch, Higher-order
//! Count Sketch and Fast Count Sketch, sketched contraction estimators,
//! sketch-accelerated CP decomposition, and sketch-domain compression codecs.

pub mod bench;
pub mod compression;
pub mod cpd;
pub mod error;
pub mod estimators;
pub mod fft;
pub mod hashing;
pub mod io;
pub mod sketch;
pub mod tensor;

pub use error::{Result, SketchError};
pub use hashing::{derive_seed, FamilySidecar, HashFamily, HashPair};
pub use sketch::{SketchKind, SketchTensor, SketchVec};
pub use tensor::{CpTensor, DenseTensor};
