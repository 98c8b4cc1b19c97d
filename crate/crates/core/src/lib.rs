//! Learned sparse retrieval.
//!
//! Trains a term-importance encoder whose outputs are vocabulary-sized,
//! mostly-zero weight vectors, indexes the document vectors in an inverted
//! index and serves exact top-k retrieval over it. Training uses in-batch
//! negatives together with an ℓ1 or FLOPS sparsity penalty whose weight is
//! ramped up quadratically.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which is what training uses.

pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod index;
pub mod inspect;
pub mod kernels;
pub mod objective;
pub mod repcache;
pub mod retrieval;
pub mod scalar;
pub mod sparse;
pub mod sweep;
pub mod synth;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix32 = kernels::Matrix<f32>;
pub type SparseRep32 = sparse::SparseRep<f32>;
pub type EncoderParams32 = encoder::EncoderParams<f32>;
pub type Matrix64 = kernels::Matrix<f64>;
pub type SparseRep64 = sparse::SparseRep<f64>;
pub type EncoderParams64 = encoder::EncoderParams<f64>;
