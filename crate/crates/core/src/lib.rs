//! Unsupervised alignment of two embedding sets by an orthogonal map,
//! learned jointly with a correspondence between their rows.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aligner;
pub mod assignment;
pub mod data_io;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod preprocess;
pub mod procrustes;
pub mod qap;
pub mod refine;
pub mod retrieval;
pub mod scalar;
pub mod sinkhorn;

pub use error::{Error, ErrorClass, Result};
pub use scalar::Real;

pub type DenseMatrix = linalg::Matrix<f64>;
pub type OrthogonalMap = procrustes::Orthogonal<f64>;
pub type Plan = sinkhorn::TransportPlan<f64>;
pub type Embeddings = data_io::EmbeddingSet<f64>;
