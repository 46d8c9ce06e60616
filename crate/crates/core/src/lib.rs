//! Model order reduction for the linear SDE satisfied by truncated path
//! signatures of a time-extended Brownian motion.

pub mod balanced;
pub mod error;
pub mod gramians;
pub mod io;
pub mod linalg;
pub mod market;
pub mod pricing;
pub mod sparse;
pub mod system;
pub mod tensor;
pub mod words;

pub use error::{Error, PriceBound, Result};
pub use sparse::SparseMatrix;
pub use system::{build_vector_field_matrices, ito_drift, LinearSde, NoiseCovariance, SignatureSde};
pub use tensor::{chen_concat, path_signature_stream, segment_exponential, PathSample, SignatureWalker, TruncatedTensor};
pub use words::{dim_truncated, shuffle, BasisOrder, LinearFunctional, Word};
