//! Learning-to-rank through doubly-stochastic matrices.
//!
//! The pipeline: a per-document feature map produces a nonnegative square
//! matrix for each query ([`param`]), an incomplete Sinkhorn normalization
//! turns it into a near-doubly-stochastic matrix with a recorded tape
//! ([`dsm`]), rank-linear objectives and their exact expectations are
//! evaluated on the marginals ([`objectives`]), and gradients flow back
//! through the normalization stack to the model weights ([`train`]). At
//! test time the marginal matrix is decoded into a single permutation by
//! bipartite matching on log-marginals ([`decode`]).
//!
//! [`data`] handles LETOR/SVMrank files and query resampling; [`oracle`]
//! holds the brute-force references the test suites check against.

pub mod data;
pub mod decode;
pub mod dsm;
pub mod matrix;
pub mod objectives;
pub mod oracle;
pub mod param;
pub mod train;

pub use matrix::SquareMatrix;
