//! Zero-shot kernel learning.
//!
//! Learns a projection matrix `W` that carries image-style feature vectors
//! into a class-attribute space, by aligning Polynomial / Gaussian /
//! Cauchy kernel matrices with a polarization label kernel. Unseen classes
//! are then recognized by maximizing the kernel score between a projected
//! sample and candidate attribute vectors. Fitting both projection
//! directions (`W^T x` against `y` and `x` against `W y`) softly pushes
//! the columns of `W` toward mutual orthogonality, which the incoherence
//! diagnostic `||W_hat^T W_hat - I||_F^2` makes visible.
//!
//! Modules follow the pipeline: [`data`] (load / synthesize / preprocess /
//! split), [`kernels`] (values and gradients w.r.t. `W`), [`objective`]
//! (label kernel, alignment, per-sample SGD loss), [`optimizer`] (RMSprop
//! minibatch training), [`eval`] (classification and the standard /
//! generalized protocols), [`modelselect`] (grid-search CV) and [`cli`].
//!
//! Training, grid search and batch classification fan out over rayon when
//! the default `parallel` feature is on; reductions always fold results in
//! a fixed order, so any thread count reproduces the single-threaded
//! output bit-for-bit.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod kernels;
pub mod modelselect;
pub mod objective;
pub mod optimizer;
pub(crate) mod parallel;

pub use error::{Error, Result};
