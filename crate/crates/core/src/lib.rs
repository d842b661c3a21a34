//! Weighted quadrature for unnormalized densities by mean-shift interacting
//! particles, together with the baselines and metrics used to evaluate it.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod embeddings;
pub mod error;
pub mod kernel;
pub mod metrics;
pub mod msip;
pub mod targets;

pub use embeddings::{estimate, EmbeddingEstimate, Estimator, InnerQuadrature};
pub use error::{Error, Result};
pub use kernel::{gram, GramMatrix, KernelSpec};
pub use targets::{make_benchmark, GmmTarget, LogDensity, TargetDensity};
