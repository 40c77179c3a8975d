//! Simulator and recovery pipelines for mixtures of sparse linear regressions.
//!
//! A hidden collection of `L` distinct `k`-sparse vectors in `R^n` sits behind
//! a query oracle: each query returns the inner product of the query vector
//! with one uniformly chosen hidden vector, plus optional Gaussian noise. The
//! modules here build the pieces needed to recover every hidden vector from
//! such queries, and a harness to run seeded experiments over them:
//!
//! - [`model`]: hidden signal sets, best-k approximations, recovery scoring
//! - [`oracle`]: the query oracle and analytic SNR accounting for query designs
//! - [`noiseless`]: exact recovery from geometric query rows in the noise-free case
//! - [`gridgmm`]: mean estimation for grid-mixtures of Gaussians (shared sigma)
//! - [`align`]: goodness tests and cross-query alignment used to label noisy batches
//! - [`cs`]: sign-matrix sensing systems, empirical RIP constants, basis pursuit
//! - [`pipeline`]: end-to-end noisy recovery for two and for general L
//! - [`harness`]: seeded multi-trial experiment runners with CSV output

pub mod align;
mod combi;
pub mod cs;
pub mod gridgmm;
pub mod harness;
pub mod model;
pub mod noiseless;
pub mod oracle;
pub mod pipeline;
