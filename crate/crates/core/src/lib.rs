//! Multilevel Monte Carlo for elliptic problems whose diffusion coefficient
//! is built from subordinated Gaussian random fields.
//!
//! The crate is organised bottom-up:
//!
//! * [`grf`] samples stationary Matérn fields on tensor grids (circulant
//!   embedding, with a dense Cholesky sampler as oracle).
//! * [`subordinator`] simulates Poisson and Gamma subordinator paths, exactly
//!   or on nested grids.
//! * [`coefficient`] assembles the cut jump coefficient and its Gaussian
//!   smoothed counterpart.
//! * [`fem`] solves the pathwise problem with P1 elements on uniform or
//!   jump-aligned meshes and measures discrete H¹ norms on a reference grid.
//! * [`estimators`] ties it together: single-level MC, MLMC and MLMC with
//!   control variates, level plans and RMSE studies.
//!
//! All randomness enters through explicit streams derived from a
//! [`rng::SeedSchedule`], so results are reproducible for any thread count.

// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coefficient;
pub mod error;
pub mod estimators;
pub mod fem;
pub mod grf;
pub mod rng;
pub mod subordinator;

pub use error::{Error, Result};
