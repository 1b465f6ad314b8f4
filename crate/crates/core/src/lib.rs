//! Simulation and drift estimation for time-inhomogeneous diffusions
//!
//! ```text
//! dX_t = α b(t) X_t dt + σ(t) dB_t
//! dY_t = α b(t) a(Y_t) dt + σ(t) dB_t,    a(x) = x + r(x)
//! ```
//!
//! with X₀ = Y₀ = 0 on a horizon [0, T), T finite or infinite. The crate
//! computes the maximum-likelihood estimator of α from discretized paths,
//! classifies the asymptotic regime of a model (Dickey–Fuller type, Cauchy,
//! normal) and checks the limit laws by seeded Monte Carlo.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod coeffs;
pub mod error;
pub mod estimate;
pub mod io;
pub mod limitlaws;
pub mod mc;
pub mod quad;
pub mod regime;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
