//! Numerical toolkit for integral input-output-to-state stability (iIOSS):
//! simulate nonlinear systems with outputs, check and falsify trajectory
//! bounds, verify Lyapunov certificates, run the scalar comparison
//! principle, and estimate the explicit value-function construction.
//!
//! Everything is desk scale and deterministic: fixed-step integration,
//! grid-certified comparison functions, and seeded sampling, so that
//! certificate reports are reproducible byte for byte.

// `!(x > 0.0)` is used on purpose: unlike `x <= 0.0` it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmarks;
pub mod bounds;
pub mod compare;
pub mod dsl;
pub mod error;
pub mod funclib;
pub mod lyap;
pub mod report;
pub mod sampling;
pub mod sim;
pub mod valfun;

pub use error::{Error, Result};
pub use report::{CertificateReport, ComparisonReport, Tolerances, Verdict, Witness};

/// Default absolute violation tolerance, before the integration allowance.
pub const DEFAULT_ABS_TOL: f64 = 1e-6;
