//! Resilient static state estimation with untrusted sensors.
//!
//! A fixed state `x` in `R^n` is read by `m` sensors through known gains
//! `H` and independent Gaussian noise with variances `W`. Up to `q` of the
//! sensors are compromised and may report anything at all, and nobody says
//! which ones. This crate estimates `x` anyway.
//!
//! The core object is the inconsistency of a candidate state against a
//! measurement: the smallest weighted residual achievable after discarding
//! the worst `q` sensors. Sublevel sets of that function are finite unions
//! of ellipsoids, one per keep-subset. The flagship estimator searches for
//! the largest level whose sublevel set still fits inside a ball of radius
//! `delta` and returns that set's Chebyshev center, which makes its error
//! at most `delta` whenever the true state stays in the set.
//!
//! Module map: [`model`] holds sensor models, attack scenarios, and
//! measurement synthesis; [`inconsistency`] the subset fits and residues;
//! [`geometry`] the ellipsoid unions, Chebyshev centers, and radius
//! curves; [`estimators`] the level-search estimator with trimmed-mean,
//! least-squares, and LASSO baselines; [`rates`] the exponential decay
//! bounds and their adversarial certificates; [`harness`] Monte Carlo
//! sweeps and config-driven experiments. The `secure-estimation` binary
//! exposes all of it on the command line.

pub mod error;
pub mod estimators;
pub mod geometry;
pub mod harness;
pub mod inconsistency;
mod linalg;
pub mod model;
pub mod rates;

pub use error::{Error, Result};
