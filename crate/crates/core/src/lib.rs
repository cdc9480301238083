//! Analysis of stationary polynomial ODE systems `x' = f(x)`.
//!
//! The right-hand side is rewritten as `x' = A(x) x` with a polynomial
//! matrix `A(x)` drawn from a finite-dimensional family ([`factorization`]).
//! Point-wise spectra of `A(x)` over a sampled domain give stability
//! certificates ([`stability`]) and focus/center/node evidence
//! ([`classification`]); the same matrices drive the exponential-product
//! integrator in [`simulation`]. [`synthesis`] searches polynomial feedback
//! laws that make a domain stable or the origin a center.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classification;
pub mod domain;
pub mod error;
pub mod expm;
pub mod factorization;
pub mod optimize;
pub mod par;
pub mod poly;
pub mod simulation;
pub mod spectral;
pub mod stability;
pub mod synthesis;

pub use error::{Error, Result};
pub use poly::{parse_polynomial, parse_system, Degrees, Exponents, Monomial, Polynomial, VectorField};
