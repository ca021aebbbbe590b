#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::manual_is_multiple_of,
    clippy::type_complexity
)]

//! Bayesian scenario analysis for dynamic multivariate models with a linear or
//! sum-of-trees conditional mean.
//!
//! Estimation runs a Gibbs sampler over the conditional-equation form of the
//! model. Forecasts under restrictions on observables and structural shocks
//! are drawn with particle Gibbs with ancestor sampling, and generalized
//! impulse responses are differences of such forecasts. A closed-form linear
//! Gaussian backend serves as an oracle for all of it.

pub mod bart;
pub mod covariance;
pub mod data;
pub mod error;
pub mod gibbs;
pub mod girf;
pub mod linalg;
pub mod linear;
pub mod model;
pub mod oracle;
pub mod pgas;
pub mod restrictions;
pub mod sampling;
pub mod verify;

pub use error::{Error, Result};
