//! Conserved kinetic exchange model of firm sizes.
//!
//! An economy of `N` firms repeatedly pools a fraction `1 - λ` of the
//! workforce of `n` interacting firms and redistributes the pool with shares
//! drawn uniformly from the unit simplex. The crate provides:
//!
//! - [`simplex`]: flat simplex sampling and the marginal law of the shares;
//! - [`dynamics`]: the coupled, reduced and GLV evolution maps plus the
//!   seeded run driver;
//! - [`analytics`]: closed-form steady-state oracles and empirical summaries
//!   (histograms, growth series, conditional dispersion, the constant `C`);
//! - [`statfit`]: exponential, Laplace, power-law and regression fits with
//!   Kolmogorov–Smirnov statistics;
//! - [`cli`]: experiment plans, sweeps, validation and serialization.

// `!(x > 0.0)` is used on purpose so that NaN lands in the error branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod cli;
pub mod dynamics;
mod error;
pub mod rng;
pub mod simplex;
pub mod statfit;

pub use error::{Error, Result};
