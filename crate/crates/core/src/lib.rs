//! Fitting and analysis of data scaling laws for translation models.
//!
//! The central model is the two-regime power law
//! `L(D) = alpha * (1/D + C)^p`, where `D` is the training set size in
//! millions of sentence pairs. On top of it the crate provides
//!
//! - [`law`]: domain types and closed-form evaluators (with analytic gradients),
//! - [`fit`]: nonlinear least-squares estimation, including fits that share
//!   one exponent across several conditions,
//! - [`analyze`]: quantities derived from a fitted law (asymptote, regime
//!   transition, marginal value of data, data-equivalence, Monte Carlo
//!   exponent uncertainty),
//! - [`corpus`]: deterministic parallel-corpus noise injection, filtering and
//!   subset sampling,
//! - [`table`] and [`report`]: CSV observation ingestion, simulation and the
//!   JSON report format used by the `datalaw` command line tool.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analyze;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod fit;
pub mod law;
mod lm;
pub mod report;
pub mod table;

pub use error::{Error, Result};
pub use law::{JointLawParams, LinearFit, Metric, Observation, PowerLaw, TailLaw};
