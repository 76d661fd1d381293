//! Bayesian-incentive-compatible spectral exploration for linear bandits on
//! the Euclidean unit ball.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: unit vectors, the Gram-matrix spectral cache, projections and
//!   the rank-one eigenvalue checks used by the exploration loop.
//! - [`priors`]: prior families, samplers, canonical rotation and
//!   Monte-Carlo estimation of the non-degeneracy constants.
//! - [`posterior`]: weighted particle clouds, signal likelihoods and the
//!   `exploit` map (normalised conditional mean with a fallback).
//! - [`tilt`]: the zero-mean tilt function, realised by a bounded simplex.
//! - [`bandit_env`]: the ground-truth simulator.
//! - [`bic_explore`]: constants, the initial-exploration and exponential-growth
//!   subroutines, and the outer driver producing a spectral certificate.
//! - [`harness`]: configuration, traces, the BIC auditor, Monte-Carlo lemma
//!   verifiers and the counterexample scenarios behind the `bicx` CLI.

pub mod bandit_env;
pub mod bic_explore;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod posterior;
pub mod priors;
pub mod rng;
pub mod stats;
pub mod tilt;

pub use error::{Error, Result};
