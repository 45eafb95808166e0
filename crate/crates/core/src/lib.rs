//! Supervised-learning bang-bang control of underactuated dynamical systems.
//!
//! A short-horizon training rule labels sampled states with one of two
//! control values, and a locally weighted classifier turns those labels into
//! a state-feedback policy. The crate bundles the benchmark models, a
//! fixed-step integrator with event detection, classical baselines, and the
//! scenario runner used to reproduce the benchmark experiments.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod classify;
pub mod control;
pub mod cycle;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod integrate;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
