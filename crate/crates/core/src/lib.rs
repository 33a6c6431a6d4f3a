//! Transient-stability laboratory built around graph embedding dynamic
//! features (GEDFs).
//!
//! The crate covers the whole workflow: the base 39-bus case ([`case39`]),
//! topology perturbation ([`topogen`]), lossless power flow ([`powerflow`]),
//! classical-model time-domain simulation ([`simulator`]), GEDF extraction
//! ([`features`]), the contrastive encoder/classifier ([`learn`]) and the
//! evaluation metrics ([`eval`]). [`pipeline`] strings the stages together
//! the way the `gedf` command line tool runs them.
//!
//! Data-parallel loops (scenario sweeps, feature extraction, per-sample
//! convolution passes) go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and falls back to plain iteration otherwise.

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod case39;
pub mod error;
pub mod eval;
pub mod features;
pub mod grid;
pub mod learn;
pub mod par;
pub mod pipeline;
pub mod powerflow;
pub mod seed;
pub mod simulator;
pub mod topogen;

pub use error::{Error, Result};
pub use grid::{Branch, Bus, BusType, Generator, GridCase, NetworkMatrices};
