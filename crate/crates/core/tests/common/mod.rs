//! Checks shared between the focused test targets and the acceptance gate.
//! Each returns a one-line summary on success and a diagnosis on failure.
#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord)]

pub mod gedf;
pub mod grad;
pub mod metrics;
pub mod physics;
