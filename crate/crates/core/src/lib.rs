//! Scale quantities, classifiers, Meyer-decomposition simulation and Monte Carlo probes
//! for the elliptic Harnack inequality of isotropic unimodal Lévy jump processes.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod classifier;
pub mod kernels;
pub mod probe;
pub mod quad;
pub mod simulate;
pub mod special;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
