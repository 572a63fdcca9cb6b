//! Random-horizon policy gradient estimation and optimisation.
//!
//! Unbiased Q and V estimates come from rollouts whose length is geometric,
//! so no truncation bias is introduced for infinite-horizon discounted MDPs.
//! On top of them sit three stochastic policy gradients, the plain ascent loop
//! (RPG), its periodic large-step variant (MRPG), and an exact dynamic
//! programming oracle for tabular problems.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod constants;
pub mod error;
pub mod estimators;
pub mod fixtures;
pub mod linalg;
pub mod mdp;
pub mod optim;
pub mod oracle;
pub mod par;
pub mod policy;
pub mod rng;

pub use error::{Error, Result};
