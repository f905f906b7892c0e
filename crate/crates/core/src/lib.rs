//! Fairness-aware client selection for federated learning.
//!
//! The crate is organised bottom-up:
//!
//! - [`reputation`]: Beta reputation table driven by contribution signs.
//! - [`contribution`]: exact and permutation-sampled Shapley values over a
//!   round's coalition.
//! - [`fairness`]: per-client virtual unfairness queues, the client
//!   suitability index and every selection policy (FairFedCS and baselines).
//! - [`fedsim`]: synthetic federations, a softmax-regression client model and
//!   the round loop that ties the pieces together.
//! - [`metrics`]: quality-normalised Jain fairness, queue stability and run
//!   summaries.
//! - [`harness`]: configuration parsing, run/sweep/report commands and their
//!   file formats.

// negated comparisons double as NaN rejection
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod contribution;
pub mod error;
pub mod fairness;
pub mod fedsim;
pub mod harness;
pub mod metrics;
pub mod reputation;
pub mod rng;

pub use error::{Error, Result};
