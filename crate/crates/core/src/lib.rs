//! Kolmogorov models for binary preference data.
//!
//! Every user is a probability mass function `theta_u` over `D` atomic
//! events and every item is a subset of those events, encoded as a 0/1
//! indicator `psi_i`. The predicted probability that user `u` likes item `i`
//! is the measure of the item's subset, `theta_u . psi_i`.
//!
//! Training alternates two families of small problems: a simplex-constrained
//! QP per user ([`simplex`]) and a binary QP per item ([`binary`], solved
//! through the SDP relaxation in [`sdp`]). Logical relations between items
//! are read off the learned indicators by [`rules`].

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN.

pub mod bench;
pub mod binary;
pub mod config;
pub mod data;
pub mod error;
pub mod model;
pub mod rules;
pub mod sdp;
pub mod simplex;
pub mod train;
pub(crate) mod util;

pub use config::RunConfig;
pub use data::{EvalConfig, Evaluation};
pub use rules::{mine_rules, RuleReport};
pub use binary::{BinaryQpProblem, Q2Mode, SdrConfig};
pub use error::{KmError, Result};
pub use model::{IndicatorVector, ItemId, KolmogorovModel, Observation, ObservationSet, PmfVector, UserId};
pub use sdp::SdpConfig;
pub use simplex::{FwConfig, SimplexQpProblem};
pub use train::{train, TrainConfig, TrainOutcome, TrainTrace};
