//! Decentralized off-policy actor-critic for dec-POMDPs.
//!
//! Agents on a communication graph estimate a hidden global state by
//! social learning, agree on a joint importance ratio by log-ratio
//! consensus, and run emphatic actor-critic updates on belief features.
//! A full-observation oracle replay, a zeroth-order baseline and a bounds
//! engine sit alongside the learner; [`harness`] ties them to JSON configs
//! and CSV output.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod actor_critic;
pub mod bounds;
pub mod config;
pub mod environment;
pub mod error;
pub mod harness;
pub mod ratio_consensus;
pub mod social_learning;
pub mod topology;
pub mod trace;
pub mod zopo;

pub use error::{Error, Result};
