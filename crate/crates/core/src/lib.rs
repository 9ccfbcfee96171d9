//! Interactive recommendation in a simulated live-broadcast room.
//!
//! A digital host decides which content type to expose to each customer,
//! round after round. This crate provides the simulator ([`env`]), a small
//! neural network engine ([`nn`]), the decision agents ([`agents`]), offline
//! ranking metrics ([`eval`]) and the experiment runner ([`harness`]).

pub mod agents;
pub mod config;
pub mod env;
pub mod error;
pub mod eval;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod types;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use types::{increment_exposure, Action, ContentItem, ContentType, Context, ExposureState, Transition};
