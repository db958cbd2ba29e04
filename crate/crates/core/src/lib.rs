//! Autonomous separation assurance with multi-agent PPO.
//!
//! The crate bundles a lightweight en-route sector simulator, a small
//! reverse-mode autodiff engine, an actor-critic network whose intruder
//! encoder is an attention layer over a variable number of aircraft, PPO with
//! GAE, a parallel rollout trainer and the experiment protocols built on top.

pub mod checkpoint;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod policy;
pub mod ppo;
pub mod seed;
pub mod sim;
pub mod tensor;
pub mod train;

pub use error::{CheckpointError, Error, Result};
