//! Desk-scale diffusion world model pipeline for offline reinforcement learning.
//!
//! A conditional diffusion model generates future state-reward segments from a
//! `(state, action, return-to-go)` condition, an inverse dynamics model fills in
//! the missing actions, and one-step TD agents (TD3+BC, IQL) train on the
//! resulting synthetic transitions. Everything runs in 64-bit floats on the CPU
//! and is bit-reproducible from a single root seed.

pub mod agents;
pub mod cli;
pub mod data;
pub mod diffusion;
pub mod envs;
pub mod error;
pub mod idm;
pub mod nn;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
