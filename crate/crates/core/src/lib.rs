//! Simulation and optimization suite for the Traveling Officer Problem.
//!
//! The crate is organized bottom-up:
//!
//! * [`roadnet`] loads road graphs and parking spots, derives the action
//!   space (edges hosting spots) and precomputes officer routes.
//! * [`events`] models parking events, their ingestion, synthetic generation
//!   and the day-of-year train/validation/test split.
//! * [`simenv`] is the semi-Markov environment: per-second officer movement,
//!   fining, discounted rewards and per-spot observation features.
//! * [`baselines`] holds the greedy, ant-colony and random policies.
//! * [`nn`] is a small reverse-mode kernel plus the spatial-aware Q network.
//! * [`trainer`] runs semi-Markov DoubleDQN with a replay buffer.
//!
//! Data-parallel loops (day evaluation, environment collection) go through
//! [`par`], which uses rayon when the `parallel` feature is enabled and falls
//! back to plain iterators otherwise.

pub mod baselines;
pub mod error;
pub mod events;
pub mod nn;
pub mod par;
pub mod roadnet;
pub mod simenv;
pub mod trainer;

pub use error::{Error, Result};
