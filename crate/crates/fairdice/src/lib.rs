//! Offline multi-objective reinforcement learning via stationary-distribution
//! correction with learned objective preferences.
//!
//! The library provides:
//!
//! - the closed-form weight / utility kernels and critic & policy objectives
//!   ([`losses`]),
//! - a small reverse-mode MLP engine with Adam, orthogonal initialisation and
//!   an input-gradient penalty ([`autodiff`]),
//! - three benchmark environments — a four-rooms gridworld, seeded random
//!   multi-objective MDPs, and a resource-allocation simulator with group
//!   structure ([`env`]),
//! - dataset collection and JSONL (de)serialisation ([`data`]),
//! - an exact full-batch solver and policy evaluator for tabular problems
//!   ([`tabular`]),
//! - a minibatch neural trainer with diagnostic loss variants ([`trainer`]),
//! - fairness/welfare metrics and a Kruskal–Wallis test ([`metrics`], [`stats`]).

pub mod autodiff;
pub mod data;
pub mod env;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod stats;
pub mod tabular;
pub mod trainer;

pub use error::{FairdiceError, Result};
