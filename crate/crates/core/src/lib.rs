//! Multi-agent path finding with decision causal communication.

pub mod env;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod oracles;
pub mod selftest;
pub mod training;

pub use error::{Error, Result};
