//! Core library for learning and sequencing hexapod walking primitives.

pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod nn;
pub mod planner;
pub mod policy;
pub mod rewards;
pub mod robot;
pub mod sac;
pub mod sim;

pub use error::{Error, Result};
