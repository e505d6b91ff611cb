//! Online selection of a stabilizing controller from a finite pool.
//!
//! The policy runs controllers in batches, falsifies any controller whose
//! batch violates an input-to-state stability envelope, and otherwise picks
//! controllers with an exponential-weights rule whose learning rate shrinks
//! as the state grows.

pub mod bandit;
pub mod commands;
pub mod domain;
pub mod error;
pub mod harness;
pub mod noise;
pub mod schedule;
pub mod systems;

pub use error::{DbarError, Result};
