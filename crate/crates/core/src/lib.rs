//! Experience memory for GUI agents: explore a simulated device, archive the
//! trajectories a critic rates highly, and retrieve them as step-by-step
//! guides when executing new tasks.

pub mod error;
pub mod eval;
pub mod explore;
pub mod inference;
pub mod memory;
pub mod model;
pub mod retrieval;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
