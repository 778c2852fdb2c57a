//! History-aware imitation-learning motion planner with a reactive closed-loop simulator.

pub mod ablation;
pub mod checkpoint;
pub mod error;
pub mod features;
pub mod geometry;
pub mod history;
pub mod losses;
pub mod model;
pub mod nn;
pub mod scenario;
pub mod sim;
pub mod training;

pub use error::{LhpfError, Result};
