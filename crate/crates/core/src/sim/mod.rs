//! Closed-loop simulation.

pub mod collision;
pub mod episode;
pub mod idm;
pub mod metrics;
pub mod report;

pub use episode::{run_episode, run_episode_traced, run_suite, EgoPlanner, EpisodeConfig, SimMode, SimReport, Trace};
pub use metrics::Metrics;
