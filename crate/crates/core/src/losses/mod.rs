//! Training objectives: comfort penalty, imitation losses and target construction.

pub mod comfort;
pub mod imitation;
pub mod target;
