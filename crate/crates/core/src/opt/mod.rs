//! Projection-operator Newton trajectory optimization and maneuver metrics.

mod metrics;
mod pronto;
mod trajectory;

pub use metrics::*;
pub use pronto::*;
pub use trajectory::Trajectory;
pub(crate) use trajectory::interval;
