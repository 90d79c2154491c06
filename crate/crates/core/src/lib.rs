//! Scene simulation, text-conditioned trajectory planning, dataset pipeline
//! and evaluation for a desk-scale decision-conditioned driving planner.

pub mod client;
pub mod dataset;
pub mod decision;
pub mod encoding;
pub mod eval;
pub mod hbd;
pub mod jsonl;
pub mod planner;
pub mod sim;
pub mod trajectory;

pub use decision::{DecisionCategory, DriverLogicOutput, RuleThresholds};
pub use trajectory::{EgoStatus, Trajectory};
