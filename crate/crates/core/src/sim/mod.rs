//! Synthetic driving scenes: kinematic agents, expert trajectories and BEV
//! rasters.

pub mod grid;
pub mod kinematics;
pub mod raster;
pub mod scene;

use thiserror::Error;

use crate::decision::DecisionCategory;

pub use grid::{DistanceField, GridSpec, OccupancyGrid};
pub use kinematics::{SpeedProfile, YawProfile};
pub use raster::{rasterize_bev, BevGrid, FEATURE_CHANNELS};
pub use scene::{
    expert_is_clear, generate_scene, rasterize_agents, Agent, AgentRole, Lane, Scene, SceneConfig, OCCUPANCY_STEPS,
};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("could not realize scenario {tag} after {attempts} attempts")]
    Infeasible { tag: DecisionCategory, attempts: usize },
    #[error("time {0} s is not on the 0.5 s occupancy lattice")]
    OffLattice(f64),
    #[error("invalid scene config: {0}")]
    Config(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
}

/// Mixes a base seed with a stream and index so that per-item seeds are
/// well separated (SplitMix64 finalizer).
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
