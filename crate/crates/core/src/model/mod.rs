//! Two-branch backbone, attention layers and discriminator.

mod config;
mod network;
mod params;

pub use config::{ArchConfig, BranchId, Objective, Variant};
pub use network::*;
pub use params::{Bound, BoundWeights, Collection, NetworkWeights, ParamSet};
