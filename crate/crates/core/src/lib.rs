//! Gas source localization on occupancy grids.
//!
//! Single-point gas and wind measurements are fused into a probabilistic
//! gas-hit map. Candidate source locations are scored by comparing that map
//! with hit frequencies predicted by a 2D filament dispersion model, using a
//! coarse-to-fine refinement over rectangular regions. The robot moves toward
//! cells where the predicted plumes of likely sources disagree most.
//!
//! [`harness`] ties everything into a seeded closed-loop experiment against a
//! filament-simulated ground truth.

pub mod error;
pub mod estimator;
pub mod filament;
pub mod grid;
pub mod harness;
pub mod hitmap;
pub mod movement;
pub mod regions;
pub mod rng;
pub mod wind;

pub use error::{Error, Result};
pub use grid::{build_partition, shortest_path, GraphPartition, GridPath, OccupancyGrid, PathCost};
