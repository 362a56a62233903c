//! Control tasks, their expert solvers, and dataset generation.

pub mod condition;
pub mod dataset;
pub mod lqr;
pub mod waypoint;

pub use condition::ConditionLayout;
pub use dataset::{generate_lqr_dataset, generate_waypoint_dataset, Dataset, DatasetManifest, LqrDatasetConfig, TaskFamily, WaypointDatasetConfig};
pub use lqr::{lqr_policy, rollout, AffinePolicy, LqrTask, StageCost, TrackingCost};
pub use waypoint::{reward, solve_waypoint, Obstacle, Waypoint, WaypointSolution, WaypointSolverConfig, WaypointTask};
