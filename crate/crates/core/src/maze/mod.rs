//! The maze suite: ASCII maps, shortest-distance fields, a kinematic
//! unicycle agent and the shaped distance-progress reward.

pub mod env;
pub mod field;
pub mod grid;
pub mod suite;
pub mod trajlog;

pub use env::{
    integrate, ray_cast, sample_context, AgentState, Context, DoneReason, EnvParams, Episode, MazeEnv, MazeTask,
    StepResult,
};
pub use field::{distance_field, DistField};
pub use grid::{load_maze, MazeSpec, Point};
pub use suite::Suite;
