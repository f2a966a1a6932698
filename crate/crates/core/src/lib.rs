//! Continual reinforcement learning on a suite of 2D mazes.
//!
//! A context-conditioned policy is trained on the mazes one after another.
//! Two optional mechanisms sit on top of clipped-surrogate policy gradient:
//!
//! * **diversity exploration**: the policy also predicts its next
//!   observation, and a recurrent trajectory discriminator learns to recover
//!   the task from those predictions. The discriminator's log-likelihood is
//!   maximized by both networks end to end.
//! * **self-correction**: trajectories are kept in a replay memory keyed by
//!   task and start heading. When a stored trajectory earned a higher
//!   discounted return than the current one, the policy imitates the
//!   discriminator's reading of the stored trajectory while the
//!   discriminator tries to tell the two apart.
//!
//! The agent is a 2D kinematic unicycle (acceleration and turn-rate
//! actions), not a legged robot.

pub mod diffcore;
pub mod discriminator;
pub mod error;
pub mod eval;
pub mod harness;
pub mod maze;
pub mod policy;
pub mod replay;

pub use error::{Error, Result};
