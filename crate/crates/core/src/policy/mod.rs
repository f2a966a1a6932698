pub mod net;
pub mod ppo;
pub mod rollout;

pub use net::{action_log_prob, gaussian_entropy, sample_action, PolicyNet, PolicyOutput, PolicyVars};
pub use ppo::{ppo_update, AuxTerms, DiversityTerm, PpoConfig, PpoStats};
pub use rollout::{compute_advantages, gae, RolloutBatch, Segment, StepRecord};
