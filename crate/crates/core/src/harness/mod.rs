//! Training loop, configuration, logs, plots and environment checks.

pub mod config;
pub mod envcheck;
pub mod log;
pub mod plot;
pub mod trainer;

pub use config::{Ablation, RunConfig, TaskSchedule};
pub use envcheck::{env_check, EnvCheckReport};
pub use log::{read_trainlog, LogHeader, LogRecord, TrainLogWriter};
pub use trainer::{load_policy, load_suite, train_to_dir, train_to_dir_until, Trainer};

/// Mean differential entropy of the Gaussian action head. The standard
/// deviation is state-independent, so this is the same for every row.
pub fn entropy_telemetry(log_std: &[f64]) -> f64 {
    crate::policy::gaussian_entropy(log_std)
}
