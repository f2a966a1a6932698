use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maze::EnvParams;
use crate::policy::PpoConfig;
use crate::replay::CorrectionConfig;

pub const RUN_FORMAT: &str = "cmaze-run/1";

/// Which of the two auxiliary mechanisms are switched on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    Baseline,
    De,
    Sc,
    DeSc,
}

impl Ablation {
    pub fn diversity(self) -> bool {
        matches!(self, Ablation::De | Ablation::DeSc)
    }

    pub fn self_correction(self) -> bool {
        matches!(self, Ablation::Sc | Ablation::DeSc)
    }

    pub fn from_flags(diversity: bool, self_correction: bool) -> Self {
        match (diversity, self_correction) {
            (false, false) => Ablation::Baseline,
            (true, false) => Ablation::De,
            (false, true) => Ablation::Sc,
            (true, true) => Ablation::DeSc,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Baseline => "baseline",
            Ablation::De => "de",
            Ablation::Sc => "sc",
            Ablation::DeSc => "de+sc",
        }
    }

    pub const ALL: [Ablation; 4] = [Ablation::Baseline, Ablation::De, Ablation::Sc, Ablation::DeSc];
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Ablation::Baseline),
            "de" => Ok(Ablation::De),
            "sc" => Ok(Ablation::Sc),
            "de+sc" | "sc+de" => Ok(Ablation::DeSc),
            _ => Err(Error::Usage(format!(
                "unknown ablation `{s}` (expected baseline, de, sc or de+sc)"
            ))),
        }
    }
}

/// Run configuration. Serialized as flat TOML with an `[env]` table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub format: String,
    /// Suite manifest, relative to the config file; empty for the bundled suite.
    pub suite: String,
    /// Use only the first `n_tasks` mazes of the suite; 0 for all.
    pub n_tasks: usize,
    pub total_timesteps: u64,
    /// Steps per rollout.
    pub horizon: usize,
    pub seed: u64,
    pub diversity: bool,
    pub self_correction: bool,

    pub gamma: f64,
    pub clip_range: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    pub minibatch: usize,
    /// Policy learning rate.
    pub alpha1: f64,
    /// Discriminator learning rate.
    pub alpha2: f64,
    /// Self-correction learning rate.
    pub alpha3: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub l1_coef: f64,
    pub diversity_coef: f64,
    pub max_grad_norm: f64,

    /// Discriminator window length, steps.
    #[serde(rename = "L_d")]
    pub l_d: usize,
    pub policy_hidden: usize,
    pub disc_hidden: usize,
    /// Discriminator updates per rollout.
    pub disc_steps: usize,
    pub disc_train_on_real: bool,
    /// Self-correction comparison length, steps.
    pub correction_window: usize,
    pub memory_capacity: usize,
    /// Probability of sampling the current task's context; the rest is
    /// split evenly over earlier tasks.
    pub current_task_mass: f64,

    /// Steps between periodic evaluations; 0 disables them.
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// Steps between checkpoints; the final checkpoint is always written.
    pub checkpoint_every: u64,

    pub env: EnvParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ppo = PpoConfig::default();
        let sc = CorrectionConfig::default();
        RunConfig {
            format: RUN_FORMAT.into(),
            suite: String::new(),
            n_tasks: 0,
            total_timesteps: 150_000,
            horizon: 512,
            seed: 0,
            diversity: true,
            self_correction: true,
            gamma: ppo.gamma,
            clip_range: ppo.clip_range,
            gae_lambda: ppo.gae_lambda,
            epochs: ppo.epochs,
            minibatch: ppo.minibatch,
            alpha1: ppo.alpha1,
            alpha2: 1e-3,
            alpha3: sc.alpha3,
            value_coef: ppo.value_coef,
            entropy_coef: ppo.entropy_coef,
            l1_coef: ppo.l1_coef,
            diversity_coef: ppo.diversity_coef,
            max_grad_norm: ppo.max_grad_norm,
            l_d: crate::discriminator::WINDOW_LEN,
            policy_hidden: 64,
            disc_hidden: 64,
            disc_steps: 16,
            disc_train_on_real: false,
            correction_window: sc.window,
            memory_capacity: sc.capacity,
            current_task_mass: 0.5,
            eval_every: 10_000,
            eval_episodes: 10,
            checkpoint_every: 0,
            env: EnvParams::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if !cfg.suite.is_empty() && Path::new(&cfg.suite).is_relative() {
            let dir = path.parent().unwrap_or_else(|| Path::new("."));
            cfg.suite = dir.join(&cfg.suite).to_string_lossy().into_owned();
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != RUN_FORMAT {
            return Err(Error::Config(format!(
                "unsupported config format `{}` (expected `{RUN_FORMAT}`)",
                self.format
            )));
        }
        self.ppo().validate()?;
        if self.horizon == 0 || self.total_timesteps == 0 {
            return Err(Error::Config("horizon and total_timesteps must be positive".into()));
        }
        if self.l_d != crate::discriminator::WINDOW_LEN {
            return Err(Error::Config(format!(
                "L_d is fixed at {} in this build",
                crate::discriminator::WINDOW_LEN
            )));
        }
        if self.correction_window == 0 || self.memory_capacity == 0 {
            return Err(Error::Config("correction_window and memory_capacity must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.current_task_mass) {
            return Err(Error::Config("current_task_mass must be in [0, 1]".into()));
        }
        if !(self.alpha2 > 0.0 && self.alpha3 > 0.0) {
            return Err(Error::Config("alpha2 and alpha3 must be positive".into()));
        }
        if self.policy_hidden == 0 || self.disc_hidden == 0 {
            return Err(Error::Config("hidden sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn ablation(&self) -> Ablation {
        Ablation::from_flags(self.diversity, self.self_correction)
    }

    pub fn set_ablation(&mut self, a: Ablation) {
        self.diversity = a.diversity();
        self.self_correction = a.self_correction();
    }

    pub fn ppo(&self) -> PpoConfig {
        PpoConfig {
            clip_range: self.clip_range,
            gamma: self.gamma,
            gae_lambda: self.gae_lambda,
            epochs: self.epochs,
            minibatch: self.minibatch,
            alpha1: self.alpha1,
            value_coef: self.value_coef,
            entropy_coef: self.entropy_coef,
            l1_coef: self.l1_coef,
            diversity_coef: self.diversity_coef,
            max_grad_norm: self.max_grad_norm,
        }
    }

    pub fn correction(&self) -> CorrectionConfig {
        CorrectionConfig {
            window: self.correction_window,
            capacity: self.memory_capacity,
            alpha3: self.alpha3,
        }
    }

    pub fn suite_path(&self) -> Option<PathBuf> {
        (!self.suite.is_empty()).then(|| PathBuf::from(&self.suite))
    }
}

/// Ordered tasks with a step budget each.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskSchedule {
    pub budgets: Vec<u64>,
}

impl TaskSchedule {
    /// `total / n` per task, the remainder going one step each to the first tasks.
    pub fn even(total: u64, n: usize) -> Self {
        assert!(n > 0, "schedule needs at least one task");
        let base = total / n as u64;
        let rem = (total % n as u64) as usize;
        TaskSchedule {
            budgets: (0..n).map(|i| base + u64::from(i < rem)).collect(),
        }
    }

    pub fn total(&self) -> u64 {
        self.budgets.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.budgets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.budgets.is_empty()
    }

    /// Task being trained at global step `step`, and the step at which it ends.
    pub fn task_at(&self, step: u64) -> Option<(usize, u64)> {
        let mut end = 0;
        for (i, b) in self.budgets.iter().enumerate() {
            end += b;
            if step < end {
                return Some((i, end));
            }
        }
        None
    }
}
