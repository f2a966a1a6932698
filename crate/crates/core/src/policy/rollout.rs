//! On-policy rollout storage and generalized advantage estimation.

use crate::diffcore::Tensor;
use crate::maze::Context;

/// A run of consecutive steps from one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
    pub task: usize,
    pub context: Context,
    /// True when the segment begins at episode step 0.
    pub starts_episode: bool,
    pub initial_heading: f64,
    /// The episode ended inside this segment (goal or time limit).
    pub terminal: bool,
    /// V(s) of the observation after the last step; used when not terminal.
    pub bootstrap_value: f64,
}

impl Segment {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Per-step arrays from the behavior policy. Row `k` holds the observation
/// the action was taken from, the action, the observation it led to and the
/// policy's prediction of that observation.
#[derive(Clone, Debug, Default)]
pub struct RolloutBatch {
    pub obs_dim: usize,
    pub ctx_dim: usize,
    pub act_dim: usize,
    pub obs: Vec<f64>,
    pub ctx: Vec<f64>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub predicted: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub segments: Vec<Segment>,
}

/// One step pushed into a [`RolloutBatch`].
pub struct StepRecord<'a> {
    pub obs: &'a [f64],
    pub ctx: &'a [f64],
    pub action: &'a [f64],
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub next_obs: &'a [f64],
    pub predicted: &'a [f64],
}

impl RolloutBatch {
    pub fn new(obs_dim: usize, ctx_dim: usize, act_dim: usize) -> Self {
        RolloutBatch {
            obs_dim,
            ctx_dim,
            act_dim,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn push(&mut self, s: StepRecord<'_>) {
        self.obs.extend_from_slice(s.obs);
        self.ctx.extend_from_slice(s.ctx);
        self.actions.extend_from_slice(s.action);
        self.log_probs.push(s.log_prob);
        self.rewards.push(s.reward);
        self.values.push(s.value);
        self.next_obs.extend_from_slice(s.next_obs);
        self.predicted.extend_from_slice(s.predicted);
    }

    /// Closes the segment covering all steps pushed since the previous one.
    pub fn close_segment(
        &mut self,
        task: usize,
        context: Context,
        starts_episode: bool,
        initial_heading: f64,
        terminal: bool,
        bootstrap_value: f64,
    ) {
        let start = self.segments.last().map_or(0, |s| s.start + s.len);
        let len = self.len() - start;
        if len == 0 {
            return;
        }
        self.segments.push(Segment {
            start,
            len,
            task,
            context,
            starts_episode,
            initial_heading,
            terminal,
            bootstrap_value: if terminal { 0.0 } else { bootstrap_value },
        });
    }

    pub fn obs_row(&self, k: usize) -> &[f64] {
        &self.obs[k * self.obs_dim..(k + 1) * self.obs_dim]
    }

    pub fn ctx_row(&self, k: usize) -> &[f64] {
        &self.ctx[k * self.ctx_dim..(k + 1) * self.ctx_dim]
    }

    pub fn next_obs_row(&self, k: usize) -> &[f64] {
        &self.next_obs[k * self.obs_dim..(k + 1) * self.obs_dim]
    }

    /// `[rows.len() × (obs_dim + ctx_dim)]` policy inputs.
    pub fn inputs(&self, rows: &[usize]) -> Tensor {
        let w = self.obs_dim + self.ctx_dim;
        let mut data = Vec::with_capacity(rows.len() * w);
        for &k in rows {
            data.extend_from_slice(self.obs_row(k));
            data.extend_from_slice(self.ctx_row(k));
        }
        Tensor::new(vec![rows.len(), w], data).unwrap()
    }

    pub fn actions_of(&self, rows: &[usize]) -> Tensor {
        let a = self.act_dim;
        let data = rows
            .iter()
            .flat_map(|&k| self.actions[k * a..(k + 1) * a].iter().copied())
            .collect();
        Tensor::new(vec![rows.len(), a], data).unwrap()
    }

    pub fn next_obs_of(&self, rows: &[usize]) -> Tensor {
        let data = rows.iter().flat_map(|&k| self.next_obs_row(k).iter().copied()).collect();
        Tensor::new(vec![rows.len(), self.obs_dim], data).unwrap()
    }

    /// Checks that all arrays agree in length and segments partition them.
    pub fn validate(&self) -> bool {
        let n = self.len();
        let lens_ok = self.obs.len() == n * self.obs_dim
            && self.ctx.len() == n * self.ctx_dim
            && self.actions.len() == n * self.act_dim
            && self.log_probs.len() == n
            && self.values.len() == n
            && self.next_obs.len() == n * self.obs_dim
            && self.predicted.len() == n * self.obs_dim;
        let mut cursor = 0;
        for s in &self.segments {
            if s.start != cursor || s.len == 0 {
                return false;
            }
            cursor += s.len;
        }
        lens_ok && cursor == n
    }
}

/// GAE(γ, λ) over each segment, bootstrapping from the segment's
/// `bootstrap_value` (zero at terminals). Returns unnormalized advantages.
pub fn gae(batch: &RolloutBatch, gamma: f64, lambda: f64) -> Vec<f64> {
    let mut adv = vec![0.0; batch.len()];
    for seg in &batch.segments {
        let mut next_value = seg.bootstrap_value;
        let mut running = 0.0;
        for k in seg.range().rev() {
            let delta = batch.rewards[k] + gamma * next_value - batch.values[k];
            running = delta + gamma * lambda * running;
            adv[k] = running;
            next_value = batch.values[k];
        }
    }
    adv
}

/// Fills `advantages` (normalized to zero mean, unit std) and
/// `returns = A + V` (from the unnormalized advantages).
pub fn compute_advantages(batch: &mut RolloutBatch, gamma: f64, lambda: f64) {
    let raw = gae(batch, gamma, lambda);
    batch.returns = raw.iter().zip(&batch.values).map(|(a, v)| a + v).collect();
    batch.advantages = normalize(&raw);
}

pub fn normalize(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    if x.is_empty() {
        return Vec::new();
    }
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - mean) / std).collect()
}
