//! Replay memory keyed by task and start heading, and the adversarial
//! self-correction step that pulls the policy toward better remembered
//! trajectories.

use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::nn::clamped_log_softmax;
use crate::diffcore::{adam_step, AdamState, Container, Graph, ParamTree, Tensor, Var};
use crate::discriminator::{make_window, DiscriminatorNet, TrajectoryWindow, WindowSource, PROB_FLOOR, WINDOW_LEN};
use crate::error::{Error, Result};
use crate::maze::Context;
use crate::policy::{PolicyNet, RolloutBatch};

pub const HEADING_BUCKETS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrectionConfig {
    /// Steps compared and imitated per trajectory.
    pub window: usize,
    /// Entries per (task, heading bucket) key.
    pub capacity: usize,
    pub alpha3: f64,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        CorrectionConfig {
            window: WINDOW_LEN,
            capacity: 64,
            alpha3: 1e-3,
        }
    }
}

/// `floor((ψ₀ + π) / (π/4)) mod 8`
pub fn heading_bucket(psi0: f64) -> usize {
    let b = ((psi0 + PI) / (PI / 4.0)).floor() as i64;
    b.rem_euclid(HEADING_BUCKETS as i64) as usize
}

/// `Σ γ^i r_i`
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}

/// Strict improvement test.
pub fn gate(current: f64, memory: f64) -> bool {
    memory > current
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryEntry {
    pub window: TrajectoryWindow,
    pub rewards: Vec<f64>,
    pub context: Context,
    /// Discounted return over the stored rewards.
    pub ret: f64,
    pub inserted: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayMemory {
    capacity: usize,
    buckets: BTreeMap<(usize, usize), VecDeque<MemoryEntry>>,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayMemory {
            capacity,
            buckets: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buckets.values().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bucket(&self, task: usize, bucket: usize) -> Option<&VecDeque<MemoryEntry>> {
        self.buckets.get(&(task, bucket))
    }

    /// Stores a real trajectory prefix under `(task, heading_bucket(ψ₀))`,
    /// evicting the oldest entry when the key is full.
    pub fn store(
        &mut self,
        window: TrajectoryWindow,
        rewards: Vec<f64>,
        context: Context,
        initial_heading: f64,
        gamma: f64,
        step: u64,
    ) -> Result<()> {
        if rewards.len() != window.len() {
            return Err(Error::Usage(format!(
                "memory entry has {} rewards for {} states",
                rewards.len(),
                window.len()
            )));
        }
        let key = (context.task(), heading_bucket(initial_heading));
        let ret = discounted_return(&rewards, gamma);
        let q = self.buckets.entry(key).or_default();
        if q.len() == self.capacity {
            q.pop_front();
        }
        q.push_back(MemoryEntry {
            window,
            rewards,
            context,
            ret,
            inserted: step,
        });
        Ok(())
    }

    /// Uniform draw from the key's bucket.
    pub fn sample_matched<R: Rng + ?Sized>(&self, task: usize, bucket: usize, rng: &mut R) -> Option<&MemoryEntry> {
        let q = self.buckets.get(&(task, bucket))?;
        if q.is_empty() {
            return None;
        }
        q.get(rng.gen_range(0..q.len()))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&(usize, usize), &MemoryEntry)> {
        self.buckets.iter().flat_map(|(k, q)| q.iter().map(move |e| (k, e)))
    }

    /// Writes every entry into `c` under `{prefix}`.
    pub fn save_into(&self, c: &mut Container, prefix: &str) -> Result<()> {
        c.put_u64(format!("{prefix}capacity"), self.capacity as u64)?;
        c.put_u64(format!("{prefix}count"), self.len() as u64)?;
        for (i, (&(task, bucket), e)) in self.entries().enumerate() {
            let p = format!("{prefix}{i}.");
            let len = e.window.len();
            let dim = e.window.states[0].len();
            let states: Vec<f64> = e.window.valid_states().iter().flatten().copied().collect();
            c.put(format!("{p}states"), Tensor::new(vec![len, dim], states)?)?;
            c.put(format!("{p}rewards"), Tensor::vector(e.rewards.clone()))?;
            c.put(format!("{p}context"), Tensor::vector(e.context.to_vec()))?;
            c.put_u64(format!("{p}task"), task as u64)?;
            c.put_u64(format!("{p}bucket"), bucket as u64)?;
            c.put_u64(format!("{p}inserted"), e.inserted)?;
            c.put_scalar(format!("{p}return"), e.ret)?;
        }
        Ok(())
    }

    pub fn load_from(c: &Container, prefix: &str, gamma: f64) -> Result<Self> {
        let capacity = c.get_u64(&format!("{prefix}capacity"))? as usize;
        if capacity == 0 {
            return Err(Error::Format("replay snapshot has zero capacity".into()));
        }
        let count = c.get_u64(&format!("{prefix}count"))? as usize;
        let mut m = ReplayMemory::new(capacity);
        for i in 0..count {
            let p = format!("{prefix}{i}.");
            let st = c.get(&format!("{p}states"))?;
            let rows: Vec<Vec<f64>> = (0..st.rows()).map(|r| st.row(r).to_vec()).collect();
            let window = make_window(&rows, WindowSource::Memory)?;
            let rewards = c.get(&format!("{p}rewards"))?.data().to_vec();
            let ctx = c.get(&format!("{p}context"))?.data().to_vec();
            let (onehot, z) = ctx.split_at(ctx.len() - 1);
            let context = Context {
                task_onehot: onehot.to_vec(),
                z: z[0],
            };
            let task = c.get_u64(&format!("{p}task"))? as usize;
            let bucket = c.get_u64(&format!("{p}bucket"))? as usize;
            let ret = c.get_scalar(&format!("{p}return"))?;
            if (discounted_return(&rewards, gamma) - ret).abs() > 1e-9 {
                return Err(Error::Format(format!("replay entry {i}: stored return disagrees with rewards")));
            }
            let q = m.buckets.entry((task, bucket)).or_default();
            if q.len() == capacity {
                return Err(Error::Format(format!("replay bucket ({task}, {bucket}) over capacity")));
            }
            q.push_back(MemoryEntry {
                window,
                rewards,
                context,
                ret,
                inserted: c.get_u64(&format!("{p}inserted"))?,
            });
        }
        Ok(m)
    }
}

/// `−Σ_k ℓ_k log p_k` averaged over rows, with `ℓ` a constant soft label.
/// Returns the loss node and the count of clamped probabilities.
pub fn weighted_cross_entropy(g: &mut Graph, logits: Var, labels: &Tensor) -> (Var, usize) {
    let (lp, clamped) = clamped_log_softmax(g, logits, PROB_FLOOR);
    if clamped > 0 {
        log::debug!("self-correction: {clamped} probabilities clamped");
    }
    let l = g.constant(labels.clone());
    (crate::diffcore::nn::soft_cross_entropy(g, lp, l), clamped)
}

/// Plain-value `(policy_loss, disc_loss)` for probabilities `p = D(τ̂)` and
/// label `ℓ = D(τ′)`.
pub fn correction_losses(p: &[f64], label: &[f64]) -> (f64, f64) {
    let ce: f64 = -label
        .iter()
        .zip(p)
        .map(|(l, q)| l * q.max(PROB_FLOOR).ln())
        .sum::<f64>();
    (ce, -ce)
}

/// A current predicted trajectory matched with a remembered one.
#[derive(Clone, Debug)]
pub struct CorrectionPair {
    /// Batch rows of the current segment, truncated to the compared length.
    pub rows: Vec<usize>,
    pub task: usize,
    pub current_return: f64,
    pub memory_return: f64,
    /// `D(τ′)`, detached.
    pub label: Vec<f64>,
}

/// Imitation cross-entropy of `D(τ̂)` against the pair's label, where τ̂ is
/// the policy's prediction over the pair's rows.
pub fn imitation_loss(
    policy: &PolicyNet,
    theta: &ParamTree,
    disc: &DiscriminatorNet,
    phi: &ParamTree,
    batch: &RolloutBatch,
    pair: &CorrectionPair,
) -> Result<f64> {
    let states: Vec<Vec<f64>> = pair
        .rows
        .iter()
        .map(|&k| policy.evaluate(theta, batch.obs_row(k), batch.ctx_row(k)).next_state)
        .collect();
    let w = make_window(&states, WindowSource::Predicted)?;
    let p = disc.discriminate(phi, &[&w]);
    Ok(correction_losses(&p[0], &pair.label).0)
}

/// θ-step: minimize `−Σ ℓ log D(τ̂)` through the policy's state head.
#[allow(clippy::too_many_arguments)]
pub fn correction_theta_step(
    policy: &PolicyNet,
    theta: &mut ParamTree,
    adam: &mut AdamState,
    disc: &DiscriminatorNet,
    phi: &ParamTree,
    batch: &RolloutBatch,
    pair: &CorrectionPair,
    lr: f64,
    max_grad_norm: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.bind(theta);
    let x = g.constant(batch.inputs(&pair.rows));
    let out = policy.forward(&mut g, &p, x)?;
    let dp = g.bind_frozen(phi);
    let local: Vec<usize> = (0..pair.rows.len()).collect();
    let (steps, lengths) = disc.gathered_inputs(&mut g, out.next_state, &[local]);
    let logits = disc.forward(&mut g, &dp, &steps, &lengths);
    let label = Tensor::new(vec![1, pair.label.len()], pair.label.clone())?;
    let (loss, _) = weighted_cross_entropy(&mut g, logits, &label);
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("self-correction policy loss {value}")));
    }
    let grads = g.backward(loss)?;
    let mut grads = p.gradients(&g, &grads);
    if max_grad_norm > 0.0 {
        grads.clip_global_norm(max_grad_norm);
    }
    adam_step(theta, &grads, adam, lr)?;
    Ok(value)
}

/// φ-step: minimize `+Σ ℓ log D(τ̂)` with τ̂ held fixed.
#[allow(clippy::too_many_arguments)]
pub fn correction_phi_step(
    policy: &PolicyNet,
    theta: &ParamTree,
    disc: &DiscriminatorNet,
    phi: &mut ParamTree,
    adam: &mut AdamState,
    batch: &RolloutBatch,
    pair: &CorrectionPair,
    lr: f64,
) -> Result<f64> {
    let states: Vec<Vec<f64>> = pair
        .rows
        .iter()
        .map(|&k| policy.evaluate(theta, batch.obs_row(k), batch.ctx_row(k)).next_state)
        .collect();
    let w = make_window(&states, WindowSource::Predicted)?;
    let mut g = Graph::new();
    let dp = g.bind(phi);
    let (steps, lengths) = disc.window_inputs(&mut g, &[&w]);
    let logits = disc.forward(&mut g, &dp, &steps, &lengths);
    let label = Tensor::new(vec![1, pair.label.len()], pair.label.clone())?;
    let (ce, _) = weighted_cross_entropy(&mut g, logits, &label);
    let loss = g.neg(ce);
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("self-correction discriminator loss {value}")));
    }
    let grads = g.backward(loss)?;
    let grads = dp.gradients(&g, &grads);
    adam_step(phi, &grads, adam, lr)?;
    Ok(value)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrectionStats {
    pub stored: usize,
    pub matched: usize,
    pub gated: usize,
    pub gated_fraction: f64,
    pub policy_loss: f64,
}

/// Real next-state window and reward prefix of each episode-start segment.
pub fn episode_windows(batch: &RolloutBatch, limit: usize) -> Vec<(usize, TrajectoryWindow, Vec<f64>)> {
    batch
        .segments
        .iter()
        .enumerate()
        .filter(|(_, s)| s.starts_episode)
        .map(|(i, s)| {
            let n = s.len.min(limit);
            let states: Vec<Vec<f64>> = (s.start..s.start + n).map(|k| batch.next_obs_row(k).to_vec()).collect();
            let rewards = batch.rewards[s.start..s.start + n].to_vec();
            (i, make_window(&states, WindowSource::Real).expect("segments are non-empty"), rewards)
        })
        .collect()
}

/// Everything the correction step reads and mutates.
pub struct CorrectionContext<'a> {
    pub policy: &'a PolicyNet,
    pub theta: &'a mut ParamTree,
    pub theta_adam: &'a mut AdamState,
    pub disc: &'a DiscriminatorNet,
    pub phi: &'a mut ParamTree,
    pub phi_adam: &'a mut AdamState,
    pub memory: &'a mut ReplayMemory,
}

/// For each episode that starts in `batch`: draw a matched memory entry
/// from what was stored before this call, store the episode, and when the
/// memory entry's return is strictly higher apply a θ-step then a φ-step.
pub fn self_correction_step<R: Rng + ?Sized>(
    cx: &mut CorrectionContext<'_>,
    batch: &RolloutBatch,
    cfg: &CorrectionConfig,
    gamma: f64,
    max_grad_norm: f64,
    step: u64,
    rng: &mut R,
) -> Result<CorrectionStats> {
    let limit = cfg.window.min(WINDOW_LEN);
    let episodes = episode_windows(batch, limit);
    let mut stats = CorrectionStats::default();

    let mut pairs = Vec::new();
    for (seg_idx, _, rewards) in &episodes {
        let seg = &batch.segments[*seg_idx];
        let bucket = heading_bucket(seg.initial_heading);
        let Some(entry) = cx.memory.sample_matched(seg.task, bucket, rng) else {
            continue;
        };
        stats.matched += 1;
        let m = rewards.len().min(entry.rewards.len()).min(limit);
        let current = discounted_return(&rewards[..m], gamma);
        let memory = discounted_return(&entry.rewards[..m], gamma);
        if gate(current, memory) {
            let label = cx.disc.discriminate(cx.phi, &[&entry.window]).remove(0);
            pairs.push(CorrectionPair {
                rows: (seg.start..seg.start + m).collect(),
                task: seg.task,
                current_return: current,
                memory_return: memory,
                label,
            });
        }
    }
    for (seg_idx, window, rewards) in episodes {
        let seg = &batch.segments[seg_idx];
        let mut window = window;
        window.source = WindowSource::Memory;
        cx.memory
            .store(window, rewards, seg.context.clone(), seg.initial_heading, gamma, step)?;
        stats.stored += 1;
    }

    for pair in &pairs {
        let loss = correction_theta_step(
            cx.policy,
            cx.theta,
            cx.theta_adam,
            cx.disc,
            cx.phi,
            batch,
            pair,
            cfg.alpha3,
            max_grad_norm,
        )?;
        correction_phi_step(cx.policy, cx.theta, cx.disc, cx.phi, cx.phi_adam, batch, pair, cfg.alpha3)?;
        stats.policy_loss += loss;
        stats.gated += 1;
    }
    if stats.gated > 0 {
        stats.policy_loss /= stats.gated as f64;
    }
    if stats.matched > 0 {
        stats.gated_fraction = stats.gated as f64 / stats.matched as f64;
    }
    Ok(stats)
}
