//! Clipped-surrogate update with value, entropy, next-state L1 and
//! diversity terms.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::net::PolicyNet;
use super::rollout::RolloutBatch;
use crate::diffcore::graph::LN_2PI;
use crate::diffcore::{adam_step, AdamState, Graph, ParamTree, Tensor, Var};
use crate::discriminator::{diversity_loss, DiscriminatorNet, WINDOW_LEN};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub clip_range: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    pub minibatch: usize,
    /// Policy learning rate.
    pub alpha1: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub l1_coef: f64,
    pub diversity_coef: f64,
    /// Global gradient-norm clip; 0 disables.
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_range: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            epochs: 4,
            minibatch: 32,
            alpha1: 1e-3,
            value_coef: 0.5,
            entropy_coef: 0.01,
            l1_coef: 0.1,
            diversity_coef: 0.5,
            max_grad_norm: 0.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_range > 0.0 && self.clip_range < 1.0) {
            return Err(Error::Config(format!("clip_range must be in (0, 1), got {}", self.clip_range)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::Config(format!("gae_lambda must be in [0, 1], got {}", self.gae_lambda)));
        }
        if self.epochs == 0 || self.minibatch == 0 {
            return Err(Error::Config("epochs and minibatch must be positive".into()));
        }
        if !(self.alpha1 > 0.0) {
            return Err(Error::Config("alpha1 must be positive".into()));
        }
        Ok(())
    }
}

/// Mean over the batch of `min(ρA, clip(ρ, 1−ε, 1+ε)A)` with
/// `ρ = exp(logp − old_logp)`. This is the quantity to maximize.
pub fn clipped_surrogate(g: &mut Graph, logp: Var, old_logp: &[f64], advantages: &[f64], clip: f64) -> Var {
    let n = old_logp.len();
    let old = g.constant(Tensor::vector(old_logp.to_vec()));
    let adv = g.constant(Tensor::vector(advantages.to_vec()));
    let logp = g.reshape(logp, &[n]);
    let diff = g.sub(logp, old);
    let ratio = g.exp(diff);
    let unclipped = g.mul(ratio, adv);
    let clipped = g.clamp(ratio, 1.0 - clip, 1.0 + clip);
    let clipped = g.mul(clipped, adv);
    let surr = g.minimum(unclipped, clipped);
    g.mean(surr)
}

/// Mean squared error between `values [B×1]` and `returns`.
pub fn value_loss(g: &mut Graph, values: Var, returns: &[f64]) -> Var {
    let r = g.constant(Tensor::new(vec![returns.len(), 1], returns.to_vec()).unwrap());
    let d = g.sub(values, r);
    let sq = g.square(d);
    g.mean(sq)
}

/// Differential entropy of the diagonal Gaussian head.
pub fn entropy(g: &mut Graph, log_std: Var) -> Var {
    let dims = g.value(log_std).len() as f64;
    let s = g.sum(log_std);
    g.add_scalar(s, dims * (0.5 + 0.5 * LN_2PI))
}

/// `Σ |ŝ − s|` over all elements.
pub fn prediction_l1(g: &mut Graph, predicted: Var, real: &Tensor) -> Result<Var> {
    if g.value(predicted).shape() != real.shape() {
        return Err(Error::Usage(format!(
            "prediction_l1: predicted {:?} vs real {:?}",
            g.value(predicted).shape(),
            real.shape()
        )));
    }
    let r = g.constant(real.clone());
    let d = g.sub(predicted, r);
    let a = g.abs(d);
    Ok(g.sum(a))
}

pub fn prediction_l1_value(predicted: &[Vec<f64>], real: &[Vec<f64>]) -> Result<f64> {
    if predicted.len() != real.len() {
        return Err(Error::Usage(format!(
            "prediction_l1: {} predicted states vs {} real",
            predicted.len(),
            real.len()
        )));
    }
    let mut total = 0.0;
    for (p, r) in predicted.iter().zip(real) {
        if p.len() != r.len() {
            return Err(Error::Usage("prediction_l1: state widths differ".into()));
        }
        total += p.iter().zip(r).map(|(a, b)| (a - b).abs()).sum::<f64>();
    }
    Ok(total)
}

/// Predicted-trajectory windows scored by a frozen discriminator; the
/// gradient reaches the policy's state head.
pub struct DiversityTerm<'a> {
    pub net: &'a DiscriminatorNet,
    pub params: &'a ParamTree,
    /// Row indices into the batch (time order) and the task of each window.
    pub windows: Vec<(Vec<usize>, usize)>,
}

/// Per-update diagnostics, averaged over the applied minibatches.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub l1: f64,
    pub diversity: f64,
    pub clip_fraction: f64,
    pub minibatches: usize,
    pub skipped: usize,
}

/// Aux terms switched on by the diversity ablation flag.
pub struct AuxTerms<'a> {
    pub l1: bool,
    pub diversity: Option<DiversityTerm<'a>>,
}

/// Runs `epochs` passes of shuffled minibatches over `batch`.
pub fn ppo_update<R: Rng + ?Sized>(
    net: &PolicyNet,
    theta: &mut ParamTree,
    adam: &mut AdamState,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    aux: &AuxTerms<'_>,
    rng: &mut R,
) -> Result<PpoStats> {
    if batch.advantages.len() != batch.len() || batch.returns.len() != batch.len() {
        return Err(Error::Usage("ppo_update: advantages not computed".into()));
    }
    let n = batch.len();
    let mut stats = PpoStats::default();
    if n == 0 {
        return Ok(stats);
    }
    let n_mb = n.div_ceil(cfg.minibatch);
    let mut order: Vec<usize> = (0..n).collect();
    let mut win_order: Vec<usize> = aux.diversity.as_ref().map_or(Vec::new(), |d| (0..d.windows.len()).collect());

    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        win_order.shuffle(rng);
        for m in 0..n_mb {
            let rows = &order[m * cfg.minibatch..((m + 1) * cfg.minibatch).min(n)];
            let wins: Vec<usize> = win_order.iter().copied().skip(m).step_by(n_mb).collect();
            match minibatch_step(net, theta, adam, batch, cfg, aux, rows, &wins)? {
                Some(s) => {
                    stats.surrogate += s.surrogate;
                    stats.value_loss += s.value_loss;
                    stats.entropy += s.entropy;
                    stats.l1 += s.l1;
                    stats.diversity += s.diversity;
                    stats.clip_fraction += s.clip_fraction;
                    stats.minibatches += 1;
                }
                None => stats.skipped += 1,
            }
        }
    }
    if stats.minibatches > 0 {
        let k = stats.minibatches as f64;
        stats.surrogate /= k;
        stats.value_loss /= k;
        stats.entropy /= k;
        stats.l1 /= k;
        stats.clip_fraction /= k;
        let div_batches = aux.diversity.as_ref().map_or(0, |d| d.windows.len().min(n_mb) * cfg.epochs);
        if div_batches > 0 {
            stats.diversity /= div_batches as f64;
        }
    }
    Ok(stats)
}

#[allow(clippy::too_many_arguments)]
fn minibatch_step(
    net: &PolicyNet,
    theta: &mut ParamTree,
    adam: &mut AdamState,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    aux: &AuxTerms<'_>,
    rows: &[usize],
    wins: &[usize],
) -> Result<Option<PpoStats>> {
    let mut g = Graph::new();
    let p = g.bind(theta);
    let x = g.constant(batch.inputs(rows));
    let out = net.forward(&mut g, &p, x)?;

    let old: Vec<f64> = rows.iter().map(|&k| batch.log_probs[k]).collect();
    let adv: Vec<f64> = rows.iter().map(|&k| batch.advantages[k]).collect();
    let ret: Vec<f64> = rows.iter().map(|&k| batch.returns[k]).collect();

    let logp = g.gaussian_log_prob(&batch.actions_of(rows), out.mean, out.log_std);
    let surr = clipped_surrogate(&mut g, logp, &old, &adv, cfg.clip_range);
    let vloss = value_loss(&mut g, out.value, &ret);
    let ent = entropy(&mut g, out.log_std);

    let clip_fraction = {
        let lp = g.value(logp).data();
        lp.iter()
            .zip(&old)
            .filter(|(a, b)| ((*a - *b).exp() - 1.0).abs() > cfg.clip_range)
            .count() as f64
            / rows.len() as f64
    };

    let neg_surr = g.neg(surr);
    let v_term = g.scale(vloss, cfg.value_coef);
    let e_term = g.scale(ent, -cfg.entropy_coef);
    let mut loss = g.add(neg_surr, v_term);
    loss = g.add(loss, e_term);

    let mut l1_value = 0.0;
    if aux.l1 {
        let l1 = prediction_l1(&mut g, out.next_state, &batch.next_obs_of(rows))?;
        let l1 = g.scale(l1, 1.0 / rows.len() as f64);
        l1_value = g.value(l1).item();
        let t = g.scale(l1, cfg.l1_coef);
        loss = g.add(loss, t);
    }

    let mut div_value = 0.0;
    if let (Some(div), false) = (aux.diversity.as_ref(), wins.is_empty()) {
        let (dl, _) = diversity_on_windows(&mut g, net, &p, batch, div, wins)?;
        div_value = g.value(dl).item();
        let t = g.scale(dl, cfg.diversity_coef);
        loss = g.add(loss, t);
    }

    let lv = g.value(loss).item();
    if !lv.is_finite() {
        log::warn!("ppo: non-finite loss {lv}, minibatch skipped");
        return Ok(None);
    }
    let grads = g.backward(loss)?;
    let mut grads = p.gradients(&g, &grads);
    if cfg.max_grad_norm > 0.0 {
        grads.clip_global_norm(cfg.max_grad_norm);
    }
    match adam_step(theta, &grads, adam, cfg.alpha1) {
        Ok(()) => {}
        Err(Error::NonFinite(msg)) => {
            log::warn!("ppo: {msg}; minibatch skipped");
            return Ok(None);
        }
        Err(e) => return Err(e),
    }
    Ok(Some(PpoStats {
        surrogate: g.value(surr).item(),
        value_loss: g.value(vloss).item(),
        entropy: g.value(ent).item(),
        l1: l1_value,
        diversity: div_value,
        clip_fraction,
        minibatches: 1,
        skipped: 0,
    }))
}

/// Mean `−log D(τ̂)[task]` over the selected windows, where τ̂ is the
/// policy's state-head output on each window's rows.
pub fn diversity_on_windows(
    g: &mut Graph,
    net: &PolicyNet,
    p: &crate::diffcore::Bound,
    batch: &RolloutBatch,
    div: &DiversityTerm<'_>,
    wins: &[usize],
) -> Result<(Var, usize)> {
    let mut all_rows = Vec::new();
    let mut local = Vec::with_capacity(wins.len());
    let mut tasks = Vec::with_capacity(wins.len());
    for &w in wins {
        let (rows, task) = &div.windows[w];
        let take = rows.len().min(WINDOW_LEN);
        let start = all_rows.len();
        all_rows.extend_from_slice(&rows[..take]);
        local.push((start..start + take).collect::<Vec<_>>());
        tasks.push(*task);
    }
    let x = g.constant(batch.inputs(&all_rows));
    let out = net.forward(g, p, x)?;
    let dp = g.bind_frozen(div.params);
    let (steps, lengths) = div.net.gathered_inputs(g, out.next_state, &local);
    let logits = div.net.forward(g, &dp, &steps, &lengths);
    Ok(diversity_loss(g, logits, &tasks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::rollout::{compute_advantages, StepRecord};
    use crate::maze::Context;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn clip_binds_against_advantage_gives_zero_gradient() {
        let eps = 0.2;
        // ratio 1.5 with A > 0 and ratio 0.5 with A < 0: clipped branch is the min
        // ratio 1.1 with A > 0: inside, gradient = A·ρ / n
        let old = [0.0, 0.0, 0.0];
        let logp_vals = [1.5f64.ln(), 0.5f64.ln(), 1.1f64.ln()];
        let adv = [1.0, -1.0, 2.0];
        let mut g = Graph::new();
        let lp = g.leaf(Tensor::vector(logp_vals.to_vec()));
        let s = clipped_surrogate(&mut g, lp, &old, &adv, eps);
        let gr = g.backward(s).unwrap();
        let d = gr.wrt(lp).unwrap().data().to_vec();
        assert_eq!(d[0], 0.0);
        assert_eq!(d[1], 0.0);
        assert!((d[2] - 2.0 * 1.1 / 3.0).abs() < 1e-12);
        // ratio 1.5 with A < 0: unclipped branch is the min, gradient flows
        let mut g = Graph::new();
        let lp = g.leaf(Tensor::vector(vec![1.5f64.ln()]));
        let s = clipped_surrogate(&mut g, lp, &[0.0], &[-1.0], eps);
        let gr = g.backward(s).unwrap();
        assert!((gr.wrt(lp).unwrap().data()[0] + 1.5).abs() < 1e-12);
    }

    #[test]
    fn l1_examples() {
        assert_eq!(prediction_l1_value(&[vec![1.0], vec![2.0]], &[vec![0.0], vec![0.0]]).unwrap(), 3.0);
        assert_eq!(prediction_l1_value(&[vec![0.3, -0.2]], &[vec![0.3, -0.2]]).unwrap(), 0.0);
        assert!(prediction_l1_value(&[vec![1.0]], &[]).is_err());
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap());
        assert!(prediction_l1(&mut g, x, &Tensor::zeros(&[3, 1])).is_err());
        let l = prediction_l1(&mut g, x, &Tensor::zeros(&[2, 1])).unwrap();
        assert_eq!(g.value(l).item(), 3.0);
    }

    #[test]
    fn config_validation() {
        assert!(PpoConfig::default().validate().is_ok());
        let bad = PpoConfig {
            clip_range: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = PpoConfig {
            gamma: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    fn bandit_batch(net: &PolicyNet, theta: &ParamTree, rng: &mut ChaCha8Rng) -> RolloutBatch {
        let mut b = RolloutBatch::new(1, 1, 1);
        for _ in 0..64 {
            let out = net.evaluate(theta, &[0.5], &[1.0]);
            let (a, lp) = crate::policy::net::sample_action(&out.mean, &out.log_std, rng);
            // reward peaks at a = +1
            let r = -(a[0] - 1.0).powi(2);
            b.push(StepRecord {
                obs: &[0.5],
                ctx: &[1.0],
                action: &a,
                log_prob: lp,
                reward: r,
                value: out.value,
                next_obs: &[0.5],
                predicted: &out.next_state,
            });
            b.close_segment(0, Context::new(0, 1, 0.0), true, 0.0, true, 0.0);
        }
        compute_advantages(&mut b, 0.99, 0.95);
        b
    }

    #[test]
    fn bandit_mean_moves_toward_rewarded_action() {
        let net = PolicyNet::new(1, 1, 16, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut theta = net.init_zero_heads(&mut rng);
        let mut adam = AdamState::new(&theta);
        let cfg = PpoConfig {
            epochs: 1,
            minibatch: 64,
            alpha1: 1e-2,
            ..Default::default()
        };
        let aux = AuxTerms {
            l1: false,
            diversity: None,
        };
        let start = net.evaluate(&theta, &[0.5], &[1.0]).mean[0];
        for _ in 0..100 {
            let b = bandit_batch(&net, &theta, &mut rng);
            ppo_update(&net, &mut theta, &mut adam, &b, &cfg, &aux, &mut rng).unwrap();
        }
        let end = net.evaluate(&theta, &[0.5], &[1.0]).mean[0];
        assert_eq!(start, 0.0);
        assert!(end > 0.7, "mean {end}");
    }

    #[test]
    fn zero_advantages_leave_action_head_gradients_zero() {
        let net = PolicyNet::new(2, 1, 8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = net.init(&mut rng);
        let mut b = RolloutBatch::new(2, 1, 2);
        for k in 0..10 {
            let obs = [k as f64 * 0.1, 0.3];
            let out = net.evaluate(&theta, &obs, &[1.0]);
            let (a, lp) = crate::policy::net::sample_action(&out.mean, &out.log_std, &mut rng);
            b.push(StepRecord {
                obs: &obs,
                ctx: &[1.0],
                action: &a,
                log_prob: lp,
                reward: 0.0,
                value: 0.0,
                next_obs: &obs,
                predicted: &out.next_state,
            });
        }
        b.close_segment(0, Context::new(0, 1, 0.0), true, 0.0, true, 0.0);
        b.advantages = vec![0.0; 10];
        b.returns = vec![0.0; 10];
        let rows: Vec<usize> = (0..10).collect();
        let mut g = Graph::new();
        let p = g.bind(&theta);
        let x = g.constant(b.inputs(&rows));
        let out = net.forward(&mut g, &p, x).unwrap();
        let logp = g.gaussian_log_prob(&b.actions_of(&rows), out.mean, out.log_std);
        let s = clipped_surrogate(&mut g, logp, &b.log_probs, &b.advantages, 0.2);
        let grads = g.backward(s).unwrap();
        let grads = p.gradients(&g, &grads);
        assert!(grads.get("mean.w").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(grads.get("log_std").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn update_is_bit_reproducible() {
        let net = PolicyNet::new(1, 1, 8, 1);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut theta = net.init(&mut rng);
            let mut adam = AdamState::new(&theta);
            let b = bandit_batch(&net, &theta, &mut rng);
            let aux = AuxTerms {
                l1: true,
                diversity: None,
            };
            ppo_update(&net, &mut theta, &mut adam, &b, &PpoConfig::default(), &aux, &mut rng).unwrap();
            theta
        };
        assert_eq!(run(), run());
    }
}
