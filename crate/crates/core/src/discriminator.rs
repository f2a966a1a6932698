//! Trajectory discriminator: LSTM encoder, masked average pooling over time,
//! a dense layer to task logits and a softmax.
//!
//! The dense layer is affine, so pooling the hidden states and then applying
//! it gives the same logits as applying it per step and pooling the logits.
//! Only unmasked steps are ever fed through the network, which makes the
//! output independent of padding.

use rand::Rng;

use crate::diffcore::nn::{clamped_log_softmax, init_dense_zero, init_lstm, recurrent_step, LstmState};
use crate::diffcore::{adam_step, AdamState, Bound, Graph, ParamTree, Tensor, Var};
use crate::error::{Error, Result};

/// Fixed discriminator input length.
pub const WINDOW_LEN: usize = 100;

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowSource {
    Real,
    Predicted,
    Memory,
}

/// `WINDOW_LEN` states with a mask; masked entries form a suffix.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryWindow {
    pub states: Vec<Vec<f64>>,
    pub mask: Vec<bool>,
    pub source: WindowSource,
}

/// First `WINDOW_LEN` states, or all of them zero-padded with a mask.
pub fn make_window(states: &[Vec<f64>], source: WindowSource) -> Result<TrajectoryWindow> {
    let Some(first) = states.first() else {
        return Err(Error::Usage("cannot build a window from an empty sequence".into()));
    };
    let dim = first.len();
    let n = states.len().min(WINDOW_LEN);
    let mut out = Vec::with_capacity(WINDOW_LEN);
    out.extend(states[..n].iter().cloned());
    out.resize(WINDOW_LEN, vec![0.0; dim]);
    let mask = (0..WINDOW_LEN).map(|t| t < n).collect();
    Ok(TrajectoryWindow {
        states: out,
        mask,
        source,
    })
}

impl TrajectoryWindow {
    /// Number of unmasked steps.
    pub fn len(&self) -> usize {
        self.mask.iter().take_while(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn valid_states(&self) -> &[Vec<f64>] {
        &self.states[..self.len()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiscriminatorNet {
    pub state_dim: usize,
    pub hidden: usize,
    pub n_tasks: usize,
}

impl DiscriminatorNet {
    pub fn new(state_dim: usize, hidden: usize, n_tasks: usize) -> Self {
        DiscriminatorNet {
            state_dim,
            hidden,
            n_tasks,
        }
    }

    /// LSTM with the usual uniform init; the output layer starts at zero so a
    /// fresh discriminator is exactly uniform.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamTree {
        let mut p = ParamTree::new();
        init_lstm(&mut p, "lstm", self.state_dim, self.hidden, rng).unwrap();
        init_dense_zero(&mut p, "out", self.hidden, self.n_tasks).unwrap();
        p
    }

    pub fn from_params(p: &ParamTree) -> Result<Self> {
        let wx = p
            .get("lstm.wx")
            .ok_or_else(|| Error::Config("discriminator parameters lack `lstm.wx`".into()))?;
        let out = p
            .get("out.w")
            .ok_or_else(|| Error::Config("discriminator parameters lack `out.w`".into()))?;
        if wx.shape().len() != 2 || out.shape().len() != 2 {
            return Err(Error::Config("discriminator weights must be 2-D".into()));
        }
        let net = DiscriminatorNet::new(wx.rows(), wx.cols() / 4, out.cols());
        let reference = net.init(&mut rand::rngs::mock::StepRng::new(0, 0));
        if !reference.same_layout(p) {
            return Err(Error::Config("discriminator parameter layout mismatch".into()));
        }
        Ok(net)
    }

    /// Pooled logits `[B×N]` from time-major inputs: `steps[t]` is `[B×S]`,
    /// and row `b` is valid for `t < lengths[b]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, steps: &[Var], lengths: &[usize]) -> Var {
        let batch = lengths.len();
        assert!(lengths.iter().all(|&l| l >= 1), "every window needs one valid step");
        let max_len = *lengths.iter().max().expect("non-empty batch");
        assert!(steps.len() >= max_len, "fewer input steps than the longest window");

        let mut state = LstmState::zeros(g, batch, self.hidden);
        let mut pooled: Option<Var> = None;
        for (t, &x) in steps.iter().enumerate().take(max_len) {
            state = recurrent_step(g, p, "lstm", state, x);
            let w: Vec<f64> = lengths
                .iter()
                .map(|&l| if t < l { 1.0 / l as f64 } else { 0.0 })
                .collect();
            let contrib = g.scale_rows(state.h, &w);
            pooled = Some(match pooled {
                Some(acc) => g.add(acc, contrib),
                None => contrib,
            });
        }
        let pooled = pooled.expect("at least one step");
        let w = p.var("out.w");
        let b = p.var("out.b");
        let z = g.matmul(pooled, w);
        g.add_row(z, b)
    }

    /// Constant time-major inputs for a batch of windows.
    pub fn window_inputs(&self, g: &mut Graph, windows: &[&TrajectoryWindow]) -> (Vec<Var>, Vec<usize>) {
        let lengths: Vec<usize> = windows.iter().map(|w| w.len()).collect();
        let max_len = lengths.iter().copied().max().unwrap_or(0);
        let mut steps = Vec::with_capacity(max_len);
        for t in 0..max_len {
            let mut data = Vec::with_capacity(windows.len() * self.state_dim);
            for w in windows {
                if t < w.len() {
                    data.extend_from_slice(&w.states[t]);
                } else {
                    data.extend(std::iter::repeat(0.0).take(self.state_dim));
                }
            }
            steps.push(g.constant(Tensor::new(vec![windows.len(), self.state_dim], data).unwrap()));
        }
        (steps, lengths)
    }

    /// Time-major inputs gathered from rows of a differentiable `[R×S]` node.
    /// `rows[b]` lists the row indices of window `b` in time order.
    pub fn gathered_inputs(&self, g: &mut Graph, source: Var, rows: &[Vec<usize>]) -> (Vec<Var>, Vec<usize>) {
        let lengths: Vec<usize> = rows.iter().map(|r| r.len().min(WINDOW_LEN)).collect();
        let max_len = lengths.iter().copied().max().unwrap_or(0);
        let steps = (0..max_len)
            .map(|t| {
                let idx: Vec<Option<usize>> = rows
                    .iter()
                    .zip(&lengths)
                    .map(|(r, &l)| (t < l).then(|| r[t]))
                    .collect();
                g.gather_rows(source, &idx)
            })
            .collect();
        (steps, lengths)
    }

    /// Task probabilities for each window.
    pub fn discriminate(&self, params: &ParamTree, windows: &[&TrajectoryWindow]) -> Vec<Vec<f64>> {
        if windows.is_empty() {
            return Vec::new();
        }
        let mut g = Graph::new();
        let p = g.bind_frozen(params);
        let (steps, lengths) = self.window_inputs(&mut g, windows);
        let logits = self.forward(&mut g, &p, &steps, &lengths);
        let probs = g.softmax_rows(logits);
        let t = g.value(probs);
        (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
    }
}

/// Mean over the batch of `−log p[task]`, with `p` clamped at
/// [`PROB_FLOOR`]. Returns the loss node and the number of clamped entries.
pub fn diversity_loss(g: &mut Graph, logits: Var, tasks: &[usize]) -> (Var, usize) {
    let (lp, clamped) = clamped_log_softmax(g, logits, PROB_FLOOR);
    let n = g.value(logits).cols();
    let mut onehot = Tensor::zeros(&[tasks.len(), n]);
    for (b, &k) in tasks.iter().enumerate() {
        onehot.data_mut()[b * n + k] = 1.0;
    }
    let target = g.constant(onehot);
    (crate::diffcore::nn::soft_cross_entropy(g, lp, target), clamped)
}

/// `−log probs[k]` for one probability vector.
pub fn diversity_loss_value(probs: &[f64], task: usize) -> f64 {
    let p = probs[task];
    if p < PROB_FLOOR {
        log::debug!("diversity loss: p[{task}] = {p:e} clamped to {PROB_FLOOR:e}");
    }
    -p.max(PROB_FLOOR).ln()
}

/// One Adam step on the mean diversity loss of `windows`, gradients to the
/// discriminator only. Returns the loss before the step.
pub fn discriminator_update(
    net: &DiscriminatorNet,
    params: &mut ParamTree,
    adam: &mut AdamState,
    windows: &[&TrajectoryWindow],
    tasks: &[usize],
    lr: f64,
) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Usage("discriminator update needs a non-empty batch".into()));
    }
    let mut g = Graph::new();
    let p = g.bind(params);
    let (steps, lengths) = net.window_inputs(&mut g, windows);
    let logits = net.forward(&mut g, &p, &steps, &lengths);
    let (loss, clamped) = diversity_loss(&mut g, logits, tasks);
    if clamped > 0 {
        log::debug!("discriminator update: {clamped} probabilities clamped");
    }
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("discriminator loss {value}")));
    }
    let grads = g.backward(loss)?;
    let grads = p.gradients(&g, &grads);
    adam_step(params, &grads, adam, lr)?;
    Ok(value)
}

/// Fraction of windows whose argmax matches the task.
pub fn accuracy(net: &DiscriminatorNet, params: &ParamTree, windows: &[&TrajectoryWindow], tasks: &[usize]) -> f64 {
    if windows.is_empty() {
        return 0.0;
    }
    let probs = net.discriminate(params, windows);
    let hits = probs
        .iter()
        .zip(tasks)
        .filter(|(p, &k)| argmax(p) == k)
        .count();
    hits as f64 / windows.len() as f64
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}
