//! Layer primitives built on the tape.

use rand::Rng;

use super::graph::{Bound, Graph, Var};
use super::params::{glorot_uniform, ParamTree};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
    Relu,
}

/// `act(x·W + b)` for `x[B×I]`, `W[I×O]`, `b[O]`.
pub fn dense_forward(g: &mut Graph, x: Var, w: Var, b: Var, act: Activation) -> Result<Var> {
    let (xs, ws, bs) = (g.value(x).shape(), g.value(w).shape(), g.value(b).shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs != [ws[1]] {
        return Err(Error::Config(format!(
            "dense layer shapes do not conform: x {xs:?}, W {ws:?}, b {bs:?}"
        )));
    }
    let xw = g.matmul(x, w);
    let y = g.add_row(xw, b);
    Ok(match act {
        Activation::Tanh => g.tanh(y),
        Activation::Identity => y,
        Activation::Relu => g.relu(y),
    })
}

/// Adds `{prefix}.w` (Glorot) and `{prefix}.b` (zeros) to `params`.
pub fn init_dense<R: Rng + ?Sized>(
    params: &mut ParamTree,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Result<()> {
    params.insert(format!("{prefix}.w"), glorot_uniform(rng, fan_in, fan_out))?;
    params.insert(format!("{prefix}.b"), Tensor::zeros(&[fan_out]))
}

/// Zero-initialized dense layer.
pub fn init_dense_zero(params: &mut ParamTree, prefix: &str, fan_in: usize, fan_out: usize) -> Result<()> {
    params.insert(format!("{prefix}.w"), Tensor::zeros(&[fan_in, fan_out]))?;
    params.insert(format!("{prefix}.b"), Tensor::zeros(&[fan_out]))
}

pub fn dense(g: &mut Graph, p: &Bound, prefix: &str, x: Var, act: Activation) -> Result<Var> {
    let w = p.var(&format!("{prefix}.w"));
    let b = p.var(&format!("{prefix}.b"));
    dense_forward(g, x, w, b, act)
}

/// Hidden and cell state of an LSTM layer, each `[B×H]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros(g: &mut Graph, batch: usize, hidden: usize) -> Self {
        let h = g.constant(Tensor::zeros(&[batch, hidden]));
        let c = g.constant(Tensor::zeros(&[batch, hidden]));
        LstmState { h, c }
    }
}

/// Single-layer LSTM with gate order (input, forget, cell, output).
///
/// Leaves: `{prefix}.wx [I×4H]`, `{prefix}.wh [H×4H]`, `{prefix}.b [4H]`.
/// The forget-gate bias starts at 1.
pub fn init_lstm<R: Rng + ?Sized>(
    params: &mut ParamTree,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: &mut R,
) -> Result<()> {
    params.insert(format!("{prefix}.wx"), glorot_uniform(rng, input, 4 * hidden))?;
    params.insert(format!("{prefix}.wh"), glorot_uniform(rng, hidden, 4 * hidden))?;
    let mut b = vec![0.0; 4 * hidden];
    b[hidden..2 * hidden].iter_mut().for_each(|x| *x = 1.0);
    params.insert(format!("{prefix}.b"), Tensor::vector(b))
}

/// One recurrent step; differentiable through `state` and `x_t`.
pub fn recurrent_step(g: &mut Graph, p: &Bound, prefix: &str, state: LstmState, x_t: Var) -> LstmState {
    let wx = p.var(&format!("{prefix}.wx"));
    let wh = p.var(&format!("{prefix}.wh"));
    let b = p.var(&format!("{prefix}.b"));
    let hidden = g.value(wh).rows();

    let zx = g.matmul(x_t, wx);
    let zh = g.matmul(state.h, wh);
    let z = g.add(zx, zh);
    let z = g.add_row(z, b);

    let i = g.slice_cols(z, 0, hidden);
    let f = g.slice_cols(z, hidden, 2 * hidden);
    let c_in = g.slice_cols(z, 2 * hidden, 3 * hidden);
    let o = g.slice_cols(z, 3 * hidden, 4 * hidden);
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let c_in = g.tanh(c_in);
    let o = g.sigmoid(o);

    let keep = g.mul(f, state.c);
    let write = g.mul(i, c_in);
    let c = g.add(keep, write);
    let tc = g.tanh(c);
    let h = g.mul(o, tc);
    LstmState { h, c }
}

/// Log-probabilities with entries below `ln(floor)` clamped. Returns the
/// number of clamped entries alongside.
pub fn clamped_log_softmax(g: &mut Graph, logits: Var, floor: f64) -> (Var, usize) {
    let lp = g.log_softmax_rows(logits);
    let lo = floor.ln();
    let clamped = g.value(lp).data().iter().filter(|&&v| v < lo).count();
    (g.clamp(lp, lo, 0.0), clamped)
}

/// `-mean_b Σ_k target[b,k] · logp[b,k]`.
pub fn soft_cross_entropy(g: &mut Graph, logp: Var, target: Var) -> Var {
    let rows = g.value(logp).rows() as f64;
    let w = g.mul(logp, target);
    let s = g.sum(w);
    g.scale(s, -1.0 / rows)
}
