use super::params::ParamTree;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moments per leaf plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: ParamTree,
    pub v: ParamTree,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamTree) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Non-finite gradients abort the step
/// without touching `params` or `state`.
pub fn adam_step(params: &mut ParamTree, grads: &ParamTree, state: &mut AdamState, lr: f64) -> Result<()> {
    if !params.same_layout(grads) || !params.same_layout(&state.m) {
        return Err(Error::Shape("adam: parameter/gradient/state layouts differ".into()));
    }
    if let Some((name, t)) = grads.iter().find(|(_, t)| !t.is_finite()) {
        let bad = t.data().iter().filter(|x| !x.is_finite()).count();
        return Err(Error::NonFinite(format!(
            "adam step {} aborted: gradient `{name}` has {bad} non-finite entries",
            state.step + 1
        )));
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);

    let leaves = params
        .iter_mut()
        .zip(grads.tensors())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()));
    for (((_, p), g), ((_, m), (_, v))) in leaves {
        update_leaf(p, g, m, v, lr, bc1, bc2);
    }
    Ok(())
}

fn update_leaf(p: &mut Tensor, g: &Tensor, m: &mut Tensor, v: &mut Tensor, lr: f64, bc1: f64, bc2: f64) {
    let it = p
        .data_mut()
        .iter_mut()
        .zip(g.data())
        .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
    for ((p, &g), (m, v)) in it {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
}
