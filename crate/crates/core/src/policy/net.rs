use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffcore::nn::{dense, init_dense, init_dense_zero};
use crate::diffcore::tensor::matmul;
use crate::diffcore::{gaussian_log_prob, Activation, Bound, Graph, ParamTree, Tensor, Var};
use crate::error::{Error, Result};

/// Shared two-layer tanh trunk with action-mean, next-state and value heads
/// plus a free per-dimension `log_std`.
///
/// Input rows are `[observation, context]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PolicyNet {
    pub obs_dim: usize,
    pub ctx_dim: usize,
    pub hidden: usize,
    pub act_dim: usize,
}

/// Graph nodes produced by [`PolicyNet::forward`].
#[derive(Clone, Copy, Debug)]
pub struct PolicyVars {
    /// `[B×A]`
    pub mean: Var,
    /// `[A]`
    pub log_std: Var,
    /// `[B×obs_dim]`
    pub next_state: Var,
    /// `[B×1]`
    pub value: Var,
}

/// Plain values for one input row.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    pub next_state: Vec<f64>,
    pub value: f64,
}

const LAYERS: [&str; 6] = ["trunk0", "trunk1", "mean", "log_std", "state", "value"];

impl PolicyNet {
    pub fn new(obs_dim: usize, ctx_dim: usize, hidden: usize, act_dim: usize) -> Self {
        PolicyNet {
            obs_dim,
            ctx_dim,
            hidden,
            act_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.ctx_dim
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamTree {
        let mut p = ParamTree::new();
        let h = self.hidden;
        init_dense(&mut p, "trunk0", self.input_dim(), h, rng).unwrap();
        init_dense(&mut p, "trunk1", h, h, rng).unwrap();
        init_dense(&mut p, "mean", h, self.act_dim, rng).unwrap();
        p.insert("log_std", Tensor::zeros(&[self.act_dim])).unwrap();
        init_dense(&mut p, "state", h, self.obs_dim, rng).unwrap();
        init_dense(&mut p, "value", h, 1, rng).unwrap();
        p
    }

    /// Same as [`PolicyNet::init`] with all three heads zeroed.
    pub fn init_zero_heads<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamTree {
        let mut p = ParamTree::new();
        let h = self.hidden;
        init_dense(&mut p, "trunk0", self.input_dim(), h, rng).unwrap();
        init_dense(&mut p, "trunk1", h, h, rng).unwrap();
        init_dense_zero(&mut p, "mean", h, self.act_dim).unwrap();
        p.insert("log_std", Tensor::zeros(&[self.act_dim])).unwrap();
        init_dense_zero(&mut p, "state", h, self.obs_dim).unwrap();
        init_dense_zero(&mut p, "value", h, 1).unwrap();
        p
    }

    /// Recovers the layer sizes from a parameter tree and checks every shape.
    pub fn from_params(p: &ParamTree) -> Result<Self> {
        let shape = |name: &str| -> Result<Vec<usize>> {
            p.get(name)
                .map(|t| t.shape().to_vec())
                .ok_or_else(|| Error::Config(format!("policy parameters lack `{name}`")))
        };
        let t0 = shape("trunk0.w")?;
        let s = shape("state.w")?;
        let m = shape("mean.w")?;
        if t0.len() != 2 || s.len() != 2 || m.len() != 2 {
            return Err(Error::Config("policy weight matrices must be 2-D".into()));
        }
        let obs_dim = s[1];
        if t0[0] < obs_dim {
            return Err(Error::Config("policy input is narrower than its state head".into()));
        }
        let net = PolicyNet::new(obs_dim, t0[0] - obs_dim, t0[1], m[1]);
        let reference = net.init(&mut rand::rngs::mock::StepRng::new(0, 0));
        if !reference.same_layout(p) {
            return Err(Error::Config("policy parameter layout does not match a policy network".into()));
        }
        Ok(net)
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, input: Var) -> Result<PolicyVars> {
        let h1 = dense(g, p, "trunk0", input, Activation::Tanh)?;
        let h2 = dense(g, p, "trunk1", h1, Activation::Tanh)?;
        let mean = dense(g, p, "mean", h2, Activation::Identity)?;
        let next_state = dense(g, p, "state", h2, Activation::Identity)?;
        let value = dense(g, p, "value", h2, Activation::Identity)?;
        Ok(PolicyVars {
            mean,
            log_std: p.var("log_std"),
            next_state,
            value,
        })
    }

    /// Tape-free forward for one input row; bit-identical to [`PolicyNet::forward`].
    pub fn evaluate(&self, p: &ParamTree, obs: &[f64], ctx: &[f64]) -> PolicyOutput {
        debug_assert_eq!(obs.len(), self.obs_dim);
        debug_assert_eq!(ctx.len(), self.ctx_dim);
        let mut x = Vec::with_capacity(self.input_dim());
        x.extend_from_slice(obs);
        x.extend_from_slice(ctx);
        let layer = |name: &str, x: &[f64], tanh: bool| -> Vec<f64> {
            let w = p.get(&format!("{name}.w")).expect("policy weight");
            let b = p.get(&format!("{name}.b")).expect("policy bias");
            let mut y = matmul(x, w.data(), 1, w.rows(), w.cols());
            for (v, bv) in y.iter_mut().zip(b.data()) {
                *v += bv;
                if tanh {
                    *v = v.tanh();
                }
            }
            y
        };
        let h1 = layer("trunk0", &x, true);
        let h2 = layer("trunk1", &h1, true);
        PolicyOutput {
            mean: layer("mean", &h2, false),
            log_std: p.get("log_std").expect("log_std").data().to_vec(),
            next_state: layer("state", &h2, false),
            value: layer("value", &h2, false)[0],
        }
    }

    pub fn layer_names() -> &'static [&'static str] {
        &LAYERS
    }
}

/// `a = mean + exp(log_std) ⊙ ξ`, `ξ ~ N(0, I)`. Returns the raw (unclamped)
/// sample and its log density.
pub fn sample_action<R: Rng + ?Sized>(mean: &[f64], log_std: &[f64], rng: &mut R) -> (Vec<f64>, f64) {
    let a: Vec<f64> = mean
        .iter()
        .zip(log_std)
        .map(|(m, ls)| {
            let xi: f64 = rng.sample(StandardNormal);
            m + ls.exp() * xi
        })
        .collect();
    let lp = action_log_prob(&a, mean, log_std);
    (a, lp)
}

pub fn action_log_prob(a: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    let at = Tensor::new(vec![1, a.len()], a.to_vec()).unwrap();
    let mt = Tensor::new(vec![1, mean.len()], mean.to_vec()).unwrap();
    gaussian_log_prob(&at, &mt, &Tensor::vector(log_std.to_vec()))[0]
}

/// Differential entropy of the diagonal Gaussian: Σ (½ + ½ ln 2π + log_std).
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std
        .iter()
        .map(|ls| 0.5 + 0.5 * crate::diffcore::graph::LN_2PI + ls)
        .sum()
}
