#![allow(dead_code)]

use continual_maze::diffcore::{Bound, Graph, ParamTree, Tensor, Var};
use continual_maze::discriminator::{diversity_loss, DiscriminatorNet};
use continual_maze::eval::EvalRollout;
use continual_maze::policy::ppo::{clipped_surrogate, entropy, prediction_l1, value_loss};
use continual_maze::policy::PolicyNet;
use continual_maze::replay::weighted_cross_entropy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for relative errors, so that entries whose true
/// gradient is ~0 are judged by absolute error instead.
pub const REL_FLOOR: f64 = 1e-5;

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

fn eval_loss(tree: &ParamTree, build: &dyn Fn(&mut Graph, &Bound) -> Var) -> f64 {
    let mut g = Graph::new();
    let b = g.bind_frozen(tree);
    let l = build(&mut g, &b);
    g.value(l).item()
}

/// Largest relative error between reverse-mode gradients and central
/// differences over every scalar of `tree`.
pub fn fd_max_rel_error(tree: &ParamTree, build: &dyn Fn(&mut Graph, &Bound) -> Var) -> f64 {
    let mut g = Graph::new();
    let b = g.bind(tree);
    let l = build(&mut g, &b);
    let grads = g.backward(l).unwrap();
    let analytic = b.gradients(&g, &grads);
    assert!(analytic.global_norm() > 1e-6, "gradient is identically zero; the check would be vacuous");

    let mut worst: f64 = 0.0;
    let mut probe = tree.clone();
    for (li, (_, t)) in tree.iter().enumerate() {
        for k in 0..t.len() {
            let orig = t.data()[k];
            let set = |p: &mut ParamTree, v: f64| {
                p.iter_mut().nth(li).unwrap().1.data_mut()[k] = v;
            };
            set(&mut probe, orig + FD_STEP);
            let up = eval_loss(&probe, build);
            set(&mut probe, orig - FD_STEP);
            let down = eval_loss(&probe, build);
            set(&mut probe, orig);
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic.iter().nth(li).unwrap().1.data()[k];
            worst = worst.max(rel_error(a, numeric));
        }
    }
    worst
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

pub struct GradInstance {
    pub policy: PolicyNet,
    pub theta: ParamTree,
    pub disc: DiscriminatorNet,
    pub phi: ParamTree,
    pub inputs: Tensor,
    pub actions: Tensor,
    pub old_logp: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub real_next: Tensor,
    pub tasks: Vec<usize>,
    pub label: Vec<f64>,
    /// Row groups forming short windows.
    pub windows: Vec<Vec<usize>>,
}

const CLIP: f64 = 0.2;

/// A small random policy/discriminator pair with data placed away from
/// the kinks of clip, min and |·|.
pub fn grad_instance(seed: u64) -> GradInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (obs, ctx, act, n_tasks) = (3, 3, 2, 2);
    let rows = 6;
    let policy = PolicyNet::new(obs, ctx, 5, act);
    let mut theta = policy.init(&mut rng);
    *theta.get_mut("log_std").unwrap() = random_tensor(&mut rng, &[act], 0.5);
    let disc = DiscriminatorNet::new(obs, 4, n_tasks);
    let mut phi = disc.init(&mut rng);
    *phi.get_mut("out.w").unwrap() = random_tensor(&mut rng, &[4, n_tasks], 1.0);
    *phi.get_mut("out.b").unwrap() = random_tensor(&mut rng, &[n_tasks], 0.5);

    let inputs = random_tensor(&mut rng, &[rows, obs + ctx], 1.0);
    let out: Vec<_> = (0..rows)
        .map(|r| {
            let row = inputs.row(r);
            policy.evaluate(&theta, &row[..obs], &row[obs..])
        })
        .collect();
    let actions = random_tensor(&mut rng, &[rows, act], 1.5);
    let logp: Vec<f64> = (0..rows)
        .map(|r| {
            continual_maze::policy::action_log_prob(actions.row(r), &out[r].mean, &out[r].log_std)
        })
        .collect();
    // ratios well inside or well outside the clip band
    let old_logp: Vec<f64> = logp
        .iter()
        .map(|lp| loop {
            let shift: f64 = rng.gen_range(-0.6..0.6);
            let ratio = (-shift).exp();
            if (ratio - (1.0 - CLIP)).abs() > 1e-2 && (ratio - (1.0 + CLIP)).abs() > 1e-2 {
                break lp + shift;
            }
        })
        .collect();
    let advantages = (0..rows).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let returns = (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let real_next = Tensor::new(
        vec![rows, obs],
        (0..rows)
            .flat_map(|r| out[r].next_state.clone())
            .map(|v| loop {
                let d: f64 = rng.gen_range(-1.0..1.0);
                if d.abs() > 1e-2 {
                    break v + d;
                }
            })
            .collect(),
    )
    .unwrap();
    let l0: f64 = rng.gen_range(0.1..0.9);
    GradInstance {
        policy,
        theta,
        disc,
        phi,
        inputs,
        actions,
        old_logp,
        advantages,
        returns,
        real_next,
        tasks: vec![0, 1],
        label: vec![l0, 1.0 - l0],
        windows: vec![vec![0, 1, 2], vec![3, 4]],
    }
}

impl GradInstance {
    fn policy_out(&self, g: &mut Graph, theta: &Bound) -> continual_maze::policy::PolicyVars {
        let x = g.constant(self.inputs.clone());
        self.policy.forward(g, theta, x).unwrap()
    }

    fn disc_logits(&self, g: &mut Graph, phi: &Bound, states: Var) -> Var {
        let (steps, lengths) = self.disc.gathered_inputs(g, states, &self.windows);
        self.disc.forward(g, phi, &steps, &lengths)
    }
}

/// `(loss name, max relative error)` for every differentiable objective.
pub fn gradient_report(seed: u64) -> Vec<(String, f64)> {
    let inst = grad_instance(seed);
    let mut out = Vec::new();

    let e = fd_max_rel_error(&inst.theta, &|g, b| {
        let o = inst.policy_out(g, b);
        let lp = g.gaussian_log_prob(&inst.actions, o.mean, o.log_std);
        let s = clipped_surrogate(g, lp, &inst.old_logp, &inst.advantages, CLIP);
        g.neg(s)
    });
    out.push(("clipped surrogate".to_string(), e));

    let e = fd_max_rel_error(&inst.theta, &|g, b| {
        let o = inst.policy_out(g, b);
        value_loss(g, o.value, &inst.returns)
    });
    out.push(("value loss".to_string(), e));

    let e = fd_max_rel_error(&inst.theta, &|g, b| {
        let o = inst.policy_out(g, b);
        entropy(g, o.log_std)
    });
    out.push(("entropy".to_string(), e));

    let e = fd_max_rel_error(&inst.theta, &|g, b| {
        let o = inst.policy_out(g, b);
        prediction_l1(g, o.next_state, &inst.real_next).unwrap()
    });
    out.push(("next-state L1".to_string(), e));

    let e = fd_max_rel_error(&inst.phi, &|g, b| {
        let x = g.constant(inst.real_next.clone());
        let logits = inst.disc_logits(g, b, x);
        diversity_loss(g, logits, &inst.tasks).0
    });
    out.push(("diversity loss wrt discriminator".to_string(), e));

    let e = fd_max_rel_error(&inst.theta, &|g, b| {
        let o = inst.policy_out(g, b);
        let phi = g.bind_frozen(&inst.phi);
        let logits = inst.disc_logits(g, &phi, o.next_state);
        diversity_loss(g, logits, &inst.tasks).0
    });
    out.push(("diversity loss wrt policy (through predicted states)".to_string(), e));

    let mut states = ParamTree::new();
    states.insert("x", inst.real_next.clone()).unwrap();
    let e = fd_max_rel_error(&states, &|g, b| {
        let phi = g.bind_frozen(&inst.phi);
        let logits = inst.disc_logits(g, &phi, b.var("x"));
        diversity_loss(g, logits, &inst.tasks).0
    });
    out.push(("diversity loss wrt input states".to_string(), e));

    let labels = Tensor::new(vec![1, 2], inst.label.clone()).unwrap();
    let e = fd_max_rel_error(&inst.theta, &|g, b| {
        let o = inst.policy_out(g, b);
        let phi = g.bind_frozen(&inst.phi);
        let (steps, lengths) = inst.disc.gathered_inputs(g, o.next_state, &inst.windows[..1]);
        let logits = inst.disc.forward(g, &phi, &steps, &lengths);
        weighted_cross_entropy(g, logits, &labels).0
    });
    out.push(("weighted cross-entropy wrt policy".to_string(), e));

    let e = fd_max_rel_error(&inst.phi, &|g, b| {
        let x = g.constant(inst.real_next.clone());
        let (steps, lengths) = inst.disc.gathered_inputs(g, x, &inst.windows[..1]);
        let logits = inst.disc.forward(g, b, &steps, &lengths);
        let (ce, _) = weighted_cross_entropy(g, logits, &labels);
        g.neg(ce)
    });
    out.push(("weighted cross-entropy wrt discriminator".to_string(), e));

    let e = fd_max_rel_error(&inst.theta, &|g, b| {
        let o = inst.policy_out(g, b);
        let lp = g.gaussian_log_prob(&inst.actions, o.mean, o.log_std);
        let s = clipped_surrogate(g, lp, &inst.old_logp, &inst.advantages, CLIP);
        let v = value_loss(g, o.value, &inst.returns);
        let h = entropy(g, o.log_std);
        let l1 = prediction_l1(g, o.next_state, &inst.real_next).unwrap();
        let phi = g.bind_frozen(&inst.phi);
        let logits = inst.disc_logits(g, &phi, o.next_state);
        let d = diversity_loss(g, logits, &inst.tasks).0;
        let terms = [(s, -1.0), (v, 0.5), (h, -0.01), (l1, 0.1), (d, 0.5)];
        let mut total = g.scale(terms[0].0, terms[0].1);
        for &(t, k) in &terms[1..] {
            let t = g.scale(t, k);
            total = g.add(total, t);
        }
        total
    });
    out.push(("combined policy objective".to_string(), e));

    out
}

/// NSD written directly from its definition.
pub fn nsd_reference(rollouts: &[EvalRollout], n: usize, t: usize) -> f64 {
    let mut sum = 0.0;
    for r in rollouts {
        sum += (r.start_distance - r.end_distance) / r.start_distance;
    }
    sum / (n as f64 * t as f64)
}

pub mod sc {
    use continual_maze::diffcore::{AdamState, Container, ParamTree, Tensor};
    use continual_maze::discriminator::{make_window, DiscriminatorNet, WindowSource};
    use continual_maze::eval::{Actor, FieldFollower};
    use continual_maze::maze::{Context, MazeEnv, Suite};
    use continual_maze::policy::{sample_action, PolicyNet, RolloutBatch, StepRecord};
    use continual_maze::replay::{
        correction_theta_step, imitation_loss, self_correction_step, CorrectionConfig, CorrectionContext,
        CorrectionPair, CorrectionStats, ReplayMemory,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub const GAMMA: f64 = 0.99;
    pub const TASK: usize = 1;
    pub const HEADING: f64 = 0.3;
    pub const STEPS: usize = 120;
    pub const OUT_SCALE: f64 = 1.0;

    /// A one-episode batch on task 1 of a 3-maze suite, plus networks whose
    /// discriminator output layer is randomized so that its labels are not
    /// uniform.
    pub struct Fixture {
        pub env: MazeEnv,
        pub policy: PolicyNet,
        pub theta: ParamTree,
        pub disc: DiscriminatorNet,
        pub phi: ParamTree,
        pub batch: RolloutBatch,
        pub context: Context,
        /// Optimizer state the θ-steps continue from.
        pub theta_adam: AdamState,
    }

    pub fn fixture(seed: u64) -> Fixture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let env = MazeEnv::new(Suite::bundled_prefix(3).mazes, Default::default());
        let policy = PolicyNet::new(env.obs_dim(), 4, 64, 2);
        let theta = policy.init(&mut rng);
        let disc = DiscriminatorNet::new(env.obs_dim(), 64, 3);
        let mut phi = disc.init(&mut rng);
        let w = phi.get_mut("out.w").unwrap();
        let n = w.len();
        *w = Tensor::new(w.shape().to_vec(), (0..n).map(|_| rng.gen_range(-OUT_SCALE..OUT_SCALE)).collect()).unwrap();
        let adam = AdamState::new(&theta);
        fixture_from(env, policy, theta, adam, disc, phi, &mut rng)
    }

    fn fixture_from(
        env: MazeEnv,
        policy: PolicyNet,
        theta: ParamTree,
        theta_adam: AdamState,
        disc: DiscriminatorNet,
        phi: ParamTree,
        rng: &mut ChaCha8Rng,
    ) -> Fixture {
        let context = Context::new(TASK, 3, 0.25);
        let (mut ep, mut obs) = env.reset_with(TASK, HEADING, context.clone());
        let mut batch = RolloutBatch::new(env.obs_dim(), 4, 2);
        let ctx = context.to_vec();
        let mut terminal = false;
        for _ in 0..STEPS {
            let out = policy.evaluate(&theta, &obs, &ctx);
            let (a, lp) = sample_action(&out.mean, &out.log_std, rng);
            let r = env.step(&mut ep, [a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0)]).unwrap();
            batch.push(StepRecord {
                obs: &obs,
                ctx: &ctx,
                action: &a,
                log_prob: lp,
                reward: r.reward,
                value: out.value,
                next_obs: &r.observation,
                predicted: &out.next_state,
            });
            obs = r.observation;
            if r.done {
                terminal = true;
                break;
            }
        }
        batch.close_segment(TASK, context.clone(), true, HEADING, terminal, 0.0);
        Fixture {
            env,
            policy,
            theta,
            disc,
            phi,
            batch,
            context,
            theta_adam,
        }
    }

    impl Fixture {
        /// States and rewards of the distance-field follower started from
        /// the same heading: a genuinely better trajectory.
        pub fn expert(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
            let mut actor = FieldFollower;
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let (mut ep, mut obs) = self.env.reset_with(TASK, HEADING, self.context.clone());
            let (mut states, mut rewards) = (Vec::new(), Vec::new());
            while !ep.done && states.len() < CorrectionConfig::default().window {
                let a = actor.act(&self.env, &ep, &obs, &mut rng);
                let r = self.env.step(&mut ep, a).unwrap();
                states.push(r.observation.clone());
                rewards.push(r.reward);
                obs = r.observation;
            }
            (states, rewards)
        }

        /// Memory holding `count` copies of the expert's path in the
        /// episode's key. With `delta = None` the rewards are the expert's
        /// own; otherwise they are the current episode's shifted by `delta`.
        pub fn memory(&self, delta: Option<f64>, count: usize) -> ReplayMemory {
            let cfg = CorrectionConfig::default();
            let (states, expert_rewards) = self.expert();
            let n = states.len().min(self.batch.len());
            let mut mem = ReplayMemory::new(cfg.capacity);
            for _ in 0..count {
                let w = make_window(&states[..n], WindowSource::Memory).unwrap();
                let rewards = match delta {
                    None => expert_rewards[..n].to_vec(),
                    Some(d) => self.batch.rewards[..n].iter().map(|r| r + d).collect(),
                };
                mem.store(w, rewards, self.context.clone(), HEADING, GAMMA, 0).unwrap();
            }
            mem
        }

        /// Runs the correction step; returns the stats and the state after it.
        pub fn correct(&self, memory: &mut ReplayMemory, seed: u64) -> (CorrectionStats, ParamTree, ParamTree, AdamState, AdamState) {
            let mut theta = self.theta.clone();
            let mut phi = self.phi.clone();
            let mut ta = AdamState::new(&theta);
            let mut pa = AdamState::new(&phi);
            let mut cx = CorrectionContext {
                policy: &self.policy,
                theta: &mut theta,
                theta_adam: &mut ta,
                disc: &self.disc,
                phi: &mut phi,
                phi_adam: &mut pa,
                memory,
            };
            let stats = self_correction_step(
                &mut cx,
                &self.batch,
                &CorrectionConfig::default(),
                GAMMA,
                0.5,
                1,
                &mut ChaCha8Rng::seed_from_u64(seed),
            )
            .unwrap();
            (stats, theta, phi, ta, pa)
        }

        /// Imitation cross-entropy before and after each of `steps` θ-steps
        /// toward the first memory entry, with φ held fixed.
        pub fn imitation_curve(&self, memory: &ReplayMemory, steps: usize, lr: f64) -> Vec<f64> {
            let cfg = CorrectionConfig::default();
            let (_, entry) = memory.entries().next().unwrap();
            let m = self.batch.len().min(entry.rewards.len()).min(cfg.window);
            let pair = CorrectionPair {
                rows: (0..m).collect(),
                task: TASK,
                current_return: 0.0,
                memory_return: 0.0,
                label: self.disc.discriminate(&self.phi, &[&entry.window]).remove(0),
            };
            let mut theta = self.theta.clone();
            let mut adam = self.theta_adam.clone();
            let mut curve = vec![imitation_loss(&self.policy, &theta, &self.disc, &self.phi, &self.batch, &pair).unwrap()];
            for _ in 0..steps {
                correction_theta_step(&self.policy, &mut theta, &mut adam, &self.disc, &self.phi, &self.batch, &pair, lr, 0.5)
                    .unwrap();
                curve.push(imitation_loss(&self.policy, &theta, &self.disc, &self.phi, &self.batch, &pair).unwrap());
            }
            curve
        }
    }

    pub fn tree_bytes(t: &ParamTree) -> Vec<u8> {
        let mut c = Container::new();
        c.put_tree("", t).unwrap();
        c.to_bytes()
    }
}
