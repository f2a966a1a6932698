//! The sequential-task training loop with checkpoint and resume.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Ablation, RunConfig, TaskSchedule};
use super::log::{LogHeader, LogRecord, TrainLogWriter, TRAINLOG_FORMAT, TRAINLOG_VERSION};
use crate::diffcore::{AdamState, Container, ParamTree, Tensor};
use crate::discriminator::{discriminator_update, make_window, DiscriminatorNet, TrajectoryWindow, WindowSource, WINDOW_LEN};
use crate::error::{Error, Result};
use crate::eval::{collect_rollouts, nsd, PolicyActor};
use crate::maze::{AgentState, Context, Episode, MazeEnv, MazeSpec, Point, Suite};
use crate::policy::ppo::{AuxTerms, DiversityTerm};
use crate::policy::{compute_advantages, gaussian_entropy, ppo_update, sample_action, PolicyNet, RolloutBatch, StepRecord};
use crate::replay::{self_correction_step, CorrectionContext, ReplayMemory};

pub const CHECKPOINT_VERSION: u64 = 1;
pub const CHECKPOINT_FILE: &str = "checkpoint.cmz";
pub const MEMORY_FILE: &str = "memory.cmz";
pub const LOG_FILE: &str = "train.ndjson";
pub const CONFIG_FILE: &str = "config.toml";

/// Everything that evolves during a run.
pub struct Trainer {
    pub cfg: RunConfig,
    pub env: MazeEnv,
    pub schedule: TaskSchedule,
    pub policy: PolicyNet,
    pub theta: ParamTree,
    pub theta_adam: AdamState,
    pub disc: DiscriminatorNet,
    pub phi: ParamTree,
    pub phi_adam: AdamState,
    pub memory: ReplayMemory,
    pub rng: ChaCha8Rng,
    pub step: u64,
    /// Episode carried over from the previous rollout, with its reward so far.
    pub episode: Option<(Episode, f64)>,
}

/// Suite named by the config, truncated to `n_tasks`.
pub fn load_suite(cfg: &RunConfig) -> Result<Suite> {
    let mut suite = match cfg.suite_path() {
        Some(p) => Suite::load(&p)?,
        None => Suite::bundled(),
    };
    if cfg.n_tasks > 0 {
        if cfg.n_tasks > suite.len() {
            return Err(Error::Config(format!(
                "n_tasks = {} but the suite has {} mazes",
                cfg.n_tasks,
                suite.len()
            )));
        }
        suite.mazes.truncate(cfg.n_tasks);
        suite.expected_distances.truncate(cfg.n_tasks);
    }
    Ok(suite)
}

impl Trainer {
    pub fn new(cfg: RunConfig, mazes: Vec<MazeSpec>) -> Result<Self> {
        cfg.validate()?;
        if mazes.is_empty() {
            return Err(Error::Config("no mazes to train on".into()));
        }
        let env = MazeEnv::new(mazes, cfg.env.clone());
        let n = env.n_tasks();
        let schedule = TaskSchedule::even(cfg.total_timesteps, n);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let policy = PolicyNet::new(env.obs_dim(), n + 1, cfg.policy_hidden, 2);
        let theta = policy.init(&mut rng);
        let disc = DiscriminatorNet::new(env.obs_dim(), cfg.disc_hidden, n);
        let phi = disc.init(&mut rng);
        Ok(Trainer {
            theta_adam: AdamState::new(&theta),
            phi_adam: AdamState::new(&phi),
            memory: ReplayMemory::new(cfg.memory_capacity),
            cfg,
            env,
            schedule,
            policy,
            theta,
            disc,
            phi,
            rng,
            step: 0,
            episode: None,
        })
    }

    pub fn ablation(&self) -> Ablation {
        self.cfg.ablation()
    }

    pub fn finished(&self) -> bool {
        self.step >= self.schedule.total()
    }

    pub fn log_header(&self) -> LogHeader {
        LogHeader {
            format: TRAINLOG_FORMAT.into(),
            version: TRAINLOG_VERSION,
            ablation: self.ablation().name().into(),
            seed: self.cfg.seed,
            tasks: self.env.tasks.iter().map(|t| t.maze.name.clone()).collect(),
            budgets: self.schedule.budgets.clone(),
        }
    }

    /// Context task for a new episode while training on `current`.
    fn sample_task(&mut self, current: usize) -> usize {
        if current == 0 {
            return 0;
        }
        let u: f64 = self.rng.gen();
        if u < self.cfg.current_task_mass {
            current
        } else {
            self.rng.gen_range(0..current)
        }
    }

    /// Collects up to `horizon` steps without crossing the task boundary.
    fn collect(&mut self, current: usize, task_end: u64) -> Result<(RolloutBatch, Vec<f64>)> {
        let h = (self.cfg.horizon as u64).min(task_end - self.step) as usize;
        let mut batch = RolloutBatch::new(self.env.obs_dim(), self.policy.ctx_dim, 2);
        let mut finished = Vec::new();

        let mut current_ep = self.episode.take();
        let mut seg_starts_episode = current_ep.as_ref().is_none_or(|(ep, _)| ep.t == 0);
        let mut obs = current_ep
            .as_ref()
            .map(|(ep, _)| self.env.observe(ep.task, &ep.state));

        for _ in 0..h {
            if current_ep.is_none() {
                let task = self.sample_task(current);
                let (ep, o) = self.env.reset(task, &mut self.rng)?;
                current_ep = Some((ep, 0.0));
                obs = Some(o);
                seg_starts_episode = true;
            }
            let (ep, ep_reward) = current_ep.as_mut().expect("episode in progress");
            let o = obs.take().expect("observation");
            let ctx = ep.context.to_vec();
            let out = self.policy.evaluate(&self.theta, &o, &ctx);
            let (a, lp) = sample_action(&out.mean, &out.log_std, &mut self.rng);
            let res = self.env.step(ep, [a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0)])?;
            *ep_reward += res.reward;
            batch.push(StepRecord {
                obs: &o,
                ctx: &ctx,
                action: &a,
                log_prob: lp,
                reward: res.reward,
                value: out.value,
                next_obs: &res.observation,
                predicted: &out.next_state,
            });
            if res.done {
                let (ep, r) = current_ep.take().expect("episode");
                batch.close_segment(ep.task, ep.context, seg_starts_episode, ep.initial_heading, true, 0.0);
                finished.push(r);
            } else {
                obs = Some(res.observation);
            }
        }
        if let Some((ep, r)) = current_ep {
            let o = obs.expect("observation");
            let v = self.policy.evaluate(&self.theta, &o, &ep.context.to_vec()).value;
            batch.close_segment(
                ep.task,
                ep.context.clone(),
                seg_starts_episode,
                ep.initial_heading,
                false,
                v,
            );
            if self.step + (h as u64) < task_end {
                self.episode = Some((ep, r));
            }
        }
        self.step += h as u64;
        Ok((batch, finished))
    }

    /// One rollout plus all updates. Returns the log record.
    pub fn iterate(&mut self) -> Result<LogRecord> {
        let (current, task_end) = self
            .schedule
            .task_at(self.step)
            .ok_or_else(|| Error::Usage("training already finished".into()))?;
        let prev_step = self.step;
        let (mut batch, finished) = self.collect(current, task_end)?;
        let ppo_cfg = self.cfg.ppo();
        compute_advantages(&mut batch, ppo_cfg.gamma, ppo_cfg.gae_lambda);

        let mut rec = LogRecord {
            task: current,
            rollout_steps: batch.len(),
            episodes_finished: finished.len(),
            mean_episode_reward: if finished.is_empty() {
                0.0
            } else {
                finished.iter().sum::<f64>() / finished.len() as f64
            },
            mean_step_reward: batch.rewards.iter().sum::<f64>() / batch.len() as f64,
            ..Default::default()
        };

        let de = self.cfg.diversity;
        let windows: Vec<(Vec<usize>, usize)> = if de {
            batch
                .segments
                .iter()
                .filter(|s| s.starts_episode)
                .map(|s| ((s.start..s.start + s.len.min(WINDOW_LEN)).collect(), s.task))
                .collect()
        } else {
            Vec::new()
        };

        let stats = {
            let aux = AuxTerms {
                l1: de,
                diversity: (de && !windows.is_empty()).then(|| DiversityTerm {
                    net: &self.disc,
                    params: &self.phi,
                    windows: windows.clone(),
                }),
            };
            ppo_update(
                &self.policy,
                &mut self.theta,
                &mut self.theta_adam,
                &batch,
                &ppo_cfg,
                &aux,
                &mut self.rng,
            )?
        };
        rec.surrogate = stats.surrogate;
        rec.value_loss = stats.value_loss;
        rec.l1_loss = stats.l1;
        rec.diversity_loss = stats.diversity;
        rec.skipped_minibatches = stats.skipped;

        if de && !windows.is_empty() {
            rec.disc_loss = self.update_discriminator(&batch, &windows)?;
        }

        if self.cfg.self_correction {
            let sc_cfg = self.cfg.correction();
            let mut cx = CorrectionContext {
                policy: &self.policy,
                theta: &mut self.theta,
                theta_adam: &mut self.theta_adam,
                disc: &self.disc,
                phi: &mut self.phi,
                phi_adam: &mut self.phi_adam,
                memory: &mut self.memory,
            };
            let sc = self_correction_step(
                &mut cx,
                &batch,
                &sc_cfg,
                ppo_cfg.gamma,
                ppo_cfg.max_grad_norm,
                self.step,
                &mut self.rng,
            )?;
            rec.gated_fraction = sc.gated_fraction;
        }

        rec.entropy = gaussian_entropy(self.theta.get("log_std").expect("log_std").data());
        rec.step = self.step;
        if self.cfg.eval_every > 0 && prev_step / self.cfg.eval_every != self.step / self.cfg.eval_every {
            rec.nsd = Some(self.periodic_eval(current)?);
        }
        Ok(rec)
    }

    fn update_discriminator(&mut self, batch: &RolloutBatch, windows: &[(Vec<usize>, usize)]) -> Result<f64> {
        let dim = batch.obs_dim;
        let mut wins: Vec<TrajectoryWindow> = Vec::new();
        let mut tasks = Vec::new();
        for (rows, task) in windows {
            let pred: Vec<Vec<f64>> = rows
                .iter()
                .map(|&k| batch.predicted[k * dim..(k + 1) * dim].to_vec())
                .collect();
            wins.push(make_window(&pred, WindowSource::Predicted)?);
            tasks.push(*task);
            if self.cfg.disc_train_on_real {
                let real: Vec<Vec<f64>> = rows.iter().map(|&k| batch.next_obs_row(k).to_vec()).collect();
                wins.push(make_window(&real, WindowSource::Real)?);
                tasks.push(*task);
            }
        }
        let refs: Vec<&TrajectoryWindow> = wins.iter().collect();
        let mut total = 0.0;
        for _ in 0..self.cfg.disc_steps {
            total += discriminator_update(&self.disc, &mut self.phi, &mut self.phi_adam, &refs, &tasks, self.cfg.alpha2)?;
        }
        Ok(if self.cfg.disc_steps > 0 {
            total / self.cfg.disc_steps as f64
        } else {
            0.0
        })
    }

    /// NSD over tasks `0..=current`, with its own RNG streams.
    pub fn periodic_eval(&self, current: usize) -> Result<f64> {
        let tasks: Vec<usize> = (0..=current).collect();
        let mut actor = PolicyActor {
            net: &self.policy,
            theta: &self.theta,
            deterministic: false,
        };
        let seed = self.cfg.seed ^ self.step.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let rs = collect_rollouts(&self.env, &mut actor, &tasks, self.cfg.eval_episodes, seed, None)?;
        nsd(&rs, tasks.len(), self.cfg.eval_episodes)
    }

    /// Trains until `stop_at` (or the end), handing each record to `sink`.
    pub fn run_until(&mut self, stop_at: u64, sink: &mut dyn FnMut(&Trainer, &LogRecord) -> Result<()>) -> Result<()> {
        while !self.finished() && self.step < stop_at {
            let rec = self.iterate()?;
            sink(self, &rec)?;
        }
        Ok(())
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        c.put_u64("meta.version", CHECKPOINT_VERSION)?;
        c.put_u64("meta.step", self.step)?;
        c.put_u64("meta.seed", self.cfg.seed)?;
        c.put_u64("meta.n_tasks", self.env.n_tasks() as u64)?;
        c.put_u64("meta.obs_dim", self.env.obs_dim() as u64)?;
        c.put_u64("meta.diversity", u64::from(self.cfg.diversity))?;
        c.put_u64("meta.self_correction", u64::from(self.cfg.self_correction))?;
        c.put_tree("theta.", &self.theta)?;
        c.put_tree("phi.", &self.phi)?;
        put_adam(&mut c, "theta_adam.", &self.theta_adam)?;
        put_adam(&mut c, "phi_adam.", &self.phi_adam)?;

        let seed = self.rng.get_seed();
        for (i, chunk) in seed.chunks(8).enumerate() {
            c.put_u64(format!("rng.seed{i}"), u64::from_le_bytes(chunk.try_into().unwrap()))?;
        }
        c.put_u64("rng.stream", self.rng.get_stream())?;
        let pos = self.rng.get_word_pos();
        c.put_u64("rng.word_pos_hi", (pos >> 64) as u64)?;
        c.put_u64("rng.word_pos_lo", pos as u64)?;

        match &self.episode {
            None => c.put_u64("episode.active", 0)?,
            Some((ep, r)) => {
                c.put_u64("episode.active", 1)?;
                c.put_u64("episode.task", ep.task as u64)?;
                c.put_u64("episode.t", ep.t as u64)?;
                c.put(
                    "episode.state",
                    Tensor::vector(vec![
                        ep.state.pos.x,
                        ep.state.pos.y,
                        ep.state.heading,
                        ep.state.speed,
                        ep.initial_heading,
                        ep.distance,
                        *r,
                    ]),
                )?;
                c.put("episode.context", Tensor::vector(ep.context.to_vec()))?;
            }
        }
        Ok(c)
    }

    /// Restores the evolving state from a checkpoint written by a trainer
    /// built from the same config.
    pub fn restore(&mut self, c: &Container) -> Result<()> {
        if c.get_u64("meta.version")? != CHECKPOINT_VERSION {
            return Err(Error::Format("unsupported checkpoint version".into()));
        }
        let n = c.get_u64("meta.n_tasks")? as usize;
        let obs = c.get_u64("meta.obs_dim")? as usize;
        if n != self.env.n_tasks() || obs != self.env.obs_dim() {
            return Err(Error::Config(format!(
                "checkpoint has {n} tasks and {obs}-dim observations; the config gives {} and {}",
                self.env.n_tasks(),
                self.env.obs_dim()
            )));
        }
        if c.get_u64("meta.seed")? != self.cfg.seed
            || (c.get_u64("meta.diversity")? == 1) != self.cfg.diversity
            || (c.get_u64("meta.self_correction")? == 1) != self.cfg.self_correction
        {
            return Err(Error::Config("checkpoint seed or ablation differs from the config".into()));
        }
        let theta = c.get_tree("theta.");
        let phi = c.get_tree("phi.");
        if !theta.same_layout(&self.theta) || !phi.same_layout(&self.phi) {
            return Err(Error::Config("checkpoint network shapes differ from the config".into()));
        }
        self.theta = theta;
        self.phi = phi;
        self.theta_adam = get_adam(c, "theta_adam.")?;
        self.phi_adam = get_adam(c, "phi_adam.")?;
        self.step = c.get_u64("meta.step")?;

        let mut seed = [0u8; 32];
        for i in 0..4 {
            seed[i * 8..(i + 1) * 8].copy_from_slice(&c.get_u64(&format!("rng.seed{i}"))?.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(c.get_u64("rng.stream")?);
        let pos = (u128::from(c.get_u64("rng.word_pos_hi")?) << 64) | u128::from(c.get_u64("rng.word_pos_lo")?);
        rng.set_word_pos(pos);
        self.rng = rng;

        self.episode = if c.get_u64("episode.active")? == 1 {
            let task = c.get_u64("episode.task")? as usize;
            let s = c.get("episode.state")?.data().to_vec();
            let ctx = c.get("episode.context")?.data().to_vec();
            if task >= n || s.len() != 7 || ctx.len() != n + 1 {
                return Err(Error::Format("malformed in-progress episode".into()));
            }
            let context = Context {
                task_onehot: ctx[..n].to_vec(),
                z: ctx[n],
            };
            let ep = Episode {
                task,
                state: AgentState {
                    pos: Point::new(s[0], s[1]),
                    heading: s[2],
                    speed: s[3],
                },
                context,
                t: c.get_u64("episode.t")? as usize,
                initial_heading: s[4],
                distance: s[5],
                done: false,
            };
            Some((ep, s[6]))
        } else {
            None
        };
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.to_container()?.save(&dir.join(CHECKPOINT_FILE))?;
        let mut m = Container::new();
        self.memory.save_into(&mut m, "memory.")?;
        m.save(&dir.join(MEMORY_FILE))
    }

    pub fn load(&mut self, dir: &Path) -> Result<()> {
        self.restore(&Container::load(&dir.join(CHECKPOINT_FILE))?)?;
        let mem_path = dir.join(MEMORY_FILE);
        self.memory = if mem_path.exists() {
            ReplayMemory::load_from(&Container::load(&mem_path)?, "memory.", self.cfg.gamma)?
        } else {
            ReplayMemory::new(self.cfg.memory_capacity)
        };
        Ok(())
    }
}

fn put_adam(c: &mut Container, prefix: &str, a: &AdamState) -> Result<()> {
    c.put_tree(&format!("{prefix}m."), &a.m)?;
    c.put_tree(&format!("{prefix}v."), &a.v)?;
    c.put_u64(format!("{prefix}step"), a.step)
}

fn get_adam(c: &Container, prefix: &str) -> Result<AdamState> {
    Ok(AdamState {
        m: c.get_tree(&format!("{prefix}m.")),
        v: c.get_tree(&format!("{prefix}v.")),
        step: c.get_u64(&format!("{prefix}step"))?,
    })
}

/// Policy parameters from a checkpoint file.
pub fn load_policy(path: &Path) -> Result<(PolicyNet, ParamTree)> {
    let c = Container::load(path)?;
    let theta = c.get_tree("theta.");
    if theta.is_empty() {
        return Err(Error::Format(format!("{}: no policy parameters", path.display())));
    }
    let net = PolicyNet::from_params(&theta)?;
    Ok((net, theta))
}

/// A full run in `out_dir`: config, log, periodic and final checkpoints.
/// With `resume`, continues from the checkpoint already in `out_dir`.
pub fn train_to_dir(cfg: &RunConfig, out_dir: &Path, resume: bool) -> Result<Trainer> {
    train_to_dir_until(cfg, out_dir, resume, u64::MAX)
}

/// Like [`train_to_dir`] but stops (with a checkpoint) once `stop_at`
/// steps are reached.
pub fn train_to_dir_until(cfg: &RunConfig, out_dir: &Path, resume: bool, stop_at: u64) -> Result<Trainer> {
    std::fs::create_dir_all(out_dir)?;
    let suite = load_suite(cfg)?;
    let mut trainer = Trainer::new(cfg.clone(), suite.mazes)?;
    let log_path: PathBuf = out_dir.join(LOG_FILE);
    let mut log = if resume {
        trainer.load(out_dir)?;
        TrainLogWriter::resume(&log_path, trainer.step)?
    } else {
        std::fs::write(out_dir.join(CONFIG_FILE), cfg.to_toml())?;
        TrainLogWriter::create(&log_path, &trainer.log_header())?
    };
    let every = cfg.checkpoint_every;
    let mut sink = |t: &Trainer, rec: &LogRecord| -> Result<()> {
        log.append(rec)?;
        log::info!(
            "step {:>7} task {} ep_reward {:+.3} entropy {:.3}{}",
            rec.step,
            rec.task,
            rec.mean_episode_reward,
            rec.entropy,
            rec.nsd.map(|v| format!(" nsd {:.1}%", v * 100.0)).unwrap_or_default()
        );
        if every > 0 && (rec.step - rec.rollout_steps as u64) / every != rec.step / every {
            log.flush()?;
            t.save(out_dir)?;
        }
        Ok(())
    };
    let result = trainer.run_until(stop_at, &mut sink);
    log.flush()?;
    if let Err(e) = result {
        let failed = out_dir.join("failed");
        std::fs::create_dir_all(&failed)?;
        trainer.save(&failed)?;
        log::error!("training aborted at step {}: {e}; state saved to {}", trainer.step, failed.display());
        return Err(e);
    }
    trainer.save(out_dir)?;
    Ok(trainer)
}
