//! Test-time rollouts and the shortening metrics.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::ParamTree;
use crate::error::{Error, Result};
use crate::maze::trajlog::TrajRecord;
use crate::maze::{DoneReason, Episode, MazeEnv, Point};
use crate::policy::{sample_action, PolicyNet};

/// Chooses an action for the current step.
pub trait Actor {
    fn act(&mut self, env: &MazeEnv, ep: &Episode, obs: &[f64], rng: &mut ChaCha8Rng) -> [f64; 2];
}

/// The trained policy, sampling by default or taking the mean action.
pub struct PolicyActor<'a> {
    pub net: &'a PolicyNet,
    pub theta: &'a ParamTree,
    pub deterministic: bool,
}

impl Actor for PolicyActor<'_> {
    fn act(&mut self, _env: &MazeEnv, ep: &Episode, obs: &[f64], rng: &mut ChaCha8Rng) -> [f64; 2] {
        let out = self.net.evaluate(self.theta, obs, &ep.context.to_vec());
        let a = if self.deterministic {
            out.mean
        } else {
            sample_action(&out.mean, &out.log_std, rng).0
        };
        [a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0)]
    }
}

/// Brakes to a stop and stays put.
pub struct Immobile;

impl Actor for Immobile {
    fn act(&mut self, _: &MazeEnv, _: &Episode, _: &[f64], _: &mut ChaCha8Rng) -> [f64; 2] {
        [-1.0, 0.0]
    }
}

/// Turns toward the goal in a straight line and drives once roughly aligned.
pub struct SteerToGoal;

impl Actor for SteerToGoal {
    fn act(&mut self, env: &MazeEnv, ep: &Episode, _: &[f64], _: &mut ChaCha8Rng) -> [f64; 2] {
        let goal = env.tasks[ep.task].maze.goal;
        let want = (goal.y - ep.state.pos.y).atan2(goal.x - ep.state.pos.x);
        let err = crate::maze::env::wrap_angle(want - ep.state.heading);
        let turn = (err / (env.params.turn_max * env.params.dt)).clamp(-1.0, 1.0);
        let accel = if err.abs() < 0.3 { 1.0 } else { -1.0 };
        [accel, turn]
    }
}

/// Follows the distance field downhill: steers at the center of the
/// lowest-valued neighboring cell, or at the goal once in its cell.
pub struct FieldFollower;

impl Actor for FieldFollower {
    fn act(&mut self, env: &MazeEnv, ep: &Episode, _: &[f64], _: &mut ChaCha8Rng) -> [f64; 2] {
        let task = &env.tasks[ep.task];
        let maze = &task.maze;
        let (r, c) = maze.cell_of(ep.state.pos);
        let target = if (r as usize, c as usize) == maze.goal_cell() {
            maze.goal
        } else {
            let mut best = (task.field.at_cell(r as usize, c as usize), Point::new(c as f64 + 0.5, r as f64 + 0.5));
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (nr, nc) = (r + dr, c + dc);
                    if maze.is_wall(nr, nc) || (dr != 0 && dc != 0 && (maze.is_wall(r + dr, c) || maze.is_wall(r, c + dc))) {
                        continue;
                    }
                    let v = task.field.at_cell(nr as usize, nc as usize);
                    if v < best.0 {
                        best = (v, Point::new(nc as f64 + 0.5, nr as f64 + 0.5));
                    }
                }
            }
            best.1
        };
        let want = (target.y - ep.state.pos.y).atan2(target.x - ep.state.pos.x);
        let err = crate::maze::env::wrap_angle(want - ep.state.heading);
        let turn = (err / (env.params.turn_max * env.params.dt)).clamp(-1.0, 1.0);
        let accel = if err.abs() < 0.2 { 1.0 } else { -1.0 };
        [accel, turn]
    }
}

/// Lower bound on the NSD of an agent that touches every goal.
///
/// At a goal touch the agent is within half a cell of the goal center, so
/// the interpolated field value is a convex combination of cell values in
/// the 3x3 block around the goal cell. With `b_i` the largest such value,
/// `NSD >= 1 - mean_i(b_i / d_0^i)`.
pub fn goal_touch_nsd_bound(env: &MazeEnv, tasks: &[usize]) -> f64 {
    let mut acc = 0.0;
    for &i in tasks {
        let t = &env.tasks[i];
        let (gr, gc) = t.maze.goal_cell();
        let mut b: f64 = 0.0;
        for r in gr.saturating_sub(1)..=gr + 1 {
            for c in gc.saturating_sub(1)..=gc + 1 {
                if r < t.maze.height && c < t.maze.width {
                    let v = t.field.at_cell(r, c);
                    if v.is_finite() {
                        b = b.max(v);
                    }
                }
            }
        }
        acc += b / t.start_distance;
    }
    1.0 - acc / tasks.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRollout {
    pub task: usize,
    pub index: usize,
    pub start: Point,
    pub end: Point,
    pub goal: Point,
    /// d(p₀, g)
    pub start_distance: f64,
    /// d(pₙ, g), the field value where the episode stopped.
    pub end_distance: f64,
    pub reward_sum: f64,
    pub steps: usize,
    pub done_reason: DoneReason,
}

/// Per-episode RNG: stream `(task << 32) | index` of the master seed.
pub fn episode_rng(seed: u64, task: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((task as u64) << 32) | index as u64);
    rng
}

/// Runs one episode to completion.
pub fn run_episode<A: Actor + ?Sized>(
    env: &MazeEnv,
    actor: &mut A,
    task: usize,
    index: usize,
    seed: u64,
    trace: Option<&mut Vec<TrajRecord>>,
) -> Result<EvalRollout> {
    let mut rng = episode_rng(seed, task, index);
    let (mut ep, mut obs) = env.reset(task, &mut rng)?;
    let mut records = Vec::new();
    let record = trace.is_some();
    if record {
        records.push(traj_record(&ep, index, [0.0, 0.0], 0.0));
    }
    let mut reward_sum = 0.0;
    let reason = loop {
        let action = actor.act(env, &ep, &obs, &mut rng);
        let res = env.step(&mut ep, action)?;
        reward_sum += res.reward;
        if record {
            records.push(traj_record(&ep, index, action, res.reward));
        }
        obs = res.observation;
        if let Some(r) = res.done_reason {
            break r;
        }
    };
    if let Some(t) = trace {
        t.extend(records);
    }
    let t = &env.tasks[task];
    Ok(EvalRollout {
        task,
        index,
        start: t.maze.start,
        end: ep.state.pos,
        goal: t.maze.goal,
        start_distance: t.start_distance,
        end_distance: ep.distance,
        reward_sum,
        steps: ep.t,
        done_reason: reason,
    })
}

fn traj_record(ep: &Episode, index: usize, action: [f64; 2], r: f64) -> TrajRecord {
    TrajRecord {
        task: ep.task,
        episode: index,
        t: ep.t,
        x: ep.state.pos.x,
        y: ep.state.pos.y,
        psi: ep.state.heading,
        v: ep.state.speed,
        a: action[0],
        omega: action[1],
        r,
    }
}

/// `episodes` rollouts for each task, ordered by (task, index).
pub fn collect_rollouts<A: Actor + ?Sized>(
    env: &MazeEnv,
    actor: &mut A,
    tasks: &[usize],
    episodes: usize,
    seed: u64,
    mut trace: Option<&mut Vec<TrajRecord>>,
) -> Result<Vec<EvalRollout>> {
    let mut out = Vec::with_capacity(tasks.len() * episodes);
    for &i in tasks {
        for j in 0..episodes {
            out.push(run_episode(env, actor, i, j, seed, trace.as_deref_mut())?);
        }
    }
    Ok(out)
}

/// Mean shortening `d(p₀,g) − d(pₙ,g)` over the given rollouts, meters.
pub fn shorten_distance(rollouts: &[EvalRollout]) -> f64 {
    if rollouts.is_empty() {
        return 0.0;
    }
    rollouts
        .iter()
        .map(|r| r.start_distance - r.end_distance)
        .sum::<f64>()
        / rollouts.len() as f64
}

/// Normalized shortening averaged over exactly `t` rollouts for each of
/// `n` tasks.
pub fn nsd(rollouts: &[EvalRollout], n: usize, t: usize) -> Result<f64> {
    if n == 0 || t == 0 {
        return Err(Error::Usage("nsd needs at least one task and one trajectory".into()));
    }
    let mut counts = std::collections::BTreeMap::new();
    for r in rollouts {
        *counts.entry(r.task).or_insert(0usize) += 1;
    }
    if counts.len() != n || counts.values().any(|&c| c != t) {
        return Err(Error::Usage(format!(
            "nsd expects {t} rollouts for each of {n} tasks, got {counts:?}"
        )));
    }
    let mut total = 0.0;
    for r in rollouts {
        if r.start_distance <= 0.0 {
            return Err(Error::Usage(format!("task {} has zero start distance", r.task)));
        }
        total += (r.start_distance - r.end_distance) / r.start_distance;
    }
    Ok(total / (n * t) as f64)
}

/// Mean per-episode reward sum.
pub fn average_reward(rollouts: &[EvalRollout]) -> f64 {
    if rollouts.is_empty() {
        return 0.0;
    }
    rollouts.iter().map(|r| r.reward_sum).sum::<f64>() / rollouts.len() as f64
}

pub fn success_rate(rollouts: &[EvalRollout]) -> f64 {
    if rollouts.is_empty() {
        return 0.0;
    }
    rollouts
        .iter()
        .filter(|r| r.done_reason == DoneReason::GoalTouched)
        .count() as f64
        / rollouts.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MazeMetrics {
    pub name: String,
    pub distance: f64,
    pub sd: f64,
    pub success: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mazes: Vec<MazeMetrics>,
    pub nsd: f64,
    /// Mean per-episode reward sum.
    pub reward: f64,
    pub episodes: usize,
}

impl MetricsReport {
    pub fn from_rollouts(env: &MazeEnv, tasks: &[usize], rollouts: &[EvalRollout], episodes: usize) -> Result<Self> {
        let mazes = tasks
            .iter()
            .map(|&i| {
                let rs: Vec<EvalRollout> = rollouts.iter().filter(|r| r.task == i).cloned().collect();
                MazeMetrics {
                    name: env.tasks[i].maze.name.clone(),
                    distance: env.tasks[i].start_distance,
                    sd: shorten_distance(&rs),
                    success: success_rate(&rs),
                }
            })
            .collect();
        Ok(MetricsReport {
            mazes,
            nsd: nsd(rollouts, tasks.len(), episodes)?,
            reward: average_reward(rollouts),
            episodes,
        })
    }

    /// Text table: one column per maze, then NSD (%) and reward.
    pub fn to_table(&self) -> String {
        let mut header = format!("{:<10}", "");
        let mut dist = format!("{:<10}", "distance");
        let mut sd = format!("{:<10}", "SD");
        let mut succ = format!("{:<10}", "success");
        for m in &self.mazes {
            let _ = write!(header, "{:>10}", m.name);
            let _ = write!(dist, "{:>10.2}", m.distance);
            let _ = write!(sd, "{:>10.2}", m.sd);
            let _ = write!(succ, "{:>9.0}%", m.success * 100.0);
        }
        let _ = write!(header, "{:>10}{:>16}", "NSD", "reward/episode");
        let _ = write!(dist, "{:>10}{:>16}", "", "");
        let _ = write!(sd, "{:>9.2}%{:>16.3}", self.nsd * 100.0, self.reward);
        format!("{header}\n{dist}\n{sd}\n{succ}\n({} episodes per maze)\n", self.episodes)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("maze,distance_m,sd_m,success_rate\n");
        for m in &self.mazes {
            let _ = writeln!(s, "{},{},{},{}", m.name, m.distance, m.sd, m.success);
        }
        let _ = writeln!(s, "NSD,,{},", self.nsd);
        let _ = writeln!(s, "reward_per_episode,,{},", self.reward);
        s
    }
}
