//! Kinematic unicycle agent, shaped reward and episode lifecycle.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::field::{distance_field, DistField};
use super::grid::{MazeSpec, Point};
use crate::error::{Error, Result};

/// Physical and reward constants shared by all tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvParams {
    /// Per-step time penalty, meters.
    pub eta: f64,
    /// Integration step, seconds.
    pub dt: f64,
    /// m/s
    pub v_max: f64,
    /// m/s², applied at |a| = 1.
    pub accel_max: f64,
    /// rad/s, applied at |ω| = 1.
    pub turn_max: f64,
    /// meters
    pub goal_radius: f64,
    pub max_steps: usize,
    pub ray_count: usize,
    /// meters
    pub ray_range: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        EnvParams {
            eta: 0.05,
            dt: 0.1,
            v_max: 1.0,
            accel_max: 2.0,
            turn_max: PI,
            goal_radius: 0.5,
            max_steps: 400,
            ray_count: 8,
            ray_range: 5.0,
        }
    }
}

impl EnvParams {
    /// Observation length: position (2), heading (2), speed (1), rays,
    /// normalized progress (1).
    pub fn obs_dim(&self) -> usize {
        6 + self.ray_count
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub pos: Point,
    /// radians in (−π, π]
    pub heading: f64,
    /// m/s, in [0, v_max]
    pub speed: f64,
}

/// Task one-hot plus a per-episode random scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct Context {
    pub task_onehot: Vec<f64>,
    pub z: f64,
}

impl Context {
    pub fn new(task: usize, n_tasks: usize, z: f64) -> Self {
        let mut task_onehot = vec![0.0; n_tasks];
        task_onehot[task] = 1.0;
        Context { task_onehot, z }
    }

    pub fn task(&self) -> usize {
        self.task_onehot
            .iter()
            .position(|&v| v == 1.0)
            .expect("context carries a one-hot task vector")
    }

    pub fn n_tasks(&self) -> usize {
        self.task_onehot.len()
    }

    /// `[one-hot, z]`
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.task_onehot.clone();
        v.push(self.z);
        v
    }
}

/// `c ~ p(T_i)`: one-hot of `task` with `z ~ Uniform(−1, 1)`.
pub fn sample_context<R: Rng + ?Sized>(task: usize, n_tasks: usize, rng: &mut R) -> Context {
    assert!(task < n_tasks, "task index {task} out of range for {n_tasks} tasks");
    Context::new(task, n_tasks, rng.gen_range(-1.0..1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoneReason {
    GoalTouched,
    TimeLimit,
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub next_state: AgentState,
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub done_reason: Option<DoneReason>,
    /// Shortest distance to goal after the step.
    pub distance: f64,
}

/// One maze with its precomputed distance field.
#[derive(Clone, Debug)]
pub struct MazeTask {
    pub maze: MazeSpec,
    pub field: DistField,
    /// d(p_0, g)
    pub start_distance: f64,
}

impl MazeTask {
    pub fn new(mut maze: MazeSpec, params: &EnvParams) -> Self {
        maze.goal_radius = params.goal_radius;
        let field = distance_field(&maze);
        let start_distance = field
            .shortest_distance(maze.start)
            .expect("start is a free cell");
        MazeTask {
            maze,
            field,
            start_distance,
        }
    }
}

/// A running episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub task: usize,
    pub state: AgentState,
    pub context: Context,
    pub t: usize,
    pub initial_heading: f64,
    /// d(p_t, g) at the current position.
    pub distance: f64,
    pub done: bool,
}

/// The maze suite as an environment.
#[derive(Clone, Debug)]
pub struct MazeEnv {
    pub tasks: Vec<MazeTask>,
    pub params: EnvParams,
}

const WALL_MARGIN: f64 = 1e-6;

impl MazeEnv {
    pub fn new(mazes: Vec<MazeSpec>, params: EnvParams) -> Self {
        let tasks = mazes.into_iter().map(|m| MazeTask::new(m, &params)).collect();
        MazeEnv { tasks, params }
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.params.obs_dim()
    }

    /// Start at the fixed start point with a uniformly random heading.
    pub fn reset<R: Rng + ?Sized>(&self, task: usize, rng: &mut R) -> Result<(Episode, Vec<f64>)> {
        if task >= self.tasks.len() {
            return Err(Error::Usage(format!(
                "task index {task} out of range ({} tasks)",
                self.tasks.len()
            )));
        }
        let mut heading = rng.gen_range(-PI..PI);
        if heading == -PI {
            heading = PI;
        }
        let context = sample_context(task, self.tasks.len(), rng);
        Ok(self.reset_with(task, heading, context))
    }

    /// Deterministic reset with a given heading and context.
    pub fn reset_with(&self, task: usize, heading: f64, context: Context) -> (Episode, Vec<f64>) {
        let t = &self.tasks[task];
        let state = AgentState {
            pos: t.maze.start,
            heading,
            speed: 0.0,
        };
        let ep = Episode {
            task,
            state,
            context,
            t: 0,
            initial_heading: heading,
            distance: t.start_distance,
            done: false,
        };
        let obs = self.observe(task, &state);
        (ep, obs)
    }

    /// Advances `ep` by one action `(accel, turn)`, each clamped to [−1, 1].
    pub fn step(&self, ep: &mut Episode, action: [f64; 2]) -> Result<StepResult> {
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite(format!(
                "action {action:?} at step {} of task {}",
                ep.t, ep.task
            )));
        }
        if ep.done {
            return Err(Error::Usage("step called on a finished episode".into()));
        }
        let task = &self.tasks[ep.task];
        let next = integrate(&task.maze, &ep.state, action, &self.params);
        let distance = task.field.shortest_distance(next.pos)?;
        let reward = ep.distance - distance - self.params.eta;

        ep.state = next;
        ep.distance = distance;
        ep.t += 1;

        let done_reason = if next.pos.dist(&task.maze.goal) <= task.maze.goal_radius {
            Some(DoneReason::GoalTouched)
        } else if ep.t >= self.params.max_steps {
            Some(DoneReason::TimeLimit)
        } else {
            None
        };
        ep.done = done_reason.is_some();
        Ok(StepResult {
            next_state: next,
            observation: self.observe(ep.task, &next),
            reward,
            done: ep.done,
            done_reason,
            distance,
        })
    }

    /// `[x/W, y/H, cos ψ, sin ψ, v/v_max, rays.., (d − d₀)/d₀]`
    pub fn observe(&self, task: usize, state: &AgentState) -> Vec<f64> {
        let t = &self.tasks[task];
        let p = &self.params;
        let mut obs = Vec::with_capacity(p.obs_dim());
        obs.push(state.pos.x / t.maze.width as f64);
        obs.push(state.pos.y / t.maze.height as f64);
        let (sin, cos) = sin_cos(state.heading);
        obs.push(cos);
        obs.push(sin);
        obs.push(state.speed / p.v_max);
        for k in 0..p.ray_count {
            let angle = state.heading + 2.0 * PI * k as f64 / p.ray_count as f64;
            obs.push(ray_cast(&t.maze, state.pos, angle, p.ray_range) / p.ray_range);
        }
        let d = t.field.shortest_distance(state.pos).unwrap_or(t.start_distance);
        obs.push((d - t.start_distance) / t.start_distance);
        obs
    }
}

/// Separate calls through `libm`. The optimizer may fuse `f64::sin` and
/// `f64::cos` into the platform `sincos`, whose last bits differ, so
/// trajectories would depend on inlining decisions.
fn sin_cos(x: f64) -> (f64, f64) {
    (libm::sin(x), libm::cos(x))
}

/// Unicycle kinematics with axis-separated wall sliding.
pub fn integrate(maze: &MazeSpec, state: &AgentState, action: [f64; 2], p: &EnvParams) -> AgentState {
    let accel = action[0].clamp(-1.0, 1.0);
    let turn = action[1].clamp(-1.0, 1.0);
    let heading = wrap_angle(state.heading + turn * p.turn_max * p.dt);
    let speed = (state.speed + accel * p.accel_max * p.dt).clamp(0.0, p.v_max);
    let (sin, cos) = sin_cos(heading);
    let dx = speed * cos * p.dt;
    let dy = speed * sin * p.dt;

    let mut pos = state.pos;
    let nx = pos.x + dx;
    if maze.is_free_point(Point::new(nx, pos.y)) {
        pos.x = nx;
    } else if dx > 0.0 {
        pos.x = nx.floor() - WALL_MARGIN;
    } else {
        pos.x = nx.floor() + 1.0 + WALL_MARGIN;
    }
    let ny = pos.y + dy;
    if maze.is_free_point(Point::new(pos.x, ny)) {
        pos.y = ny;
    } else if dy > 0.0 {
        pos.y = ny.floor() - WALL_MARGIN;
    } else {
        pos.y = ny.floor() + 1.0 + WALL_MARGIN;
    }
    AgentState { pos, heading, speed }
}

/// Maps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Distance from `origin` along `angle` to the first wall cell, capped at
/// `max_range`. Grid traversal visits every crossed cell.
pub fn ray_cast(maze: &MazeSpec, origin: Point, angle: f64, max_range: f64) -> f64 {
    let (dy, dx) = sin_cos(angle);
    let (mut cx, mut cy) = (origin.x.floor() as i64, origin.y.floor() as i64);
    let step_x = if dx > 0.0 { 1 } else { -1 };
    let step_y = if dy > 0.0 { 1 } else { -1 };
    let t_delta_x = if dx != 0.0 { 1.0 / dx.abs() } else { f64::INFINITY };
    let t_delta_y = if dy != 0.0 { 1.0 / dy.abs() } else { f64::INFINITY };
    let mut t_max_x = if dx > 0.0 {
        (cx as f64 + 1.0 - origin.x) / dx
    } else if dx < 0.0 {
        (origin.x - cx as f64) / -dx
    } else {
        f64::INFINITY
    };
    let mut t_max_y = if dy > 0.0 {
        (cy as f64 + 1.0 - origin.y) / dy
    } else if dy < 0.0 {
        (origin.y - cy as f64) / -dy
    } else {
        f64::INFINITY
    };

    loop {
        let t = if t_max_x < t_max_y {
            cx += step_x;
            let t = t_max_x;
            t_max_x += t_delta_x;
            t
        } else {
            cy += step_y;
            let t = t_max_y;
            t_max_y += t_delta_y;
            t
        };
        if t >= max_range {
            return max_range;
        }
        if maze.is_wall(cy, cx) {
            return t;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::grid::load_maze;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn corridor_env() -> MazeEnv {
        let m = MazeSpec::parse("c", "############\n#S........G#\n############").unwrap();
        MazeEnv::new(vec![m], EnvParams::default())
    }

    #[test]
    fn zero_action_from_rest_costs_eta() {
        let env = corridor_env();
        let (mut ep, _) = env.reset_with(0, 0.0, Context::new(0, 1, 0.0));
        let r = env.step(&mut ep, [0.0, 0.0]).unwrap();
        assert_eq!(r.next_state.pos, env.tasks[0].maze.start);
        assert!((r.reward + env.params.eta).abs() < 1e-15);
    }

    #[test]
    fn straight_step_toward_goal_earns_its_length() {
        let env = corridor_env();
        let (mut ep, _) = env.reset_with(0, 0.0, Context::new(0, 1, 0.0));
        let r = env.step(&mut ep, [1.0, 0.0]).unwrap();
        let len = r.next_state.pos.dist(&env.tasks[0].maze.start);
        assert!((len - 0.02).abs() < 1e-12);
        assert!((r.reward - (len - env.params.eta)).abs() < 1e-12);
    }

    #[test]
    fn nan_action_rejected() {
        let env = corridor_env();
        let (mut ep, _) = env.reset_with(0, 0.0, Context::new(0, 1, 0.0));
        assert!(matches!(env.step(&mut ep, [f64::NAN, 0.0]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn reset_is_deterministic_and_sets_task() {
        let mazes: Vec<_> = (0..7)
            .map(|_| load_maze("#####\n#S.G#\n#####").unwrap())
            .collect();
        let env = MazeEnv::new(mazes, EnvParams::default());
        let (a, _) = env.reset(2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let (b, _) = env.reset(2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.context.task_onehot, vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(a.state.speed, 0.0);
        assert!(a.state.heading > -PI && a.state.heading <= PI);
    }

    #[test]
    fn context_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = sample_context(0, 3, &mut rng);
        let b = sample_context(0, 3, &mut rng);
        assert_eq!(a.task(), 0);
        assert_eq!(a.task_onehot, b.task_onehot);
        assert_ne!(a.z, b.z);
        assert_eq!(a.to_vec().len(), 4);
    }

    #[test]
    fn observation_examples() {
        // open 13x13 room, walls 6.5 m from the center
        let mut rows = vec!["#".repeat(15)];
        for r in 1..14 {
            let mut line = String::from("#");
            for c in 1..14 {
                line.push(match (r, c) {
                    (7, 7) => 'S',
                    (1, 1) => 'G',
                    _ => '.',
                });
            }
            line.push('#');
            rows.push(line);
        }
        rows.push("#".repeat(15));
        let env = MazeEnv::new(vec![load_maze(&rows.join("\n")).unwrap()], EnvParams::default());
        let (_, obs) = env.reset_with(0, 0.3, Context::new(0, 1, 0.0));
        assert_eq!(obs.len(), env.obs_dim());
        for &ray in &obs[5..13] {
            assert_eq!(ray, 1.0);
        }
        assert_eq!(*obs.last().unwrap(), 0.0);

        // facing a wall 2 m away
        let m = load_maze("#########\n#S.G....#\n#########").unwrap();
        let d = ray_cast(&m, Point::new(6.0, 1.5), 0.0, 5.0);
        assert!((d / 5.0 - 0.4).abs() < 1e-12);
        let d = ray_cast(&m, Point::new(6.0, 1.5), PI, 5.0);
        assert!((d - 5.0).abs() < 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.5) - 0.5).abs() < 1e-15);
    }
}
