//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each exported function is a thin wrapper over a plain Rust function so
//! the logic is testable on the host.

use continual_maze::eval::{
    collect_rollouts, goal_touch_nsd_bound, nsd, Actor, FieldFollower, Immobile, SteerToGoal,
};
use continual_maze::harness::plot::maze_svg;
use continual_maze::maze::trajlog::TrajRecord;
use continual_maze::maze::{MazeEnv, Point, Suite};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Uniformly random actions.
struct RandomWalk;

impl Actor for RandomWalk {
    fn act(&mut self, _: &MazeEnv, _: &continual_maze::maze::Episode, _: &[f64], rng: &mut ChaCha8Rng) -> [f64; 2] {
        [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]
    }
}

pub const AGENTS: [&str; 4] = ["field", "straight", "random", "still"];

fn agent(name: &str) -> Result<Box<dyn Actor>, String> {
    Ok(match name {
        "field" => Box::new(FieldFollower),
        "straight" => Box::new(SteerToGoal),
        "random" => Box::new(RandomWalk),
        "still" => Box::new(Immobile),
        other => return Err(format!("unknown agent `{other}` (expected one of {AGENTS:?})")),
    })
}

fn env() -> MazeEnv {
    MazeEnv::new(Suite::bundled().mazes, Default::default())
}

fn check_index(env: &MazeEnv, maze: usize) -> Result<(), String> {
    if maze >= env.n_tasks() {
        return Err(format!("maze index {maze} out of range ({} mazes)", env.n_tasks()));
    }
    Ok(())
}

#[derive(Serialize)]
pub struct MazeInfo {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub start_distance: f64,
}

pub fn maze_list() -> Vec<MazeInfo> {
    env()
        .tasks
        .iter()
        .map(|t| MazeInfo {
            name: t.maze.name.clone(),
            width: t.maze.width,
            height: t.maze.height,
            start_distance: t.start_distance,
        })
        .collect()
}

/// Shortest in-maze distance from `(x, y)` (maze units) to the goal.
pub fn distance_at(maze: usize, x: f64, y: f64) -> Result<f64, String> {
    let env = env();
    check_index(&env, maze)?;
    env.tasks[maze]
        .field
        .shortest_distance(Point::new(x, y))
        .map_err(|e| e.to_string())
}

#[derive(Serialize)]
pub struct RolloutSummary {
    pub svg: String,
    pub nsd: f64,
    /// Lower bound on NSD for an agent that touches the goal every time.
    pub goal_touch_bound: f64,
    pub mean_reward: f64,
    pub success_rate: f64,
    pub mean_steps: f64,
}

/// Runs `episodes` episodes of a scripted agent and draws them.
pub fn rollout(maze: usize, agent_name: &str, episodes: usize, seed: u64) -> Result<RolloutSummary, String> {
    let env = env();
    check_index(&env, maze)?;
    if episodes == 0 || episodes > 200 {
        return Err("episodes must be between 1 and 200".into());
    }
    let mut actor = agent(agent_name)?;
    let mut trace: Vec<TrajRecord> = Vec::new();
    let rs = collect_rollouts(&env, actor.as_mut(), &[maze], episodes, seed, Some(&mut trace))
        .map_err(|e| e.to_string())?;
    let n = rs.len() as f64;
    Ok(RolloutSummary {
        svg: maze_svg(&env.tasks[maze].maze, &trace),
        nsd: nsd(&rs, 1, episodes).map_err(|e| e.to_string())?,
        goal_touch_bound: goal_touch_nsd_bound(&env, &[maze]),
        mean_reward: continual_maze::eval::average_reward(&rs),
        success_rate: continual_maze::eval::success_rate(&rs),
        mean_steps: rs.iter().map(|r| r.steps as f64).sum::<f64>() / n,
    })
}

fn js_err(e: String) -> JsValue {
    JsValue::from_str(&e)
}

fn to_json<T: Serialize>(v: &T) -> Result<String, JsValue> {
    serde_json::to_string(v).map_err(|e| js_err(e.to_string()))
}

/// JSON array of `{name, width, height, start_distance}`.
#[wasm_bindgen(js_name = mazeList)]
pub fn maze_list_js() -> Result<String, JsValue> {
    to_json(&maze_list())
}

#[wasm_bindgen(js_name = mazeSvg)]
pub fn maze_svg_js(maze: usize) -> Result<String, JsValue> {
    let env = env();
    check_index(&env, maze).map_err(js_err)?;
    Ok(maze_svg(&env.tasks[maze].maze, &[]))
}

#[wasm_bindgen(js_name = distanceAt)]
pub fn distance_at_js(maze: usize, x: f64, y: f64) -> Result<f64, JsValue> {
    distance_at(maze, x, y).map_err(js_err)
}

/// JSON `{svg, nsd, goal_touch_bound, mean_reward, success_rate, mean_steps}`.
#[wasm_bindgen(js_name = rollout)]
pub fn rollout_js(maze: usize, agent: &str, episodes: usize, seed: u32) -> Result<String, JsValue> {
    to_json(&rollout(maze, agent, episodes, seed as u64).map_err(js_err)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_the_bundled_suite() {
        let l = maze_list();
        assert_eq!(l.len(), 7);
        assert!(l.iter().all(|m| m.start_distance > 0.0));
    }

    #[test]
    fn distance_queries() {
        let env = env();
        let g = env.tasks[0].maze.goal;
        assert_eq!(distance_at(0, g.x, g.y).unwrap(), 0.0);
        let s = env.tasks[0].maze.start;
        assert_eq!(distance_at(0, s.x, s.y).unwrap(), env.tasks[0].start_distance);
        assert!(distance_at(0, 0.5, 0.5).is_err());
        assert!(distance_at(99, 1.0, 1.0).is_err());
    }

    #[test]
    fn scripted_rollouts() {
        let r = rollout(3, "field", 3, 1).unwrap();
        assert_eq!(r.success_rate, 1.0);
        assert!(r.nsd >= r.goal_touch_bound);
        assert!(r.svg.starts_with("<svg"));
        assert_eq!(rollout(3, "still", 2, 1).unwrap().nsd, 0.0);
        assert!(rollout(3, "teleport", 2, 1).is_err());
        assert!(rollout(3, "field", 0, 1).is_err());
    }
}
