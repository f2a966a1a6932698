//! Environment invariant suite behind `cmaze env-check`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::maze::{DistField, MazeEnv, MazeSpec, Point, Suite};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnvCheckReport {
    pub checks: Vec<CheckResult>,
}

impl EnvCheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(CheckResult {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            s.push_str(&format!(
                "[{}] {}: {}\n",
                if c.passed { "ok" } else { "FAIL" },
                c.name,
                c.detail
            ));
        }
        s
    }
}

/// Every free cell except the goal has a neighbor exactly one move cost
/// closer, and no move changes the value by more than its cost.
pub fn check_field_monotone(maze: &MazeSpec, field: &DistField) -> std::result::Result<(), String> {
    let goal = maze.goal_cell();
    for (r, c) in maze.free_cells() {
        let d = field.at_cell(r, c);
        if !d.is_finite() {
            return Err(format!("cell ({r}, {c}) cannot reach the goal"));
        }
        let mut has_descent = (r, c) == goal;
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if maze.is_wall(nr, nc) {
                    continue;
                }
                let diagonal = dr != 0 && dc != 0;
                if diagonal && (maze.is_wall(r as i64 + dr, c as i64) || maze.is_wall(r as i64, c as i64 + dc)) {
                    continue;
                }
                let cost = if diagonal { std::f64::consts::SQRT_2 } else { 1.0 } * maze.cell_size;
                let nd = field.at_cell(nr as usize, nc as usize);
                if (d - nd).abs() > cost + 1e-9 {
                    return Err(format!("cells ({r}, {c}) and ({nr}, {nc}) differ by more than a move"));
                }
                if (d - nd - cost).abs() < 1e-9 {
                    has_descent = true;
                }
            }
        }
        if !has_descent {
            return Err(format!("cell ({r}, {c}) has no descending neighbor"));
        }
    }
    Ok(())
}

/// Random extreme actions; every visited position and every intermediate
/// axis move must lie in free space.
pub fn check_no_penetration(env: &MazeEnv, steps: usize, seed: u64) -> Result<std::result::Result<(), String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut done = 0;
    let mut task = 0;
    while done < steps {
        let (mut ep, _) = env.reset(task, &mut rng)?;
        let maze = &env.tasks[task].maze;
        while !ep.done && done < steps {
            let action = if rng.gen_bool(0.5) {
                [if rng.gen() { 1.0 } else { -1.0 }, if rng.gen() { 1.0 } else { -1.0 }]
            } else {
                [rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)]
            };
            let before = ep.state.pos;
            env.step(&mut ep, action)?;
            let after = ep.state.pos;
            done += 1;
            let mid = Point::new(after.x, before.y);
            if !maze.is_free_point(after) || !maze.is_free_point(mid) {
                return Ok(Err(format!(
                    "{}: moved from ({:.6}, {:.6}) into a wall at ({:.6}, {:.6})",
                    maze.name, before.x, before.y, after.x, after.y
                )));
            }
        }
        task = (task + 1) % env.n_tasks();
    }
    Ok(Ok(()))
}

/// Reward sums telescope: `Σr + nη + d(pₙ) − d(p₀) = 0`.
pub fn telescoping_error(env: &MazeEnv, episodes: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for k in 0..episodes {
        let task = k % env.n_tasks();
        let (mut ep, _) = env.reset(task, &mut rng)?;
        let d0 = ep.distance;
        let mut sum = 0.0;
        while !ep.done {
            let r = env.step(&mut ep, [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])?;
            sum += r.reward;
        }
        let err = sum + ep.t as f64 * env.params.eta + ep.distance - d0;
        worst = worst.max(err.abs());
    }
    Ok(worst)
}

pub fn env_check(suite: &Suite, adversarial_steps: usize, seed: u64) -> Result<EnvCheckReport> {
    let env = MazeEnv::new(suite.mazes.clone(), Default::default());
    let mut report = EnvCheckReport::default();
    for (task, expected) in env.tasks.iter().zip(&suite.expected_distances) {
        let name = &task.maze.name;
        match check_field_monotone(&task.maze, &task.field) {
            Ok(()) => report.push(format!("field monotone: {name}"), true, "every free cell descends to the goal"),
            Err(e) => report.push(format!("field monotone: {name}"), false, e),
        }
        match expected {
            Some(d) => {
                let ok = (task.start_distance - d).abs() < 1e-9;
                report.push(
                    format!("start-goal distance: {name}"),
                    ok,
                    format!("{:.6} m (expected {d:.6} m)", task.start_distance),
                );
            }
            None => report.push(
                format!("start-goal distance: {name}"),
                true,
                format!("{:.6} m (no expected value)", task.start_distance),
            ),
        }
    }
    match check_no_penetration(&env, adversarial_steps, seed)? {
        Ok(()) => report.push(
            "no wall penetration",
            true,
            format!("{adversarial_steps} adversarial steps"),
        ),
        Err(e) => report.push("no wall penetration", false, e),
    }
    let err = telescoping_error(&env, 10 * env.n_tasks(), seed ^ 1)?;
    report.push("reward telescoping", err < 1e-9, format!("max error {err:.3e}"));
    Ok(report)
}
