use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use continual_maze::eval::{collect_rollouts, MetricsReport, PolicyActor};
use continual_maze::harness::plot::{curves_svg, maze_svg, Series};
use continual_maze::harness::{env_check, load_policy, read_trainlog, train_to_dir, Ablation, RunConfig};
use continual_maze::maze::trajlog::{read_trajlog, write_trajlog, TRAJLOG_FORMAT};
use continual_maze::maze::{MazeEnv, Suite};
use continual_maze::{Error, Result};

/// Continual maze navigation: train, evaluate and inspect agents.
///
/// Log verbosity is read from CMAZE_LOG (error, warn, info, debug, trace).
#[derive(Parser)]
#[command(name = "cmaze", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train on the suite's mazes in order.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// baseline, de, sc or de+sc
        #[arg(long)]
        ablation: Option<String>,
        /// Output directory (default: runs/<ablation>-seed<N>)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint and print per-maze shortening, NSD and reward.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        suite: PathBuf,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
        #[arg(long)]
        deterministic: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use only the first N mazes of the suite.
        #[arg(long)]
        tasks: Option<usize>,
        /// Also write the report as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run a checkpoint and write a trajectory log.
    Rollout {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        suite: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long)]
        deterministic: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        tasks: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render trajectory logs as one SVG per maze, or training logs as curves.
    Plot {
        /// Trajectory log, or one or more training logs.
        #[arg(long, required = true, num_args = 1..)]
        log: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Suite used to draw mazes for trajectory logs (default: bundled).
        #[arg(long)]
        suite: Option<PathBuf>,
    },
    /// Check walls, distance fields and start-goal distances.
    EnvCheck {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("CMAZE_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Usage(_) | Error::Config(_) => 2,
                _ => 1,
            })
        }
    }
}

fn env_for(suite_path: &Path, tasks: Option<usize>, ckpt_tasks: usize, obs_dim: usize) -> Result<MazeEnv> {
    let mut suite = Suite::load(suite_path)?;
    if let Some(n) = tasks {
        if n == 0 || n > suite.len() {
            return Err(Error::Usage(format!("--tasks {n} out of range for {} mazes", suite.len())));
        }
        suite.mazes.truncate(n);
    }
    if suite.len() != ckpt_tasks {
        return Err(Error::Config(format!(
            "checkpoint was trained with {ckpt_tasks} task contexts but the suite has {} mazes (use --tasks)",
            suite.len()
        )));
    }
    let env = MazeEnv::new(suite.mazes, Default::default());
    if env.obs_dim() != obs_dim {
        return Err(Error::Config(format!(
            "checkpoint expects {obs_dim}-dim observations, the environment gives {}",
            env.obs_dim()
        )));
    }
    Ok(env)
}

fn run(cmd: Cmd) -> Result<ExitCode> {
    match cmd {
        Cmd::Train {
            config,
            seed,
            ablation,
            out,
            resume,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(a) = ablation {
                cfg.set_ablation(a.parse::<Ablation>()?);
            }
            let out = out.unwrap_or_else(|| {
                PathBuf::from("runs").join(format!("{}-seed{}", cfg.ablation().name(), cfg.seed))
            });
            let t = train_to_dir(&cfg, &out, resume)?;
            println!("trained {} steps; checkpoint in {}", t.step, out.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Eval {
            checkpoint,
            suite,
            episodes,
            deterministic,
            seed,
            tasks,
            csv,
        } => {
            let (net, theta) = load_policy(&checkpoint)?;
            let env = env_for(&suite, tasks, net.ctx_dim - 1, net.obs_dim)?;
            let ids: Vec<usize> = (0..env.n_tasks()).collect();
            let mut actor = PolicyActor {
                net: &net,
                theta: &theta,
                deterministic,
            };
            let rs = collect_rollouts(&env, &mut actor, &ids, episodes, seed, None)?;
            let report = MetricsReport::from_rollouts(&env, &ids, &rs, episodes)?;
            print!("{}", report.to_table());
            println!(
                "policy mode: {}",
                if deterministic { "mean action" } else { "sampled" }
            );
            if let Some(p) = csv {
                std::fs::write(p, report.to_csv())?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Rollout {
            checkpoint,
            suite,
            episodes,
            deterministic,
            seed,
            tasks,
            out,
        } => {
            let (net, theta) = load_policy(&checkpoint)?;
            let env = env_for(&suite, tasks, net.ctx_dim - 1, net.obs_dim)?;
            let ids: Vec<usize> = (0..env.n_tasks()).collect();
            let mut actor = PolicyActor {
                net: &net,
                theta: &theta,
                deterministic,
            };
            let mut trace = Vec::new();
            collect_rollouts(&env, &mut actor, &ids, episodes, seed, Some(&mut trace))?;
            let names: Vec<String> = env.tasks.iter().map(|t| t.maze.name.clone()).collect();
            write_trajlog(std::io::BufWriter::new(std::fs::File::create(&out)?), &names, &trace)?;
            println!("{} records written to {}", trace.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Plot { log, out, suite } => {
            std::fs::create_dir_all(&out)?;
            let first = std::fs::read_to_string(&log[0])?;
            let is_traj = first
                .lines()
                .next()
                .is_some_and(|l| l.contains(&format!("\"{TRAJLOG_FORMAT}\"")));
            if is_traj {
                let suite = match suite {
                    Some(p) => Suite::load(&p)?,
                    None => Suite::bundled(),
                };
                let (header, recs) = read_trajlog(first.as_bytes())?;
                for (task, name) in header.tasks.iter().enumerate() {
                    let maze = suite
                        .mazes
                        .iter()
                        .find(|m| &m.name == name)
                        .ok_or_else(|| Error::Usage(format!("maze `{name}` is not in the suite")))?;
                    let mine: Vec<_> = recs.iter().filter(|r| r.task == task).cloned().collect();
                    let path = out.join(format!("{}.svg", name.replace(' ', "_")));
                    std::fs::write(&path, maze_svg(maze, &mine))?;
                    println!("wrote {}", path.display());
                }
            } else {
                let mut loaded = Vec::new();
                for p in &log {
                    let (h, recs) = read_trainlog(p)?;
                    loaded.push((format!("{} seed {}", h.ablation, h.seed), recs));
                }
                let series: Vec<Series<'_>> = loaded
                    .iter()
                    .map(|(label, recs)| Series {
                        label: label.clone(),
                        records: recs,
                    })
                    .collect();
                let path = out.join("curves.svg");
                std::fs::write(&path, curves_svg(&series))?;
                println!("wrote {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::EnvCheck { suite, steps, seed } => {
            let s = Suite::load(&suite)?;
            let report = env_check(&s, steps, seed)?;
            print!("{}", report.render());
            Ok(if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}
