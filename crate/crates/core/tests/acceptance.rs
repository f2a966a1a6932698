//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `cargo test -p continual-maze --test acceptance` runs everything (the
//! ablation grid dominates: twelve 150k-step runs). Extra arguments filter
//! criteria by id substring, e.g. `-- gradients nsd`. The process exits
//! nonzero on failure only when `ACCEPTANCE_STRICT=1`.

mod common;

use std::time::Instant;

use continual_maze::discriminator::{accuracy, make_window, TrajectoryWindow, WindowSource, WINDOW_LEN};
use continual_maze::eval::{
    collect_rollouts, goal_touch_nsd_bound, nsd, EvalRollout, FieldFollower, Immobile, PolicyActor,
};
use continual_maze::harness::trainer::{CHECKPOINT_FILE, LOG_FILE, MEMORY_FILE};
use continual_maze::harness::{env_check, train_to_dir, Ablation, LogRecord, RunConfig, Trainer};
use continual_maze::maze::suite::bundled_manifest_path;
use continual_maze::maze::{sample_context, DoneReason, MazeEnv, Point, Suite};
use continual_maze::policy::sample_action;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

const SEEDS: [u64; 3] = [0, 1, 2];
const FULL_STEPS: u64 = 150_000;
const EVAL_EPISODES: usize = 50;
const EVAL_SEED: u64 = 0xE7A1;

fn gradients() -> Outcome {
    let started = Instant::now();
    let mut worst = (String::new(), 0.0f64);
    for seed in 0..5 {
        for (name, err) in common::gradient_report(seed) {
            if err >= worst.1 {
                worst = (name, err);
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        worst.1 < 1e-4 && secs < 60.0,
        format!("max relative error {:.2e} ({}), {secs:.1} s", worst.1, worst.0),
    )
}

fn telescoping() -> Outcome {
    let env = MazeEnv::new(Suite::bundled().mazes, Default::default());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for k in 0..1000 {
        let (mut ep, _) = env.reset(k % 7, &mut rng).unwrap();
        let d0 = ep.distance;
        let mut sum = 0.0;
        while !ep.done {
            sum += env.step(&mut ep, [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).unwrap().reward;
        }
        worst = worst.max((sum + ep.t as f64 * env.params.eta + ep.distance - d0).abs());
    }
    outcome(worst < 1e-9, format!("1000 episodes over 7 mazes, max |error| {worst:.2e}"))
}

fn nsd_oracle() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    // hand-built sets, including overshoot past the start distance
    let mk = |task, d0, dn| EvalRollout {
        task,
        index: 0,
        start: Point::new(0.0, 0.0),
        end: Point::new(0.0, 0.0),
        goal: Point::new(0.0, 0.0),
        start_distance: d0,
        end_distance: dn,
        reward_sum: 0.0,
        steps: 1,
        done_reason: DoneReason::TimeLimit,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut sets = vec![(vec![mk(0, 8.0, 0.0), mk(0, 8.0, 2.0), mk(1, 16.0, 20.0), mk(1, 16.0, 4.0)], 2, 2)];
    for _ in 0..200 {
        let (n, t) = (rng.gen_range(1..8), rng.gen_range(1..12));
        let d0: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..20.0)).collect();
        let rs = (0..n)
            .flat_map(|i| (0..t).map(move |_| i))
            .map(|i| mk(i, d0[i], rng.gen_range(0.0..30.0)))
            .collect();
        sets.push((rs, n, t));
    }
    let exact = sets
        .iter()
        .all(|(rs, n, t)| nsd(rs, *n, *t).unwrap() == common::nsd_reference(rs, *n, *t));
    ok &= exact;
    notes.push(format!("{} sets exact: {exact}", sets.len()));

    let env = MazeEnv::new(Suite::bundled().mazes, Default::default());
    let ids: Vec<usize> = (0..7).collect();
    let still = nsd(&collect_rollouts(&env, &mut Immobile, &ids, 5, 0, None).unwrap(), 7, 5).unwrap();
    ok &= still == 0.0;
    notes.push(format!("immobile {still}"));

    let walk = collect_rollouts(&env, &mut FieldFollower, &ids, 5, 0, None).unwrap();
    let all_goals = walk.iter().all(|r| r.done_reason == DoneReason::GoalTouched);
    let v = nsd(&walk, 7, 5).unwrap();
    let bound = goal_touch_nsd_bound(&env, &ids);
    ok &= all_goals && v >= bound && v <= 1.0;
    notes.push(format!("goal-touching {v:.4} (bound {bound:.4}, all goals {all_goals})"));
    outcome(ok, notes.join("; "))
}

struct GridRun {
    ablation: Ablation,
    seed: u64,
    nsd: f64,
    reward: f64,
    log: Vec<LogRecord>,
}

fn full_config(ablation: Ablation, seed: u64) -> RunConfig {
    let mut cfg = RunConfig {
        seed,
        total_timesteps: FULL_STEPS,
        ..RunConfig::default()
    };
    cfg.set_ablation(ablation);
    cfg
}

fn grid() -> Vec<GridRun> {
    let mut out = Vec::new();
    for ablation in Ablation::ALL {
        for seed in SEEDS {
            let started = Instant::now();
            let mut t = Trainer::new(full_config(ablation, seed), Suite::bundled().mazes).unwrap();
            let mut log = Vec::new();
            t.run_until(u64::MAX, &mut |_, r| {
                log.push(r.clone());
                Ok(())
            })
            .unwrap();
            let mut actor = PolicyActor {
                net: &t.policy,
                theta: &t.theta,
                deterministic: false,
            };
            let ids: Vec<usize> = (0..t.env.n_tasks()).collect();
            let rs = collect_rollouts(&t.env, &mut actor, &ids, EVAL_EPISODES, EVAL_SEED, None).unwrap();
            let run = GridRun {
                ablation,
                seed,
                nsd: nsd(&rs, ids.len(), EVAL_EPISODES).unwrap(),
                reward: continual_maze::eval::average_reward(&rs),
                log,
            };
            println!(
                "    {:<8} seed {}: NSD {:6.2}%  reward {:+.3}  ({:.0} s)",
                ablation.name(),
                seed,
                run.nsd * 100.0,
                run.reward,
                started.elapsed().as_secs_f64()
            );
            out.push(run);
        }
    }
    out
}

fn mean_of(runs: &[GridRun], a: Ablation, f: impl Fn(&GridRun) -> f64) -> f64 {
    let v: Vec<f64> = runs.iter().filter(|r| r.ablation == a).map(f).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn ablation_ordering(runs: &[GridRun]) -> Outcome {
    let m = |a| mean_of(runs, a, |r| r.nsd);
    let (base, de, sc, both) = (m(Ablation::Baseline), m(Ablation::De), m(Ablation::Sc), m(Ablation::DeSc));
    let gap = both - base;
    outcome(
        gap >= 0.05 && both >= de.max(sc),
        format!(
            "mean NSD baseline {:.2}%, DE {:.2}%, SC {:.2}%, DE+SC {:.2}% (gap {:+.2} points)",
            base * 100.0,
            de * 100.0,
            sc * 100.0,
            both * 100.0,
            gap * 100.0
        ),
    )
}

/// Mean logged entropy over steps in the middle third of training.
fn middle_third_entropy(log: &[LogRecord]) -> f64 {
    let (lo, hi) = (FULL_STEPS / 3, 2 * FULL_STEPS / 3);
    let v: Vec<f64> = log.iter().filter(|r| r.step > lo && r.step <= hi).map(|r| r.entropy).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn diversity_entropy(runs: &[GridRun]) -> Outcome {
    let mut diffs = Vec::new();
    for seed in SEEDS {
        let of = |a| {
            runs.iter()
                .find(|r| r.ablation == a && r.seed == seed)
                .map(|r| middle_third_entropy(&r.log))
                .unwrap()
        };
        diffs.push(of(Ablation::De) - of(Ablation::Baseline));
    }
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    outcome(
        mean > 0.0,
        format!(
            "DE minus baseline middle-third entropy per seed {:?}, mean {mean:+.4} nats",
            diffs.iter().map(|d| format!("{d:+.4}")).collect::<Vec<_>>()
        ),
    )
}

/// Real next-state windows from fresh episodes of the trained policy.
fn fresh_real_windows(t: &Trainer, per_task: usize, seed: u64) -> (Vec<TrajectoryWindow>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = t.env.n_tasks();
    let (mut windows, mut tasks) = (Vec::new(), Vec::new());
    for task in 0..n {
        for _ in 0..per_task {
            let (mut ep, _) = t.env.reset(task, &mut rng).unwrap();
            ep.context = sample_context(task, n, &mut rng);
            let mut obs = t.env.observe(task, &ep.state);
            let mut states = Vec::new();
            while !ep.done && states.len() < WINDOW_LEN {
                let out = t.policy.evaluate(&t.theta, &obs, &ep.context.to_vec());
                let (a, _) = sample_action(&out.mean, &out.log_std, &mut rng);
                let r = t.env.step(&mut ep, [a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0)]).unwrap();
                obs = r.observation;
                states.push(obs.clone());
            }
            windows.push(make_window(&states, WindowSource::Real).unwrap());
            tasks.push(task);
        }
    }
    (windows, tasks)
}

fn separability() -> Outcome {
    let mut cfg = RunConfig {
        n_tasks: 3,
        total_timesteps: 30_000,
        seed: 0,
        ..RunConfig::default()
    };
    cfg.set_ablation(Ablation::De);
    let mut t = Trainer::new(cfg, Suite::bundled_prefix(3).mazes).unwrap();
    t.run_until(u64::MAX, &mut |_, _| Ok(())).unwrap();
    let (windows, tasks) = fresh_real_windows(&t, 50, 0xfeed);
    let refs: Vec<&TrajectoryWindow> = windows.iter().collect();
    let acc = accuracy(&t.disc, &t.phi, &refs, &tasks);
    outcome(
        acc > 2.0 / 3.0,
        format!("held-out accuracy {:.1}% on {} fresh real windows (chance 33.3%)", acc * 100.0, windows.len()),
    )
}

fn correction_gate() -> Outcome {
    use common::sc::{fixture, tree_bytes};
    let f = fixture(0);

    let mut better = f.memory(None, 4);
    let (s_better, ..) = f.correct(&mut better, 0);
    let curve = f.imitation_curve(&better, 10, 1e-3);
    let decreasing = curve.windows(2).all(|w| w[1] < w[0]);
    let first_rise = curve.windows(2).position(|w| w[1] >= w[0]);

    let mut worse = f.memory(Some(-0.05), 4);
    let (s_worse, theta, phi, ta, pa) = f.correct(&mut worse, 0);
    let unchanged =
        tree_bytes(&theta) == tree_bytes(&f.theta) && tree_bytes(&phi) == tree_bytes(&f.phi) && ta.step == 0 && pa.step == 0;

    let ok = s_better.gated_fraction == 1.0 && decreasing && s_worse.gated_fraction == 0.0 && unchanged;
    outcome(
        ok,
        format!(
            "better: gated {:.2}, cross-entropy {:.4} -> {:.4}{}; worse: gated {:.2}, parameters unchanged {unchanged}",
            s_better.gated_fraction,
            curve[0],
            curve[10],
            match first_rise {
                None => " strictly decreasing".to_string(),
                Some(k) => format!(" but rises at step {} ({:.4} -> {:.4})", k + 1, curve[k], curve[k + 1]),
            },
            s_worse.gated_fraction
        ),
    )
}

fn determinism() -> Outcome {
    let cfg = RunConfig {
        total_timesteps: 20_000,
        seed: 5,
        checkpoint_every: 5_000,
        ..RunConfig::default()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    train_to_dir(&cfg, a.path(), false).unwrap();
    train_to_dir(&cfg, b.path(), false).unwrap();
    let same: Vec<(&str, bool)> = [CHECKPOINT_FILE, MEMORY_FILE, LOG_FILE]
        .into_iter()
        .map(|f| {
            let x = std::fs::read(a.path().join(f)).unwrap();
            let y = std::fs::read(b.path().join(f)).unwrap();
            (f, x == y)
        })
        .collect();
    outcome(
        same.iter().all(|s| s.1),
        format!(
            "two 20k-step runs: {}",
            same.iter().map(|(f, s)| format!("{f} {}", if *s { "identical" } else { "DIFFERENT" })).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn environment() -> Outcome {
    let suite = Suite::load(&bundled_manifest_path()).unwrap();
    let all_expected = suite.expected_distances.iter().all(Option::is_some);
    let report = env_check(&suite, 100_000, 0).unwrap();
    let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    let distances: Vec<String> = suite.expected_distances.iter().flatten().map(|d| format!("{d}")).collect();
    outcome(
        report.passed() && all_expected && suite.len() == 7,
        if failed.is_empty() {
            format!("{} checks passed; distances {} m", report.checks.len(), distances.join(", "))
        } else {
            format!("failed: {}", failed.join(", "))
        },
    )
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |id: &str| filters.is_empty() || filters.iter().any(|f| id.contains(f.as_str()));

    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut run = |id: &'static str, f: &dyn Fn() -> Outcome| {
        if wanted(id) {
            let started = Instant::now();
            let o = f();
            println!(
                "{} {id}: {} [{:.1} s]",
                if o.passed { "PASS" } else { "FAIL" },
                o.detail,
                started.elapsed().as_secs_f64()
            );
            results.push((id, o));
        }
    };
    run("gradients", &gradients);
    run("reward-telescoping", &telescoping);
    run("nsd-oracle", &nsd_oracle);
    run("correction-gate", &correction_gate);
    run("environment", &environment);
    run("determinism", &determinism);
    run("separability", &separability);
    if wanted("ablation-ordering") || wanted("diversity-entropy") {
        println!("     training the ablation grid (4 variants x {} seeds x {FULL_STEPS} steps)", SEEDS.len());
        let runs = grid();
        run("ablation-ordering", &|| ablation_ordering(&runs));
        run("diversity-entropy", &|| diversity_entropy(&runs));
    }

    let failed = results.iter().filter(|r| !r.1.passed).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
