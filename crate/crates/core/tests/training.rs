use continual_maze::eval::{collect_rollouts, nsd, PolicyActor};
use continual_maze::harness::trainer::{CHECKPOINT_FILE, LOG_FILE, MEMORY_FILE};
use continual_maze::harness::{read_trainlog, train_to_dir, train_to_dir_until, Ablation, RunConfig, Trainer};
use continual_maze::maze::Suite;

fn cfg(total: u64, n_tasks: usize, ablation: Ablation) -> RunConfig {
    let mut c = RunConfig {
        n_tasks,
        total_timesteps: total,
        // short runs need more than a handful of updates
        horizon: 512,
        seed: 11,
        eval_every: 2_000,
        eval_episodes: 3,
        checkpoint_every: 1_000,
        ..RunConfig::default()
    };
    c.set_ablation(ablation);
    c
}

fn read(dir: &std::path::Path, f: &str) -> Vec<u8> {
    std::fs::read(dir.join(f)).unwrap()
}

#[test]
fn interrupted_run_resumes_bit_exactly() {
    let c = cfg(6_000, 2, Ablation::DeSc);
    let whole = tempfile::tempdir().unwrap();
    let split = tempfile::tempdir().unwrap();
    train_to_dir(&c, whole.path(), false).unwrap();
    let t = train_to_dir_until(&c, split.path(), false, 2_500).unwrap();
    assert!(t.step >= 2_500 && t.step < 6_000);
    // the in-progress episode must survive the restart
    assert!(t.episode.is_some());
    train_to_dir(&c, split.path(), true).unwrap();
    for f in [CHECKPOINT_FILE, MEMORY_FILE, LOG_FILE] {
        assert!(read(whole.path(), f) == read(split.path(), f), "{f} differs after resume");
    }
}

#[test]
fn same_seed_same_bytes_other_seed_differs() {
    let c = cfg(3_000, 2, Ablation::DeSc);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let d = tempfile::tempdir().unwrap();
    train_to_dir(&c, a.path(), false).unwrap();
    train_to_dir(&c, b.path(), false).unwrap();
    let mut other = c.clone();
    other.seed += 1;
    train_to_dir(&other, d.path(), false).unwrap();
    for f in [CHECKPOINT_FILE, MEMORY_FILE, LOG_FILE] {
        assert!(read(a.path(), f) == read(b.path(), f), "{f}");
    }
    assert!(read(a.path(), CHECKPOINT_FILE) != read(d.path(), CHECKPOINT_FILE));
}

#[test]
fn log_is_well_formed() {
    let c = cfg(4_000, 2, Ablation::De);
    let dir = tempfile::tempdir().unwrap();
    train_to_dir(&c, dir.path(), false).unwrap();
    let (h, recs) = read_trainlog(&dir.path().join(LOG_FILE)).unwrap();
    assert_eq!(h.ablation, "de");
    assert_eq!(h.budgets, vec![2_000, 2_000]);
    assert_eq!(recs.last().unwrap().step, 4_000);
    assert!(recs.iter().all(|r| r.gated_fraction == 0.0));
    assert!(recs.iter().any(|r| r.diversity_loss > 0.0));
    assert!(recs.iter().any(|r| r.nsd.is_some()));
    // task 0 for the first half, task 1 after
    for r in &recs {
        assert_eq!(r.task, usize::from(r.step > 2_000));
    }
}

#[test]
fn short_training_beats_the_untrained_policy() {
    let mut c = cfg(20_000, 2, Ablation::DeSc);
    c.seed = 0;
    let mut t = Trainer::new(c, Suite::bundled_prefix(2).mazes).unwrap();
    let untrained = t.theta.clone();
    t.run_until(u64::MAX, &mut |_, _| Ok(())).unwrap();
    let score = |theta| {
        let mut actor = PolicyActor {
            net: &t.policy,
            theta,
            deterministic: false,
        };
        let rs = collect_rollouts(&t.env, &mut actor, &[0, 1], 20, 5, None).unwrap();
        nsd(&rs, 2, 20).unwrap()
    };
    let (before, after) = (score(&untrained), score(&t.theta));
    assert!(after > before + 0.3, "untrained {before:.3}, trained {after:.3}");
}
