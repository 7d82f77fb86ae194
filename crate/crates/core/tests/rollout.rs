mod common;

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use common::*;
use leaveout::miniworld::{generate_tasks, vocab as mw, Family, Task};
use leaveout::policy::{FeatureConfig, PolicyParams};
use leaveout::rollout::{
    collect_parallel, collect_parallel_with, collect_rollout, importance_ratios, read_trajectories, stop_threshold,
    traj_logprob, write_trajectories, CollectConfig, Granularity, RolloutConfig, Trajectory, TurnRecord,
};
use leaveout::seed::rollout_seed;
use proptest::prelude::*;
use rand::Rng;

fn relay_tasks(n: usize) -> Vec<Task> {
    generate_tasks(Family::Relay, n, 5).unwrap()
}

fn mw_params(seed: u64) -> PolicyParams {
    let mut r = rng(seed);
    random_params(&mut r, mw::vocab(), 2, 0.5)
}

#[test]
fn greedy_rollouts_are_reproducible() {
    let task = &relay_tasks(1)[0];
    let p = mw_params(1);
    let cfg = RolloutConfig { temperature: 0.0, ..RolloutConfig::default() };
    let a = collect_rollout(&p, task, &cfg, 1).unwrap();
    let b = collect_rollout(&p, task, &cfg, 2).unwrap();
    assert_eq!(a.tokens, b.tokens);
    assert_eq!(a.sampling_logprobs, b.sampling_logprobs);
    let c = collect_rollout(&p, task, &RolloutConfig::default(), 9).unwrap();
    assert_eq!(c, collect_rollout(&p, task, &RolloutConfig::default(), 9).unwrap());
    a.validate().unwrap();
    c.validate().unwrap();
}

#[test]
fn uniform_policy_runs_into_the_turn_limit() {
    let task = &relay_tasks(1)[0];
    let p = PolicyParams::zeros(mw::vocab(), FeatureConfig::default());
    let t = collect_rollout(&p, task, &RolloutConfig::default(), 0).unwrap();
    assert!(t.truncated);
    assert_eq!(t.turns.len(), 10);
    assert!((0.0..=1.0).contains(&t.ret));
    let n = t.agent_token_count() as f64;
    let expected = n * -(mw::SYMBOLS.len() as f64).ln();
    assert!((traj_logprob(&p, &t).unwrap() - expected).abs() < 1e-9);
}

#[test]
fn token_cap_forces_an_environment_stop_token() {
    let task = &relay_tasks(1)[0];
    let p = PolicyParams::zeros(mw::vocab(), FeatureConfig::default());
    let cfg = RolloutConfig { token_cap: 3, turn_limit: 4, ..RolloutConfig::default() };
    let t = collect_rollout(&p, task, &cfg, 3).unwrap();
    for &(s, e) in &t.turn_spans {
        assert!(e - s <= 3);
        if e - s == 3 {
            assert_eq!(t.tokens[e], mw::EOS);
            assert!(!t.action_mask[e]);
        }
    }
}

#[test]
fn context_cap_ends_the_episode() {
    let task = &relay_tasks(1)[0];
    let p = PolicyParams::zeros(mw::vocab(), FeatureConfig::default());
    let cfg = RolloutConfig { context_cap: 60, turn_limit: 100, ..RolloutConfig::default() };
    let t = collect_rollout(&p, task, &cfg, 4).unwrap();
    assert!(t.truncated);
    assert!(t.turns.len() < 100);
    t.validate().unwrap();
}

#[test]
fn logprob_is_self_consistent_with_sampling() {
    let tasks = relay_tasks(2);
    let p = mw_params(2);
    for (i, task) in tasks.iter().enumerate() {
        let t = collect_rollout(&p, task, &RolloutConfig::default(), i as u64).unwrap();
        let sum: f64 = t.sampling_logprobs.iter().sum();
        assert!((traj_logprob(&p, &t).unwrap() - sum).abs() < 1e-9);
    }
}

#[test]
fn environment_tokens_do_not_contribute() {
    let mut r = rng(11);
    let p = random_params(&mut r, small_vocab(), 2, 1.0);
    let t = sampled_trajectory(&p, &mut r, 3);
    let manual: f64 = {
        let mut acc = 0.0;
        let seq = t.sequence();
        for (i, &m) in t.action_mask.iter().enumerate() {
            if m {
                acc += p.logprob(&seq[..t.context.len() + i], t.tokens[i]).unwrap();
            }
        }
        acc
    };
    assert!((traj_logprob(&p, &t).unwrap() - manual).abs() < 1e-12);

    // Counting one environment token as an action changes the value.
    let env = t.action_mask.iter().position(|&m| !m).unwrap();
    let mut flipped = t.clone();
    flipped.action_mask[env] = true;
    assert!((traj_logprob(&p, &flipped).unwrap() - manual).abs() > 1e-6);

    // Rewriting environment tokens leaves the value unchanged when their
    // positions are never conditioned on by a later agent token.
    let last_env = t.action_mask.len() - 1;
    assert!(!t.action_mask[last_env]);
    let mut rewritten = t.clone();
    rewritten.tokens[last_env] = (t.tokens[last_env] + 1) % 8;
    assert_eq!(traj_logprob(&p, &rewritten).unwrap(), traj_logprob(&p, &t).unwrap());
}

#[test]
fn on_policy_ratios_are_exactly_one() {
    let mut r = rng(3);
    let p = random_params(&mut r, small_vocab(), 2, 1.0);
    let t = sampled_trajectory(&p, &mut r, 4);
    for g in [Granularity::Token, Granularity::Turn, Granularity::Trajectory] {
        let ratios = importance_ratios(&p, &t, g).unwrap();
        assert!(ratios.values.iter().all(|&x| x == 1.0), "{g:?}");
    }
}

/// Two turns of two agent tokens each under the uniform policy, with
/// sampling log-probabilities set so the per-turn ratios are 1.2 and 0.5.
fn two_turn_fixture() -> (PolicyParams, Trajectory) {
    let p = PolicyParams::zeros(small_vocab(), FeatureConfig::new(2).unwrap());
    let u = -(8f64).ln();
    let split = |r: f64| [u - 0.3 * r.ln(), u - 0.7 * r.ln()];
    let [a, b] = split(1.2);
    let [c, d] = split(0.5);
    let t = Trajectory {
        task_id: "fixture".into(),
        seed: 0,
        context: vec![2],
        tokens: vec![3, 4, 5, 6, 7, 2],
        action_mask: vec![true, true, false, true, true, false],
        turn_spans: vec![(0, 2), (3, 5)],
        sampling_logprobs: vec![a, b, c, d],
        ret: 1.0,
        truncated: false,
        turns: vec![TurnRecord::default(); 2],
    };
    t.validate().unwrap();
    (p, t)
}

#[test]
fn ratios_compose_by_product() {
    let (p, t) = two_turn_fixture();
    let turn = importance_ratios(&p, &t, Granularity::Turn).unwrap();
    assert!((turn.values[0] - 1.2).abs() < 1e-12);
    assert!((turn.values[1] - 0.5).abs() < 1e-12);
    let traj = importance_ratios(&p, &t, Granularity::Trajectory).unwrap();
    assert_eq!(traj.values.len(), 1);
    assert!((traj.values[0] - 0.6).abs() < 1e-12);
    let token = importance_ratios(&p, &t, Granularity::Token).unwrap();
    assert_eq!(token.values.len(), 4);
    assert!((token.values.iter().product::<f64>() - 0.6).abs() < 1e-12);
}

#[test]
fn extreme_log_ratios_are_clamped_and_counted() {
    let (p, mut t) = two_turn_fixture();
    t.sampling_logprobs = vec![-40.0, -40.0, -1e-3, -1e-3];
    let r = importance_ratios(&p, &t, Granularity::Trajectory).unwrap();
    assert_eq!(r.clamped, 1);
    assert!((r.values[0] - 30f64.exp()).abs() / 30f64.exp() < 1e-12);
    assert!(r.log_values[0] > 30.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn token_ratio_product_matches_logprob_difference(seed in any::<u64>()) {
        let mut r = rng(seed);
        let psi = random_params(&mut r, small_vocab(), 2, 1.0);
        let theta = random_params(&mut r, small_vocab(), 2, 1.0);
        let turns = r.gen_range(1..5);
        let t = sampled_trajectory(&psi, &mut r, turns);
        let oracle = traj_logprob(&theta, &t).unwrap() - t.sampling_logprobs.iter().sum::<f64>();
        let token = importance_ratios(&theta, &t, Granularity::Token).unwrap();
        let turn = importance_ratios(&theta, &t, Granularity::Turn).unwrap();
        let traj = importance_ratios(&theta, &t, Granularity::Trajectory).unwrap();
        let sum_log = |v: &[f64]| v.iter().map(|x| x.ln()).sum::<f64>();
        prop_assert!((sum_log(&token.values) - oracle).abs() < 1e-9);
        prop_assert!((sum_log(&turn.values) - oracle).abs() < 1e-9);
        prop_assert!((traj.values[0].ln() - oracle).abs() < 1e-9);
    }
}

#[test]
fn trajectories_round_trip_through_jsonl() {
    let tasks = relay_tasks(1);
    let p = mw_params(4);
    let trajs: Vec<_> = (0..3).map(|s| collect_rollout(&p, &tasks[0], &RolloutConfig::default(), s).unwrap()).collect();
    let mut buf = Vec::new();
    write_trajectories(&trajs, &mw::vocab(), &mut buf).unwrap();
    assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 3);
    let back = read_trajectories(buf.as_slice(), &mw::vocab()).unwrap();
    assert_eq!(back, trajs);
    assert!(read_trajectories("{\"nope\": 1}\n".as_bytes(), &mw::vocab()).is_err());
}

#[test]
fn full_scale_stop_threshold() {
    assert_eq!(stop_threshold(0.9, 6, 40), 216);
    assert_eq!(stop_threshold(1.0, 6, 40), 240);
    assert_eq!(stop_threshold(0.5, 3, 3), 5);
}

fn sequential_oracle(p: &PolicyParams, tasks: &[Task], cfg: &CollectConfig) -> Vec<Trajectory> {
    let mut out = Vec::new();
    for task in tasks {
        for k in 0..cfg.k {
            out.push(collect_rollout(p, task, &cfg.rollout, rollout_seed(cfg.seed, &task.task_id, k)).unwrap());
        }
    }
    out
}

#[test]
fn single_worker_matches_sequential_collection() {
    let tasks = relay_tasks(2);
    let p = mw_params(6);
    let cfg = CollectConfig { k: 3, workers: 1, min_per_task: 3, frac_total: 1.0, seed: 17, ..CollectConfig::default() };
    let report = collect_parallel(&p, &tasks, &cfg).unwrap();
    let got: Vec<_> = report.buffer.trajectories().cloned().collect();
    assert_eq!(got, sequential_oracle(&p, &tasks, &cfg));
    assert_eq!(got.len(), 3 * tasks.len());

    let parallel = collect_parallel(&p, &tasks, &CollectConfig { workers: 4, ..cfg.clone() }).unwrap();
    assert_eq!(parallel.buffer.trajectories().cloned().collect::<Vec<_>>(), got);
}

#[test]
fn early_stop_keeps_the_first_completions() {
    let tasks = relay_tasks(2);
    let p = mw_params(6);
    let cfg = CollectConfig { k: 6, workers: 1, min_per_task: 4, frac_total: 0.9, seed: 3, ..CollectConfig::default() };
    let report = collect_parallel(&p, &tasks, &cfg).unwrap();
    // 6 tasks need 33 of 36; jobs run replicate-major.
    assert_eq!(report.buffer.len(), 33);
    assert_eq!(report.skipped, 3);
}

fn dummy(task: &Task, replicate: usize) -> Trajectory {
    Trajectory {
        task_id: task.task_id.clone(),
        seed: replicate as u64,
        context: task.context(),
        tokens: vec![],
        action_mask: vec![],
        turn_spans: vec![],
        sampling_logprobs: vec![],
        ret: 0.0,
        truncated: true,
        turns: vec![],
    }
}

#[test]
fn slow_workers_are_left_behind() {
    let tasks = generate_tasks(Family::Aggregate, 14, 1).unwrap();
    let tasks: Vec<Task> = tasks.into_iter().take(40).collect();
    assert_eq!(tasks.len(), 40);
    // Ten jobs stall; the remaining workers must finish the rest without them.
    let cfg = CollectConfig { k: 6, workers: 16, min_per_task: 4, frac_total: 0.9, seed: 1, ..CollectConfig::default() };
    let slow = |task_index: usize, replicate: usize| replicate == 5 && task_index < 10;
    let start = Instant::now();
    let report = collect_parallel_with(&tasks, &cfg, |job, cancel: &AtomicBool| {
        if slow(job.task_index, job.replicate) {
            let until = Instant::now() + Duration::from_secs(20);
            while Instant::now() < until {
                if cancel.load(Ordering::SeqCst) {
                    return Ok(None);
                }
                std::thread::sleep(Duration::from_millis(2));
            }
        }
        Ok(Some(dummy(&tasks[job.task_index], job.replicate)))
    })
    .unwrap();
    assert!(start.elapsed() < Duration::from_secs(10));
    let n = report.buffer.len();
    assert!(n >= 216 && n <= 230, "kept {n}");
    for task in &tasks {
        let c = report.buffer.trajectories().filter(|t| t.task_id == task.task_id).count();
        assert!(c >= 4);
    }
    for (i, task) in tasks.iter().enumerate().take(10) {
        assert!(!report.buffer.trajectories().any(|t| t.task_id == task.task_id && t.seed == 5), "task {i}");
    }
    assert_eq!(report.buffer.len() + report.discarded + report.failed + report.skipped, 240);
}

#[test]
fn failed_rollouts_do_not_abort_collection() {
    let tasks = relay_tasks(1);
    let cfg = CollectConfig { k: 4, workers: 3, min_per_task: 2, frac_total: 0.5, seed: 0, ..CollectConfig::default() };
    let report = collect_parallel_with(&tasks, &cfg, |job, _| {
        if job.replicate == 0 {
            panic!("injected worker fault");
        }
        if job.replicate == 1 {
            return Err(leaveout::Error::Numerical("injected".into()));
        }
        Ok(Some(dummy(&tasks[job.task_index], job.replicate)))
    })
    .unwrap();
    assert!(report.failed >= 3);
    assert!(report.buffer.trajectories().all(|t| t.seed >= 2));
}
