use leaveout::metrics::{behavior_report, compare, give_up_counts, give_up_rate, BehaviorReport, GiveUpCounts};
use leaveout::rollout::{Trajectory, TurnRecord};
use proptest::prelude::*;

fn turn(endpoints: &[&str], error: bool, commands: usize, docs: usize) -> TurnRecord {
    TurnRecord {
        endpoints_attempted: endpoints.iter().map(|s| s.to_string()).collect(),
        execution_error: error,
        error_code: None,
        command_count: commands,
        docs_calls: docs,
    }
}

fn rollout(turns: Vec<TurnRecord>) -> Trajectory {
    Trajectory {
        task_id: "t".into(),
        seed: 0,
        context: vec![],
        tokens: vec![],
        action_mask: vec![],
        turn_spans: vec![],
        sampling_logprobs: vec![],
        ret: 0.0,
        truncated: false,
        turns,
    }
}

#[test]
fn recovered_failure_is_not_a_give_up() {
    let r = rollout(vec![turn(&["pay.send"], true, 1, 0), turn(&["pay.send"], false, 1, 0)]);
    assert_eq!(give_up_counts([r.turns.as_slice()]), GiveUpCounts { failed: 1, recovered: 1 });
    assert_eq!(give_up_rate(&[r]), 0.0);
}

#[test]
fn unretried_failure_is_a_give_up() {
    let r = rollout(vec![turn(&["pay.send"], true, 1, 0), turn(&[], false, 1, 0)]);
    assert_eq!(give_up_rate(&[r]), 1.0);
}

#[test]
fn half_recovered() {
    let r = rollout(vec![
        turn(&["pay.send"], true, 1, 0),
        turn(&["mail.read"], true, 1, 0),
        turn(&["pay.send"], false, 1, 0),
    ]);
    assert_eq!(give_up_rate(&[r]), 0.5);
}

#[test]
fn repeated_failures_count_once_until_recovered() {
    let r = rollout(vec![
        turn(&["pay.send"], true, 1, 0),
        turn(&["pay.send"], true, 1, 0),
        turn(&["pay.send"], false, 1, 0),
        turn(&["pay.send"], true, 1, 0),
    ]);
    assert_eq!(give_up_counts([r.turns.as_slice()]), GiveUpCounts { failed: 2, recovered: 1 });
}

#[test]
fn pending_sets_do_not_cross_rollouts() {
    let a = rollout(vec![turn(&["pay.send"], true, 1, 0)]);
    let b = rollout(vec![turn(&["pay.send"], false, 1, 0)]);
    assert_eq!(give_up_rate(&[a, b]), 1.0);
    assert_eq!(give_up_rate(&[]), 0.0);
}

#[test]
fn per_turn_and_per_rollout_rates() {
    let one = rollout(vec![
        turn(&[], false, 1, 0),
        turn(&[], false, 2, 0),
        turn(&[], false, 1, 0),
        turn(&[], false, 1, 0),
    ]);
    assert_eq!(behavior_report(&[one]).multi_command_turn_rate, 0.25);

    let docs = |n| rollout((0..n).map(|_| turn(&[], false, 1, 1)).collect());
    assert_eq!(behavior_report(&[docs(3), docs(5)]).docs_calls_per_rollout, 4.0);

    let mut turns: Vec<_> = (0..6).map(|_| turn(&[], false, 1, 0)).collect();
    turns.push(turn(&["mail.read"], true, 1, 0));
    turns.push(turn(&["mail.read"], true, 1, 0));
    let report = behavior_report(&[rollout(turns[..4].to_vec()), rollout(turns[4..].to_vec())]);
    assert_eq!(report.execution_errors_per_turn, 0.25);
    assert_eq!(report.turns, 8);
    assert_eq!(report.commands_per_rollout, 4.0);
}

#[test]
fn empty_input_gives_an_empty_report() {
    assert_eq!(behavior_report(&[]), BehaviorReport::default());
}

#[test]
fn comparison_ratios() {
    let base = behavior_report(&[rollout(vec![turn(&[], false, 2, 1), turn(&["pay.send"], true, 1, 0)])]);
    let trained = behavior_report(&[rollout(vec![turn(&[], false, 1, 0)])]);
    let same = compare(&base, &base).unwrap();
    assert!(same.iter().all(|c| c.ratio == Some(1.0)));
    let diff = compare(&base, &trained).unwrap();
    let get = |name: &str| diff.iter().find(|c| c.metric == name).unwrap().clone();
    assert_eq!(get("turns_per_rollout").ratio, Some(0.5));
    assert_eq!(get("commands_per_rollout").ratio, Some(1.0 / 3.0));
    assert_eq!(get("execution_errors_per_turn").ratio, Some(0.0));
    assert!(compare(&base, &BehaviorReport::default()).is_err());
    assert!(compare(&BehaviorReport::default(), &base).is_err());
}

fn arb_turn() -> impl Strategy<Value = TurnRecord> {
    let endpoint = prop::sample::select(vec!["pay.send", "mail.read", "notes.write", "pay.total"]);
    (prop::collection::vec(endpoint, 0..3), any::<bool>(), 0usize..4, 0usize..3)
        .prop_map(|(e, err, c, d)| turn(&e, err, c, d))
}

proptest! {
    #[test]
    fn rates_are_bounded_and_order_free(
        rollouts in prop::collection::vec(prop::collection::vec(arb_turn(), 0..6), 1..6),
        rot in 0usize..6,
    ) {
        let trajs: Vec<_> = rollouts.into_iter().map(rollout).collect();
        let report = behavior_report(&trajs);
        for v in [report.multi_command_turn_rate, report.execution_errors_per_turn, report.give_up_rate] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let c = give_up_counts(trajs.iter().map(|t| t.turns.as_slice()));
        prop_assert!(c.recovered <= c.failed);
        let mut rotated = trajs.clone();
        let k = rot % rotated.len();
        rotated.rotate_left(k);
        prop_assert_eq!(behavior_report(&rotated), report);
    }
}
