//! Seeded task generation and task-file persistence.
//!
//! A scenario fixes a family, a difficulty and a background world (passwords,
//! distractor mail, payment history, notes). Its three variants differ only in
//! the target contact and the amounts attached to it.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::apps::App;
use super::exec::{replay, EnvConfig};
use super::plan::{solution_turns, Plan};
use super::state::{LoggedCall, Value, WorldState};
use super::task::{Family, Predicate, Split, Task, TestKind, UnitTest};
use super::vocab;
use crate::error::{Error, Result};
use crate::policy::Vocab;
use crate::seed;

pub const VARIANTS: usize = 3;
pub const DEFAULT_SPLIT_RATIOS: [f64; 3] = [0.6, 0.2, 0.2];
pub const MAX_TURNS_TRAIN: usize = 10;
pub const MAX_TURNS_EVAL: usize = 12;

fn contact_name(i: usize) -> String {
    vocab::symbol(vocab::contact(i)).to_owned()
}

fn pair(who: &str, n: i64) -> Value {
    Value::List(vec![Value::str(who), Value::Int(n)])
}

/// Scenario counts per split: rounded train and dev shares, remainder to test.
pub fn split_counts(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let train = ((n as f64) * ratios[0]).round() as usize;
    let dev = (((n as f64) * ratios[1]).round() as usize).min(n - train.min(n));
    let train = train.min(n);
    [train, dev, n - train - dev]
}

/// Generates `count` scenarios of `family` (three tasks each) with the default
/// 0.6/0.2/0.2 scenario split. Every task is checked to be solvable by the
/// scripted plan with reward 1.
pub fn generate_tasks(family: Family, count: usize, seed_value: u64) -> Result<Vec<Task>> {
    generate_tasks_with(family, count, seed_value, DEFAULT_SPLIT_RATIOS)
}

pub fn generate_tasks_with(family: Family, count: usize, seed_value: u64, ratios: [f64; 3]) -> Result<Vec<Task>> {
    if count == 0 {
        return Err(Error::Config("task count must be at least 1".into()));
    }
    let family_seed = seed::derive(seed_value, &[seed::fnv1a(family.name())]);
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut seed::rng(seed::derive(family_seed, &[u64::MAX])));
    let [n_train, n_dev, _] = split_counts(count, ratios);
    let mut split_of = vec![Split::Test; count];
    for (rank, &s) in order.iter().enumerate() {
        split_of[s] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_dev {
            Split::Dev
        } else {
            Split::Test
        };
    }

    let mut tasks = Vec::with_capacity(count * VARIANTS);
    for s in 0..count {
        let difficulty = 1 + (s % 3) as u8;
        let scenario_id = format!("{}-{:03}", family.name(), s);
        let mut rng = seed::rng(seed::derive(family_seed, &[s as u64]));
        let base = background_world(&mut rng);
        let mut targets: Vec<usize> = (0..vocab::CONTACT_COUNT).collect();
        targets.shuffle(&mut rng);
        for (v, &target) in targets.iter().take(VARIANTS).enumerate() {
            let task = build_variant(family, difficulty, &scenario_id, v + 1, split_of[s], &base, target, &mut rng);
            verify_solvable(&task)?;
            tasks.push(task);
        }
    }
    Ok(tasks)
}

fn background_world<R: Rng>(rng: &mut R) -> WorldState {
    let mut w = WorldState::default();
    let contacts: Vec<Value> = (0..vocab::CONTACT_COUNT).map(|i| Value::Str(contact_name(i))).collect();
    w.set(App::Supervisor, "contacts", Value::List(contacts));
    let mut pws: Vec<usize> = (0..vocab::PASSWORD_COUNT).collect();
    pws.shuffle(rng);
    for (app, pw) in [App::Mail, App::Pay, App::Notes].into_iter().zip(pws) {
        w.set(App::Supervisor, &format!("password.{}", app.name()), Value::str(vocab::symbol(vocab::password(pw))));
    }
    let mut who: Vec<usize> = (0..vocab::CONTACT_COUNT).collect();
    who.shuffle(rng);
    let inbox = who[..rng.gen_range(3..=5)]
        .iter()
        .map(|&c| pair(&contact_name(c), rng.gen_range(1..=9)))
        .collect();
    w.set(App::Mail, "inbox", Value::List(inbox));
    w.set(App::Mail, "outbox", Value::List(Vec::new()));
    who.shuffle(rng);
    let sent = who[..rng.gen_range(2..=4)]
        .iter()
        .map(|&c| pair(&contact_name(c), rng.gen_range(1..=4)))
        .collect();
    w.set(App::Pay, "sent", Value::List(sent));
    w.set(App::Pay, "balance", Value::Int(9));
    who.shuffle(rng);
    for &c in &who[..rng.gen_range(2..=4)] {
        w.set(App::Notes, &contact_name(c), Value::Int(rng.gen_range(1..=9)));
    }
    w
}

fn set_inbox_amount(w: &mut WorldState, who: &str, amount: i64) {
    let mut inbox: Vec<Value> = w
        .list(App::Mail, "inbox")
        .iter()
        .filter(|m| !matches!(m, Value::List(p) if p.first().and_then(Value::as_str) == Some(who)))
        .cloned()
        .collect();
    inbox.push(pair(who, amount));
    w.set(App::Mail, "inbox", Value::List(inbox));
}

fn count_in(w: &WorldState, app: App, key: &str, item: &Value) -> usize {
    w.list(app, key).iter().filter(|i| *i == item).count()
}

#[allow(clippy::too_many_arguments)]
fn build_variant<R: Rng>(
    family: Family,
    difficulty: u8,
    scenario_id: &str,
    variant: usize,
    split: Split,
    base: &WorldState,
    target: usize,
    rng: &mut R,
) -> Task {
    let who = contact_name(target);
    let mut world = base.clone();
    let mut tests = Vec::new();
    let mut allowed = Vec::new();
    let plan = Plan::new(family, difficulty);

    // The value that flows through `_` after the first read.
    let value = match family {
        Family::Relay => {
            let a = rng.gen_range(1..=9);
            set_inbox_amount(&mut world, &who, a);
            if let Some(store) = world.apps.get_mut(App::Notes.name()) {
                store.remove(&who);
            }
            a
        }
        Family::Aggregate => {
            // Replace the target's history with one or two fresh payments.
            let mut sent: Vec<Value> = world
                .list(App::Pay, "sent")
                .iter()
                .filter(|p| !matches!(p, Value::List(x) if x.first().and_then(Value::as_str) == Some(&who)))
                .cloned()
                .collect();
            let mut total = 0;
            for _ in 0..rng.gen_range(1..=2) {
                let a = rng.gen_range(1..=4);
                total += a;
                sent.push(pair(&who, a));
            }
            sent.shuffle(rng);
            world.set(App::Pay, "sent", Value::List(sent));
            if let Some(store) = world.apps.get_mut(App::Notes.name()) {
                store.remove(&who);
            }
            total
        }
        Family::Note => {
            let v = rng.gen_range(1..=9);
            world.set(App::Notes, &who, Value::Int(v));
            v
        }
    };

    let item = pair(&who, value);
    for step in &plan.steps {
        use super::apps::Function::*;
        let f = step.function;
        if !f.mutating() {
            continue;
        }
        allowed.push(LoggedCall { endpoint: f.endpoint(), args: vec![Value::str(&who), Value::Int(value)] });
        let predicate = match f {
            PaySend => Predicate::ListCount {
                app: "pay".into(),
                key: "sent".into(),
                item: item.clone(),
                count: count_in(&world, App::Pay, "sent", &item) + 1,
            },
            MailSend => Predicate::ListCount {
                app: "mail".into(),
                key: "outbox".into(),
                item: item.clone(),
                count: count_in(&world, App::Mail, "outbox", &item) + 1,
            },
            NotesWrite => Predicate::KeyEquals { app: "notes".into(), key: who.clone(), value: Value::Int(value) },
            _ => unreachable!("only mutating functions reach here"),
        };
        tests.push(UnitTest { kind: TestKind::StateChange, predicate });
    }
    if plan.answers {
        tests.push(UnitTest { kind: TestKind::Answer, predicate: Predicate::AnswerEquals { value: Value::Int(value) } });
    }
    tests.push(UnitTest { kind: TestKind::NoExtraneousChange, predicate: Predicate::LogWithin { allowed } });

    Task {
        task_id: format!("{scenario_id}-{variant}"),
        scenario_id: scenario_id.to_owned(),
        family,
        variant: variant as u8,
        difficulty,
        split,
        instruction: vec![family.verb(), vocab::LEVEL_BASE + difficulty as usize - 1, vocab::contact(target)],
        initial_state: world,
        unit_tests: tests,
        max_turns_train: MAX_TURNS_TRAIN,
        max_turns_eval: MAX_TURNS_EVAL,
    }
}

fn verify_solvable(task: &Task) -> Result<()> {
    let turns = solution_turns(task);
    let (state, last) = replay(task, &turns, &EnvConfig::default());
    let answer = last.and_then(|r| r.answer);
    let r = task.evaluate(&state, &state.transaction_log, answer.as_ref());
    if r != 1.0 {
        return Err(Error::Contract(format!("generated task {} is not solvable (reward {r})", task.task_id)));
    }
    Ok(())
}

/// On-disk form of a task: tokens as symbol strings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub scenario_id: String,
    pub family: Family,
    pub variant: u8,
    pub difficulty: u8,
    pub split: Split,
    pub instruction: Vec<String>,
    pub initial_state: WorldState,
    pub unit_tests: Vec<UnitTest>,
    pub max_turns_train: usize,
    pub max_turns_eval: usize,
}

impl TaskRecord {
    pub fn from_task(task: &Task, vocab: &Vocab) -> Result<Self> {
        Ok(Self {
            task_id: task.task_id.clone(),
            scenario_id: task.scenario_id.clone(),
            family: task.family,
            variant: task.variant,
            difficulty: task.difficulty,
            split: task.split,
            instruction: vocab.decode(&task.instruction)?,
            initial_state: task.initial_state.clone(),
            unit_tests: task.unit_tests.clone(),
            max_turns_train: task.max_turns_train,
            max_turns_eval: task.max_turns_eval,
        })
    }

    pub fn into_task(self, vocab: &Vocab) -> Result<Task> {
        if self.unit_tests.is_empty() {
            return Err(Error::Format(format!("task {} has no unit tests", self.task_id)));
        }
        Ok(Task {
            instruction: vocab.encode(&self.instruction)?,
            task_id: self.task_id,
            scenario_id: self.scenario_id,
            family: self.family,
            variant: self.variant,
            difficulty: self.difficulty,
            split: self.split,
            initial_state: self.initial_state,
            unit_tests: self.unit_tests,
            max_turns_train: self.max_turns_train,
            max_turns_eval: self.max_turns_eval,
        })
    }
}

/// Writes one JSON record per line.
pub fn write_tasks<W: Write>(tasks: &[Task], mut out: W) -> Result<()> {
    let vocab = vocab::vocab();
    for t in tasks {
        serde_json::to_writer(&mut out, &TaskRecord::from_task(t, &vocab)?)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_tasks<R: BufRead>(input: R) -> Result<Vec<Task>> {
    let vocab = vocab::vocab();
    let mut tasks = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TaskRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("task record on line {}: {e}", i + 1)))?;
        tasks.push(rec.into_task(&vocab)?);
    }
    Ok(tasks)
}

/// Groups tasks by split label.
pub fn by_split(tasks: Vec<Task>) -> BTreeMap<Split, Vec<Task>> {
    let mut out: BTreeMap<Split, Vec<Task>> = Split::ALL.iter().map(|&s| (s, Vec::new())).collect();
    for t in tasks {
        out.entry(t.split).or_default().push(t);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_arithmetic() {
        assert_eq!(split_counts(10, DEFAULT_SPLIT_RATIOS), [6, 2, 2]);
        assert_eq!(split_counts(1, DEFAULT_SPLIT_RATIOS), [1, 0, 0]);
        assert_eq!(split_counts(5, DEFAULT_SPLIT_RATIOS), [3, 1, 1]);
    }

    #[test]
    fn ten_scenarios_split_six_two_two() {
        let tasks = generate_tasks(Family::Note, 10, 3).unwrap();
        let groups = by_split(tasks);
        let scenarios = |s: Split| {
            let mut ids: Vec<_> = groups[&s].iter().map(|t| t.scenario_id.clone()).collect();
            ids.dedup();
            ids.len()
        };
        assert_eq!((scenarios(Split::Train), scenarios(Split::Dev), scenarios(Split::Test)), (6, 2, 2));
    }

    #[test]
    fn one_relay_scenario_has_three_solvable_variants() {
        let tasks = generate_tasks(Family::Relay, 1, 7).unwrap();
        assert_eq!(tasks.len(), 3);
        assert!(tasks.iter().all(|t| t.scenario_id == tasks[0].scenario_id));
        let targets: std::collections::BTreeSet<_> = tasks.iter().map(|t| t.target()).collect();
        assert_eq!(targets.len(), 3);
    }

    #[test]
    fn zero_count_is_rejected() {
        assert!(generate_tasks(Family::Relay, 0, 1).is_err());
    }

    #[test]
    fn variants_share_the_background() {
        let tasks = generate_tasks(Family::Aggregate, 1, 11).unwrap();
        let pw = |t: &Task| t.initial_state.get(App::Supervisor, "password.pay").cloned();
        assert_eq!(pw(&tasks[0]), pw(&tasks[1]));
        assert_eq!(pw(&tasks[1]), pw(&tasks[2]));
    }
}
