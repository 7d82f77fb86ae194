use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::apps::App;
use super::state::{LoggedCall, Value, WorldState};
use super::vocab;
use crate::error::Error;
use crate::policy::Token;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Pay a contact the amount they asked for by mail.
    Relay,
    /// Look up the total paid to a contact.
    Aggregate,
    /// Read a note and forward its value.
    Note,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Relay, Family::Aggregate, Family::Note];

    pub fn name(self) -> &'static str {
        match self {
            Family::Relay => "relay",
            Family::Aggregate => "aggregate",
            Family::Note => "note",
        }
    }

    pub fn verb(self) -> Token {
        vocab::VERB_BASE + self as usize
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::UnknownFamily(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown split `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    StateChange,
    NoExtraneousChange,
    Answer,
}

/// Declarative check over the end of an episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Predicate {
    /// `apps[app][key]` equals `value`.
    KeyEquals { app: String, key: String, value: Value },
    /// The list at `apps[app][key]` holds `item` exactly `count` times.
    ListCount { app: String, key: String, item: Value, count: usize },
    /// Every logged mutation appears in `allowed` (as a multiset).
    LogWithin { allowed: Vec<LoggedCall> },
    /// The final answer equals `value`.
    AnswerEquals { value: Value },
}

impl Predicate {
    pub fn holds(&self, state: &WorldState, log: &[LoggedCall], answer: Option<&Value>) -> bool {
        match self {
            Predicate::KeyEquals { app, key, value } => {
                state.apps.get(app).and_then(|s| s.get(key)) == Some(value)
            }
            Predicate::ListCount { app, key, item, count } => {
                let n = match state.apps.get(app).and_then(|s| s.get(key)) {
                    Some(Value::List(items)) => items.iter().filter(|i| *i == item).count(),
                    _ => 0,
                };
                n == *count
            }
            Predicate::LogWithin { allowed } => {
                let mut budget: BTreeMap<&LoggedCall, usize> = BTreeMap::new();
                for call in allowed {
                    *budget.entry(call).or_default() += 1;
                }
                log.iter().all(|call| match budget.get_mut(call) {
                    Some(n) if *n > 0 => {
                        *n -= 1;
                        true
                    }
                    _ => false,
                })
            }
            Predicate::AnswerEquals { value } => answer == Some(value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitTest {
    pub kind: TestKind,
    pub predicate: Predicate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub task_id: String,
    pub scenario_id: String,
    pub family: Family,
    /// 1-based variant index within the scenario.
    pub variant: u8,
    pub difficulty: u8,
    pub split: Split,
    pub instruction: Vec<Token>,
    pub initial_state: WorldState,
    pub unit_tests: Vec<UnitTest>,
    pub max_turns_train: usize,
    pub max_turns_eval: usize,
}

impl Task {
    /// Preamble token followed by the instruction.
    pub fn context(&self) -> Vec<Token> {
        let mut c = Vec::with_capacity(self.instruction.len() + 1);
        c.push(vocab::PREAMBLE);
        c.extend_from_slice(&self.instruction);
        c
    }

    /// The contact the instruction is about.
    pub fn target(&self) -> Token {
        *self.instruction.last().expect("instruction is nonempty")
    }

    /// Fraction of unit tests that pass.
    pub fn evaluate(&self, state: &WorldState, log: &[LoggedCall], answer: Option<&Value>) -> f64 {
        let passed = self
            .unit_tests
            .iter()
            .filter(|t| t.predicate.holds(state, log, answer))
            .count();
        passed as f64 / self.unit_tests.len() as f64
    }

    pub fn app_state(&self, app: App, key: &str) -> Option<&Value> {
        self.initial_state.get(app, key)
    }
}
