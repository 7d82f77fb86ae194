use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::apps::App;
use super::vocab;
use crate::policy::Token;

/// A stored value: integer, symbol, or list.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Str(String),
    List(Vec<Value>),
}

impl Value {
    pub fn str(s: &str) -> Self {
        Value::Str(s.to_owned())
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn from_token(t: Token) -> Option<Self> {
        if vocab::is_digit(t) {
            Some(Value::Int((t - vocab::DIGIT_BASE) as i64))
        } else if vocab::is_value(t) && t != vocab::LAST {
            Some(Value::Str(vocab::symbol(t).to_owned()))
        } else {
            None
        }
    }

    /// Renders into response tokens. Integers become their decimal digits;
    /// strings outside the alphabet are dropped.
    pub fn to_tokens(&self, out: &mut Vec<Token>) {
        match self {
            Value::Int(n) => {
                for ch in n.unsigned_abs().to_string().chars() {
                    out.push(vocab::digit(ch.to_digit(10).expect("decimal digit")));
                }
            }
            Value::Str(s) => {
                if let Some(t) = vocab::vocab().lookup(s) {
                    out.push(t);
                }
            }
            Value::List(items) => items.iter().for_each(|v| v.to_tokens(out)),
        }
    }
}

/// A state-changing call recorded in the transaction log.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LoggedCall {
    pub endpoint: String,
    pub args: Vec<Value>,
}

/// Per-app key-value stores plus REPL-like session state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldState {
    pub apps: BTreeMap<String, BTreeMap<String, Value>>,
    pub sessions: BTreeSet<String>,
    pub bound_vars: BTreeMap<String, Value>,
    pub transaction_log: Vec<LoggedCall>,
}

impl Default for WorldState {
    fn default() -> Self {
        let apps = App::ALL
            .iter()
            .map(|a| (a.name().to_owned(), BTreeMap::new()))
            .collect();
        Self {
            apps,
            sessions: BTreeSet::from([App::Supervisor.name().to_owned()]),
            bound_vars: BTreeMap::new(),
            transaction_log: Vec::new(),
        }
    }
}

impl WorldState {
    pub fn get(&self, app: App, key: &str) -> Option<&Value> {
        self.apps.get(app.name()).and_then(|s| s.get(key))
    }

    pub fn set(&mut self, app: App, key: &str, value: Value) {
        self.apps
            .entry(app.name().to_owned())
            .or_default()
            .insert(key.to_owned(), value);
    }

    pub fn push(&mut self, app: App, key: &str, item: Value) {
        let store = self.apps.entry(app.name().to_owned()).or_default();
        match store.entry(key.to_owned()).or_insert_with(|| Value::List(Vec::new())) {
            Value::List(items) => items.push(item),
            other => *other = Value::List(vec![item]),
        }
    }

    pub fn list(&self, app: App, key: &str) -> &[Value] {
        match self.get(app, key) {
            Some(Value::List(items)) => items,
            _ => &[],
        }
    }

    pub fn logged_in(&self, app: App) -> bool {
        self.sessions.contains(app.name())
    }

    pub fn contacts(&self) -> impl Iterator<Item = &str> {
        self.list(App::Supervisor, "contacts").iter().filter_map(Value::as_str)
    }

    pub fn is_contact(&self, name: &str) -> bool {
        self.contacts().any(|c| c == name)
    }
}
