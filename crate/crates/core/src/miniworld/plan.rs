//! Ground-truth solution scripts.
//!
//! Every task is solved by: one login turn per required app (fetch the
//! password, then log in with it), one turn per API call, and a final
//! `ANSWER _` or `DONE`. Logins come first because fetching a password
//! rebinds `_`.

use super::apps::{App, Function};
use super::task::{Family, Task};
use super::vocab;
use crate::policy::Token;

/// One API call of the plan; the first argument is always the task target and
/// the second, if any, is `_`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step {
    pub function: Function,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plan {
    pub logins: Vec<App>,
    pub steps: Vec<Step>,
    pub answers: bool,
}

impl Plan {
    pub fn for_task(task: &Task) -> Self {
        Self::new(task.family, task.difficulty)
    }

    pub fn new(family: Family, difficulty: u8) -> Self {
        use Function::*;
        let (chain, answers): (&[Function], bool) = match (family, difficulty) {
            (Family::Relay, 1) => (&[MailRead, PaySend], false),
            (Family::Relay, 2) => (&[MailRead, PaySend, NotesWrite], false),
            (Family::Relay, _) => (&[MailRead, PaySend, NotesWrite, MailSend], false),
            (Family::Aggregate, 1) => (&[PayTotal], true),
            (Family::Aggregate, 2) => (&[PayTotal, NotesWrite], false),
            (Family::Aggregate, _) => (&[PayTotal, NotesWrite, MailSend], false),
            (Family::Note, 1) => (&[NotesRead], true),
            (Family::Note, 2) => (&[NotesRead, MailSend], false),
            (Family::Note, _) => (&[NotesRead, MailSend, PaySend], false),
        };
        let mut logins = Vec::new();
        for f in chain {
            if !logins.contains(&f.app()) {
                logins.push(f.app());
            }
        }
        Self { logins, steps: chain.iter().map(|&function| Step { function }).collect(), answers }
    }

    pub fn turn_count(&self) -> usize {
        self.logins.len() + self.steps.len() + 1
    }
}

pub fn login_turn(app: App) -> Vec<Token> {
    vec![
        vocab::CALL,
        App::Supervisor.token(),
        Function::SupervisorPassword.token(),
        app.token(),
        vocab::SEP,
        vocab::LOGIN,
        app.token(),
        vocab::LAST,
        vocab::EOS,
    ]
}

pub fn call_turn(step: Step, target: Token) -> Vec<Token> {
    let f = step.function;
    let mut t = vec![vocab::CALL, f.app().token(), f.token(), target];
    if f.arity() == 2 {
        t.push(vocab::LAST);
    }
    t.push(vocab::EOS);
    t
}

pub fn final_turn(answers: bool) -> Vec<Token> {
    if answers {
        vec![vocab::ANSWER, vocab::LAST, vocab::EOS]
    } else {
        vec![vocab::DONE, vocab::EOS]
    }
}

pub fn docs_turn(app: App) -> Vec<Token> {
    vec![vocab::DOCS, app.token(), vocab::EOS]
}

/// The clean turn sequence that solves `task`.
pub fn solution_turns(task: &Task) -> Vec<Vec<Token>> {
    let plan = Plan::for_task(task);
    let target = task.target();
    let mut turns: Vec<Vec<Token>> = plan.logins.iter().map(|&a| login_turn(a)).collect();
    turns.extend(plan.steps.iter().map(|&s| call_turn(s, target)));
    turns.push(final_turn(plan.answers));
    turns
}
