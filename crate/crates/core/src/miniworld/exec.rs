//! Turn execution.
//!
//! Commands in a turn run in order against the live state. The first failing
//! command aborts the rest of the turn, and no command mutates state unless it
//! succeeds: every check happens before the first write.

use serde::{Deserialize, Serialize};

use super::apps::{docs, App, Function};
use super::lang::{parse_command, split_turn, Command};
use super::state::{LoggedCall, Value, WorldState};
use super::task::Task;
use super::vocab;
use crate::policy::Token;

/// Default cap on response body length, in tokens.
pub const TRUNCATION_LIMIT: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ErrorCode {
    Parse,
    Auth,
    Nofn,
    Arity,
    Noent,
}

impl ErrorCode {
    pub fn token(self) -> Token {
        vocab::CODE_BASE + self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub truncation_limit: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self { truncation_limit: TRUNCATION_LIMIT }
    }
}

/// Outcome of executing one agent turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnResult {
    pub response_tokens: Vec<Token>,
    pub execution_error: bool,
    pub error_code: Option<ErrorCode>,
    pub endpoints_attempted: Vec<String>,
    pub done: bool,
    pub answer: Option<Value>,
    /// Commands the agent wrote in this turn, executed or not.
    pub command_count: usize,
    pub docs_calls: usize,
}

enum Outcome {
    Output(Option<Value>),
    Terminal(Option<Value>),
}

/// Executes one turn in place. The response carries only the execution
/// output; [`Episode::step`] appends the instruction echo.
pub fn step_turn(state: &mut WorldState, turn: &[Token], config: &EnvConfig) -> TurnResult {
    let segments = split_turn(turn);
    let mut result = TurnResult {
        response_tokens: Vec::new(),
        execution_error: false,
        error_code: None,
        endpoints_attempted: Vec::new(),
        done: false,
        answer: None,
        command_count: segments.iter().filter(|s| !s.is_empty()).count(),
        docs_calls: segments.iter().filter(|s| s.first() == Some(&vocab::DOCS)).count(),
    };
    let mut last_output = None;
    for seg in segments {
        let outcome = match parse_command(seg) {
            Some(cmd) => execute(state, &cmd, &mut result.endpoints_attempted),
            None => Err(ErrorCode::Parse),
        };
        match outcome {
            Ok(Outcome::Output(v)) => last_output = v,
            Ok(Outcome::Terminal(answer)) => {
                result.done = true;
                result.answer = answer;
                last_output = None;
                break;
            }
            Err(code) => {
                result.execution_error = true;
                result.error_code = Some(code);
                break;
            }
        }
    }
    let mut body = match result.error_code {
        Some(code) => vec![vocab::ERR, code.token()],
        None => {
            let mut b = vec![vocab::OK];
            if let Some(v) = &last_output {
                v.to_tokens(&mut b);
            }
            b
        }
    };
    if body.len() > config.truncation_limit {
        body.truncate(config.truncation_limit);
        body.push(vocab::TRUNCATED);
    }
    result.response_tokens = body;
    result
}

fn resolve(state: &WorldState, t: Token) -> Result<Value, ErrorCode> {
    if t == vocab::LAST {
        state.bound_vars.get("_").cloned().ok_or(ErrorCode::Noent)
    } else {
        Value::from_token(t).ok_or(ErrorCode::Parse)
    }
}

fn execute(state: &mut WorldState, cmd: &Command, attempted: &mut Vec<String>) -> Result<Outcome, ErrorCode> {
    match cmd {
        Command::Docs { app, function } => {
            let table = docs().app(*app).ok_or(ErrorCode::Noent)?;
            let mut out = Vec::new();
            match function {
                None => out.extend(table.functions.iter().map(|f| Value::Str(f.name.clone()))),
                Some(ft) => {
                    let f = Function::resolve(*app, *ft).ok_or(ErrorCode::Nofn)?;
                    let entry = table.functions.iter().find(|d| d.name == f.name()).ok_or(ErrorCode::Nofn)?;
                    out.push(Value::Str(entry.name.clone()));
                    out.push(Value::Int(entry.args.len() as i64));
                }
            }
            Ok(Outcome::Output(Some(Value::List(out))))
        }
        Command::Login { app, password } => {
            let given = resolve(state, *password)?;
            if *app != App::Supervisor {
                let key = format!("password.{}", app.name());
                if state.get(App::Supervisor, &key) != Some(&given) {
                    return Err(ErrorCode::Auth);
                }
            }
            state.sessions.insert(app.name().to_owned());
            Ok(Outcome::Output(None))
        }
        Command::Call { app, function, args } => {
            let f = Function::resolve(*app, *function).ok_or(ErrorCode::Nofn)?;
            attempted.push(f.endpoint());
            if !state.logged_in(*app) {
                return Err(ErrorCode::Auth);
            }
            if args.len() != f.arity() {
                return Err(ErrorCode::Arity);
            }
            let values = args.iter().map(|&t| resolve(state, t)).collect::<Result<Vec<_>, _>>()?;
            call(state, f, values)
        }
        Command::Answer(t) => Ok(Outcome::Terminal(Some(resolve(state, *t)?))),
        Command::Done => Ok(Outcome::Terminal(None)),
    }
}

fn contact_arg(state: &WorldState, v: &Value) -> Result<String, ErrorCode> {
    match v.as_str() {
        Some(c) if state.is_contact(c) => Ok(c.to_owned()),
        _ => Err(ErrorCode::Noent),
    }
}

fn scalar_arg(v: &Value) -> Result<Value, ErrorCode> {
    match v {
        Value::List(_) => Err(ErrorCode::Noent),
        other => Ok(other.clone()),
    }
}

fn call(state: &mut WorldState, f: Function, args: Vec<Value>) -> Result<Outcome, ErrorCode> {
    let read = |state: &mut WorldState, v: Value| {
        state.bound_vars.insert("_".into(), v.clone());
        Ok(Outcome::Output(Some(v)))
    };
    let log = |state: &mut WorldState, args: Vec<Value>| {
        state.transaction_log.push(LoggedCall { endpoint: f.endpoint(), args });
        Ok(Outcome::Output(None))
    };
    match f {
        Function::SupervisorPassword => {
            let app = args[0].as_str().and_then(App::from_name).ok_or(ErrorCode::Noent)?;
            let pw = state
                .get(App::Supervisor, &format!("password.{}", app.name()))
                .cloned()
                .ok_or(ErrorCode::Noent)?;
            read(state, pw)
        }
        Function::MailInbox => {
            let items = state.list(App::Mail, "inbox").to_vec();
            read(state, Value::List(items))
        }
        Function::MailRead => {
            let who = contact_arg(state, &args[0])?;
            let amount = state
                .list(App::Mail, "inbox")
                .iter()
                .find_map(|m| match m {
                    Value::List(pair) if pair.first().and_then(Value::as_str) == Some(&who) => pair.get(1).cloned(),
                    _ => None,
                })
                .ok_or(ErrorCode::Noent)?;
            read(state, amount)
        }
        Function::MailSend => {
            let to = contact_arg(state, &args[0])?;
            let value = scalar_arg(&args[1])?;
            let entry = vec![Value::Str(to), value];
            state.push(App::Mail, "outbox", Value::List(entry.clone()));
            log(state, entry)
        }
        Function::PayBalance => {
            let b = state.get(App::Pay, "balance").cloned().ok_or(ErrorCode::Noent)?;
            read(state, b)
        }
        Function::PaySend => {
            let to = contact_arg(state, &args[0])?;
            let amount = args[1].as_int().filter(|&a| a >= 1).ok_or(ErrorCode::Noent)?;
            let entry = vec![Value::Str(to), Value::Int(amount)];
            state.push(App::Pay, "sent", Value::List(entry.clone()));
            log(state, entry)
        }
        Function::PayTotal => {
            let who = contact_arg(state, &args[0])?;
            let total: i64 = state
                .list(App::Pay, "sent")
                .iter()
                .filter_map(|p| match p {
                    Value::List(pair) if pair.first().and_then(Value::as_str) == Some(&who) => {
                        pair.get(1).and_then(Value::as_int)
                    }
                    _ => None,
                })
                .sum();
            read(state, Value::Int(total))
        }
        Function::NotesRead => {
            let key = contact_arg(state, &args[0])?;
            let v = state.get(App::Notes, &key).cloned().ok_or(ErrorCode::Noent)?;
            read(state, v)
        }
        Function::NotesWrite => {
            let key = contact_arg(state, &args[0])?;
            let value = scalar_arg(&args[1])?;
            state.set(App::Notes, &key, value.clone());
            log(state, vec![Value::Str(key), value])
        }
    }
}

/// Fresh copy of the task's initial state and the agent's opening context.
pub fn reset(task: &Task) -> (WorldState, Vec<Token>) {
    (task.initial_state.clone(), task.context())
}

/// One live episode: state, turn counter, and the terminal answer.
#[derive(Debug, Clone)]
pub struct Episode<'t> {
    task: &'t Task,
    pub state: WorldState,
    context: Vec<Token>,
    turns: usize,
    turn_limit: usize,
    config: EnvConfig,
    answer: Option<Value>,
    terminal: bool,
    finished: bool,
}

impl<'t> Episode<'t> {
    pub fn new(task: &'t Task, turn_limit: usize, config: EnvConfig) -> Self {
        let (state, context) = reset(task);
        Self { task, state, context, turns: 0, turn_limit, config, answer: None, terminal: false, finished: false }
    }

    pub fn context(&self) -> &[Token] {
        &self.context
    }

    pub fn turns(&self) -> usize {
        self.turns
    }

    pub fn finished(&self) -> bool {
        self.finished
    }

    pub fn answer(&self) -> Option<&Value> {
        self.answer.as_ref()
    }

    /// Executes a turn and appends the instruction echo to the response.
    /// `done` is also set when this turn exhausts the turn limit.
    pub fn step(&mut self, turn: &[Token]) -> TurnResult {
        let mut result = step_turn(&mut self.state, turn, &self.config);
        self.turns += 1;
        if result.done {
            self.answer = result.answer.clone();
            self.terminal = true;
        }
        if self.turns >= self.turn_limit {
            result.done = true;
        }
        self.finished = result.done;
        result.response_tokens.extend_from_slice(&self.context);
        result
    }

    /// Whether the agent ended the episode with `ANSWER` or `DONE`.
    pub fn terminal(&self) -> bool {
        self.terminal
    }

    /// Ends the episode without a terminal command (context exhausted).
    pub fn abort(&mut self) {
        self.finished = true;
    }

    pub fn limit_reached(&self) -> bool {
        self.turns >= self.turn_limit
    }

    pub fn reward(&self) -> f64 {
        self.task.evaluate(&self.state, &self.state.transaction_log, self.answer.as_ref())
    }
}

/// Replays a whole turn history from the initial state and returns the final
/// state together with the response to the most recent turn.
pub fn replay(task: &Task, turns: &[Vec<Token>], config: &EnvConfig) -> (WorldState, Option<TurnResult>) {
    let mut ep = Episode::new(task, usize::MAX, *config);
    let mut last = None;
    for t in turns {
        if ep.finished() {
            break;
        }
        last = Some(ep.step(t));
    }
    (ep.state, last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::miniworld::{generate_tasks, Family};

    fn toks(s: &str) -> Vec<Token> {
        vocab::vocab().parse(s).unwrap()
    }

    fn render(ts: &[Token]) -> String {
        vocab::vocab().render(ts)
    }

    fn state() -> WorldState {
        let task = generate_tasks(Family::Relay, 1, 7).unwrap().remove(0);
        task.initial_state
    }

    #[test]
    fn docs_lists_function_names() {
        let mut s = state();
        let r = step_turn(&mut s, &toks("DOCS pay <eos>"), &EnvConfig::default());
        assert!(!r.execution_error);
        assert_eq!(render(&r.response_tokens), "OK balance send total");
        let r = step_turn(&mut s, &toks("DOCS pay send <eos>"), &EnvConfig::default());
        assert_eq!(render(&r.response_tokens), "OK send 2");
        let r = step_turn(&mut s, &toks("DOCS pay read <eos>"), &EnvConfig::default());
        assert_eq!(r.error_code, Some(ErrorCode::Nofn));
    }

    #[test]
    fn call_without_login_is_auth_error() {
        let mut s = state();
        let r = step_turn(&mut s, &toks("CALL pay send c1 5 <eos>"), &EnvConfig::default());
        assert_eq!(r.error_code, Some(ErrorCode::Auth));
        assert_eq!(r.endpoints_attempted, vec!["pay.send".to_string()]);
        assert_eq!(render(&r.response_tokens), "ERR AUTH");
    }

    #[test]
    fn empty_turn_is_parse_error() {
        let mut s = state();
        let r = step_turn(&mut s, &toks("<eos>"), &EnvConfig::default());
        assert_eq!(r.error_code, Some(ErrorCode::Parse));
        assert_eq!(r.command_count, 0);
    }

    #[test]
    fn login_with_fetched_password_then_call() {
        let mut s = state();
        let cfg = EnvConfig::default();
        let r = step_turn(&mut s, &toks("CALL supervisor password pay ; LOGIN pay _ <eos>"), &cfg);
        assert!(!r.execution_error, "{}", render(&r.response_tokens));
        assert_eq!(r.command_count, 2);
        assert!(s.logged_in(App::Pay));
        let r = step_turn(&mut s, &toks("CALL pay send c1 9 <eos>"), &cfg);
        assert!(!r.execution_error);
        assert_eq!(s.transaction_log.len(), 1);
        assert_eq!(s.transaction_log[0].endpoint, "pay.send");
    }

    #[test]
    fn wrong_password_and_arity_and_unknown_entities() {
        let mut s = state();
        let cfg = EnvConfig::default();
        let pw = s.get(App::Supervisor, "password.mail").unwrap().as_str().unwrap().to_owned();
        let wrong = (1..=6).map(|i| format!("p{i}")).find(|p| *p != pw).unwrap();
        let r = step_turn(&mut s, &toks(&format!("LOGIN mail {wrong} <eos>")), &cfg);
        assert_eq!(r.error_code, Some(ErrorCode::Auth));
        step_turn(&mut s, &toks(&format!("LOGIN mail {pw} <eos>")), &cfg);
        let r = step_turn(&mut s, &toks("CALL mail read <eos>"), &cfg);
        assert_eq!(r.error_code, Some(ErrorCode::Arity));
        let r = step_turn(&mut s, &toks("CALL mail send c1 _ <eos>"), &cfg);
        assert_eq!(r.error_code, Some(ErrorCode::Noent), "unbound `_`");
        let r = step_turn(&mut s, &toks("CALL mail total c1 <eos>"), &cfg);
        assert_eq!(r.error_code, Some(ErrorCode::Nofn));
    }

    #[test]
    fn failure_aborts_rest_of_turn_without_mutation() {
        let mut s = state();
        let cfg = EnvConfig::default();
        step_turn(&mut s, &toks("CALL supervisor password pay ; LOGIN pay _ <eos>"), &cfg);
        let before = s.clone();
        let r = step_turn(&mut s, &toks("CALL pay send c1 0 ; CALL pay send c1 3 <eos>"), &cfg);
        assert_eq!(r.error_code, Some(ErrorCode::Noent));
        assert_eq!(r.endpoints_attempted.len(), 1);
        assert_eq!(s, before);
    }

    #[test]
    fn long_bodies_are_truncated_with_marker() {
        let mut s = state();
        let cfg = EnvConfig { truncation_limit: 3 };
        step_turn(&mut s, &toks("CALL supervisor password mail ; LOGIN mail _ <eos>"), &cfg);
        let r = step_turn(&mut s, &toks("CALL mail inbox <eos>"), &cfg);
        assert_eq!(r.response_tokens.len(), 4);
        assert_eq!(*r.response_tokens.last().unwrap(), vocab::TRUNCATED);
    }

    #[test]
    fn episode_echoes_instruction_and_enforces_turn_limit() {
        let task = generate_tasks(Family::Relay, 1, 7).unwrap().remove(0);
        let mut ep = Episode::new(&task, 2, EnvConfig::default());
        let r = ep.step(&toks("DOCS mail <eos>"));
        assert!(r.response_tokens.ends_with(&task.context()));
        assert!(!r.done);
        let r = ep.step(&toks("DOCS mail <eos>"));
        assert!(r.done && ep.limit_reached());
    }
}
