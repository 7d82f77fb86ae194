//! The scripted demonstrator used to build the behaviour-cloning corpus.
//!
//! It follows the task's plan and reacts to environment responses. Noise
//! injects extra `DOCS` lookups, skipped logins (recovered after the `AUTH`
//! error by logging in, re-reading and retrying), malformed calls (retried
//! after the error) and forgetting the last call of a multi-call plan.

use std::collections::{HashSet, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::miniworld::plan::{call_turn, docs_turn, final_turn, login_turn, Step};
use crate::miniworld::{vocab, App, EnvConfig, ErrorCode, Function, Plan, Task, TurnResult};
use crate::policy::Token;
use crate::rollout::{run_scripted, Trajectory};
use crate::seed;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoNoise {
    /// Chance of a `DOCS` lookup before each call.
    pub docs_prob: f64,
    /// Chance of skipping each login.
    pub skip_login_prob: f64,
    /// Chance of a malformed first attempt at each call.
    pub typo_prob: f64,
    /// Chance of finishing before the last call when the plan has several.
    pub quit_early_prob: f64,
}

impl DemoNoise {
    pub const CLEAN: DemoNoise = DemoNoise { docs_prob: 0.0, skip_login_prob: 0.0, typo_prob: 0.0, quit_early_prob: 0.0 };

    pub fn scaled(&self, f: f64) -> DemoNoise {
        DemoNoise {
            docs_prob: (self.docs_prob * f).clamp(0.0, 1.0),
            skip_login_prob: (self.skip_login_prob * f).clamp(0.0, 1.0),
            typo_prob: (self.typo_prob * f).clamp(0.0, 1.0),
            quit_early_prob: (self.quit_early_prob * f).clamp(0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Intent {
    Login(App),
    Docs(App),
    /// Attempt plan step `i`; `typo` makes the attempt malformed.
    Call { step: usize, typo: bool },
    Final,
}

struct Demonstrator<'a> {
    plan: Plan,
    target: Token,
    noise: DemoNoise,
    rng: &'a mut ChaCha8Rng,
    next_login: usize,
    next_step: usize,
    docs_seen: HashSet<usize>,
    typo_seen: HashSet<usize>,
    queue: VecDeque<Intent>,
    last: Option<Intent>,
    quit_decided: bool,
}

impl<'a> Demonstrator<'a> {
    fn new(task: &Task, noise: DemoNoise, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            plan: Plan::for_task(task),
            target: task.target(),
            noise,
            rng,
            next_login: 0,
            next_step: 0,
            docs_seen: HashSet::new(),
            typo_seen: HashSet::new(),
            queue: VecDeque::new(),
            last: None,
            quit_decided: false,
        }
    }

    fn observe(&mut self, result: &TurnResult) {
        let Some(Intent::Call { step, .. }) = self.last else { return };
        if !result.execution_error {
            if step == self.next_step {
                self.next_step += 1;
            }
            return;
        }
        let retry = Intent::Call { step, typo: false };
        if result.error_code == Some(ErrorCode::Auth) {
            let app = self.plan.steps[step].function.app();
            self.queue.push_back(Intent::Login(app));
            if step > 0 && self.plan.steps[step].function.arity() == 2 {
                self.queue.push_back(Intent::Call { step: 0, typo: false });
            }
        }
        self.queue.push_back(retry);
    }

    fn chance(&mut self, p: f64) -> bool {
        p > 0.0 && self.rng.gen::<f64>() < p
    }

    fn next_intent(&mut self) -> Intent {
        if let Some(i) = self.queue.pop_front() {
            return i;
        }
        while self.next_login < self.plan.logins.len() {
            let app = self.plan.logins[self.next_login];
            self.next_login += 1;
            if !self.chance(self.noise.skip_login_prob) {
                return Intent::Login(app);
            }
        }
        let n = self.plan.steps.len();
        if n >= 2 && self.next_step == n - 1 && !self.quit_decided {
            self.quit_decided = true;
            if self.chance(self.noise.quit_early_prob) {
                self.next_step = n;
            }
        }
        if self.next_step < n {
            let i = self.next_step;
            if self.docs_seen.insert(i) && self.chance(self.noise.docs_prob) {
                return Intent::Docs(self.plan.steps[i].function.app());
            }
            let typo = self.typo_seen.insert(i) && self.chance(self.noise.typo_prob);
            return Intent::Call { step: i, typo };
        }
        Intent::Final
    }

    fn render(&mut self, intent: Intent) -> Vec<Token> {
        match intent {
            Intent::Login(app) => login_turn(app),
            Intent::Docs(app) => docs_turn(app),
            Intent::Final => final_turn(self.plan.answers),
            Intent::Call { step, typo: false } => call_turn(self.plan.steps[step], self.target),
            Intent::Call { step, typo: true } => self.malformed(self.plan.steps[step]),
        }
    }

    /// A call that fails with `NOFN` or `ARITY` and changes nothing.
    fn malformed(&mut self, step: Step) -> Vec<Token> {
        let f = step.function;
        let mut turn = call_turn(step, self.target);
        if self.rng.gen::<bool>() {
            let wrong: Vec<Token> = Function::ALL
                .iter()
                .map(|g| g.token())
                .filter(|&t| Function::resolve(f.app(), t).is_none())
                .collect();
            turn[2] = wrong[self.rng.gen_range(0..wrong.len())];
        } else if f.arity() == 2 {
            turn.remove(turn.len() - 2);
        } else {
            turn.insert(turn.len() - 1, vocab::LAST);
        }
        turn
    }

    fn act(&mut self, last: Option<&TurnResult>) -> Vec<Token> {
        if let Some(r) = last {
            self.observe(r);
        }
        let intent = self.next_intent();
        self.last = Some(intent);
        self.render(intent)
    }
}

/// One demonstrator episode on `task`.
pub fn demonstrate(task: &Task, noise: DemoNoise, turn_limit: usize, seed_value: u64) -> Trajectory {
    let mut rng = seed::rng(seed_value);
    let mut demo = Demonstrator::new(task, noise, &mut rng);
    let mut t = run_scripted(task, turn_limit, EnvConfig::default(), |last| demo.act(last));
    t.seed = seed_value;
    t
}

/// `per_task` demonstrations of every task.
pub fn demo_corpus(tasks: &[Task], noise: DemoNoise, per_task: usize, turn_limit: usize, seed_value: u64) -> Vec<Trajectory> {
    let mut out = Vec::with_capacity(tasks.len() * per_task);
    for task in tasks {
        for r in 0..per_task {
            out.push(demonstrate(task, noise, turn_limit, seed::rollout_seed(seed_value, &task.task_id, r)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::miniworld::{generate_tasks, Family};

    #[test]
    fn clean_demonstrator_solves_every_task() {
        for family in Family::ALL {
            for task in generate_tasks(family, 4, 3).unwrap() {
                let t = demonstrate(&task, DemoNoise::CLEAN, task.max_turns_eval, 1);
                assert_eq!(t.ret, 1.0, "{}", task.task_id);
                assert!(!t.truncated);
                t.validate().unwrap();
            }
        }
    }

    #[test]
    fn noisy_demonstrator_recovers_given_room() {
        let noise = DemoNoise { docs_prob: 1.0, skip_login_prob: 1.0, typo_prob: 1.0, quit_early_prob: 0.0 };
        for task in generate_tasks(Family::Relay, 3, 5).unwrap() {
            let t = demonstrate(&task, noise, 40, 9);
            assert_eq!(t.ret, 1.0, "{}", task.task_id);
            assert!(t.turns.iter().any(|r| r.error_code == Some(ErrorCode::Auth)));
            assert!(t.turns.iter().any(|r| r.docs_calls > 0));
        }
    }
}
