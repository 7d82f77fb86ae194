//! Random command generators and replay checks over MiniWorld.

use leaveout::miniworld::vocab;
use leaveout::miniworld::{generate_tasks, replay, solution_turns, step_turn, App, EnvConfig, Episode, Family, Function, Task};
use leaveout::policy::Token;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

macro_rules! ensure_eq {
    ($a:expr, $b:expr) => {
        if $a != $b {
            return Err(format!("{} != {} at line {}: {:?} vs {:?}", stringify!($a), stringify!($b), line!(), $a, $b));
        }
    };
}

pub fn random_segment(rng: &mut ChaCha8Rng) -> Vec<Token> {
    let app = || App::ALL.map(App::token);
    let value = |rng: &mut ChaCha8Rng| match rng.gen_range(0..4) {
        0 => vocab::contact(rng.gen_range(0..vocab::CONTACT_COUNT)),
        1 => vocab::digit(rng.gen_range(0..10)),
        2 => vocab::LAST,
        _ => vocab::password(rng.gen_range(0..vocab::PASSWORD_COUNT)),
    };
    match rng.gen_range(0..10) {
        0 => vec![vocab::DOCS, app()[rng.gen_range(0..4)]],
        1 => vec![vocab::LOGIN, app()[rng.gen_range(0..4)], value(rng)],
        2..=6 => {
            let f = Function::ALL[rng.gen_range(0..Function::ALL.len())];
            let mut seg = vec![vocab::CALL, f.app().token(), f.token()];
            for _ in 0..rng.gen_range(0..=2) {
                seg.push(value(rng));
            }
            seg
        }
        7 => vec![vocab::ANSWER, value(rng)],
        8 => vec![vocab::DONE],
        _ => (0..rng.gen_range(0..4)).map(|_| rng.gen_range(1..vocab::SYMBOLS.len())).collect(),
    }
}

/// A turn that is either a scripted solution turn or random commands.
pub fn random_turn(task: &Task, rng: &mut ChaCha8Rng) -> Vec<Token> {
    if rng.gen_bool(0.4) {
        let sol = solution_turns(task);
        return sol[rng.gen_range(0..sol.len())].clone();
    }
    let mut turn = Vec::new();
    for i in 0..rng.gen_range(1..=3) {
        if i > 0 {
            turn.push(vocab::SEP);
        }
        turn.extend(random_segment(rng));
    }
    turn.push(vocab::EOS);
    turn
}

pub fn check_replay(seed: u64) -> Result<(), String> {
    let mut rng = super::rng(seed);
    let family = Family::ALL[rng.gen_range(0..3)];
    let task = generate_tasks(family, 1, seed).unwrap().swap_remove(rng.gen_range(0..3));
    let cfg = EnvConfig::default();
    let turns: Vec<Vec<Token>> = (0..rng.gen_range(1..8)).map(|_| random_turn(&task, &mut rng)).collect();

    let mut ep = Episode::new(&task, usize::MAX, cfg);
    let mut executed = Vec::new();
    let mut results = Vec::new();
    for t in &turns {
        if ep.finished() {
            break;
        }
        results.push(ep.step(t));
        executed.push(t.clone());
        let (replayed, last) = replay(&task, &executed, &cfg);
        ensure_eq!(&replayed, &ep.state);
        ensure_eq!(last.as_ref(), results.last());
    }
    let (state, _) = replay(&task, &turns, &cfg);
    ensure_eq!(&state, &ep.state);

    let mut again = Episode::new(&task, usize::MAX, cfg);
    for (t, r) in executed.iter().zip(&results) {
        ensure_eq!(&again.step(t), r);
    }
    ensure_eq!(again.reward(), ep.reward());
    Ok(())
}

pub fn check_fail_fast(seed: u64) -> Result<(), String> {
    let mut rng = super::rng(seed);
    let task = generate_tasks(Family::ALL[rng.gen_range(0..3)], 1, seed).unwrap().remove(0);
    let cfg = EnvConfig::default();
    let mut state = task.initial_state.clone();
    for _ in 0..6 {
        let turn = random_turn(&task, &mut rng);
        let whole = step_turn(&mut state.clone(), &turn, &cfg);
        // Execute command by command; the first failure must leave the state
        // untouched and end the turn.
        let mut piecewise = state.clone();
        let body = &turn[..turn.len() - 1];
        let mut failed = false;
        for seg in body.split(|&t| t == vocab::SEP) {
            let before = piecewise.clone();
            let mut single = seg.to_vec();
            single.push(vocab::EOS);
            let r = step_turn(&mut piecewise, &single, &cfg);
            if r.execution_error {
                ensure_eq!(&piecewise, &before);
                ensure_eq!(r.error_code, whole.error_code);
                failed = true;
                break;
            }
            if r.done {
                break;
            }
        }
        ensure_eq!(failed, whole.execution_error);
        let mut applied = state.clone();
        step_turn(&mut applied, &turn, &cfg);
        ensure_eq!(&applied, &piecewise);
        state = applied;
    }
    Ok(())
}

