//! The MiniWorld token alphabet.

use std::sync::{Arc, OnceLock};

use crate::policy::{Token, Vocab};

pub const SYMBOLS: [&str; 58] = [
    "<eos>", ";", "<task>", "~", "_", //
    "DOCS", "LOGIN", "CALL", "ANSWER", "DONE", //
    "supervisor", "mail", "pay", "notes", //
    "password", "inbox", "read", "send", "balance", "total", "write", //
    "c1", "c2", "c3", "c4", "c5", "c6", "c7", "c8", //
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", //
    "p1", "p2", "p3", "p4", "p5", "p6", //
    "OK", "ERR", //
    "PARSE", "AUTH", "NOFN", "ARITY", "NOENT", //
    "relay", "aggregate", "note", //
    "L1", "L2", "L3",
];

pub const EOS: Token = 0;
pub const SEP: Token = 1;
pub const PREAMBLE: Token = 2;
pub const TRUNCATED: Token = 3;
pub const LAST: Token = 4;
pub const DOCS: Token = 5;
pub const LOGIN: Token = 6;
pub const CALL: Token = 7;
pub const ANSWER: Token = 8;
pub const DONE: Token = 9;
pub const APP_BASE: Token = 10;
pub const FN_BASE: Token = 14;
pub const FN_COUNT: usize = 7;
pub const CONTACT_BASE: Token = 21;
pub const CONTACT_COUNT: usize = 8;
pub const DIGIT_BASE: Token = 29;
pub const PASSWORD_BASE: Token = 39;
pub const PASSWORD_COUNT: usize = 6;
pub const OK: Token = 45;
pub const ERR: Token = 46;
pub const CODE_BASE: Token = 47;
pub const VERB_BASE: Token = 52;
pub const LEVEL_BASE: Token = 55;

pub fn vocab() -> Arc<Vocab> {
    static VOCAB: OnceLock<Arc<Vocab>> = OnceLock::new();
    VOCAB
        .get_or_init(|| {
            let symbols = SYMBOLS.iter().map(|s| s.to_string()).collect();
            Arc::new(Vocab::new(symbols, EOS, SEP).expect("static vocabulary is valid"))
        })
        .clone()
}

pub fn symbol(t: Token) -> &'static str {
    SYMBOLS.get(t).copied().unwrap_or("<?>")
}

pub fn is_app(t: Token) -> bool {
    (APP_BASE..APP_BASE + 4).contains(&t)
}

pub fn is_contact(t: Token) -> bool {
    (CONTACT_BASE..CONTACT_BASE + CONTACT_COUNT).contains(&t)
}

pub fn is_digit(t: Token) -> bool {
    (DIGIT_BASE..DIGIT_BASE + 10).contains(&t)
}

pub fn is_password(t: Token) -> bool {
    (PASSWORD_BASE..PASSWORD_BASE + PASSWORD_COUNT).contains(&t)
}

/// Tokens that may appear in argument position.
pub fn is_value(t: Token) -> bool {
    t == LAST || is_app(t) || is_contact(t) || is_digit(t) || is_password(t)
}

pub fn contact(i: usize) -> Token {
    assert!(i < CONTACT_COUNT);
    CONTACT_BASE + i
}

pub fn digit(d: u32) -> Token {
    assert!(d < 10);
    DIGIT_BASE + d as usize
}

pub fn password(i: usize) -> Token {
    assert!(i < PASSWORD_COUNT);
    PASSWORD_BASE + i
}
