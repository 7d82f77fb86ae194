//! The command micro-language.
//!
//! A turn is a token sequence terminated by `<eos>`; `;` separates commands.
//!
//! ```text
//! DOCS   app [fn]
//! LOGIN  app value
//! CALL   app fn value*
//! ANSWER value
//! DONE
//! ```
//!
//! The parser is purely structural: function names and entities are checked
//! at execution time so that the right error code is reported.

use super::apps::App;
use super::vocab;
use crate::policy::Token;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Docs { app: App, function: Option<Token> },
    Login { app: App, password: Token },
    Call { app: App, function: Token, args: Vec<Token> },
    Answer(Token),
    Done,
}

/// Splits a turn into raw command segments. Tokens after the first `<eos>`
/// are ignored.
pub fn split_turn(turn: &[Token]) -> Vec<&[Token]> {
    let end = turn.iter().position(|&t| t == vocab::EOS).unwrap_or(turn.len());
    turn[..end].split(|&t| t == vocab::SEP).collect()
}

/// Parses one command segment; `None` means a parse failure.
pub fn parse_command(seg: &[Token]) -> Option<Command> {
    let (&head, rest) = seg.split_first()?;
    let values = |ts: &[Token]| ts.iter().all(|&t| vocab::is_value(t));
    match head {
        vocab::DOCS => {
            let app = App::from_token(*rest.first()?)?;
            match rest.len() {
                1 => Some(Command::Docs { app, function: None }),
                2 => Some(Command::Docs { app, function: Some(rest[1]) }),
                _ => None,
            }
        }
        vocab::LOGIN => {
            if rest.len() != 2 || !values(&rest[1..]) {
                return None;
            }
            Some(Command::Login { app: App::from_token(rest[0])?, password: rest[1] })
        }
        vocab::CALL => {
            if rest.len() < 2 || !values(&rest[2..]) {
                return None;
            }
            Some(Command::Call {
                app: App::from_token(rest[0])?,
                function: rest[1],
                args: rest[2..].to_vec(),
            })
        }
        vocab::ANSWER => match rest {
            [v] if vocab::is_value(*v) => Some(Command::Answer(*v)),
            _ => None,
        },
        vocab::DONE if rest.is_empty() => Some(Command::Done),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<Token> {
        vocab::vocab().parse(s).unwrap()
    }

    #[test]
    fn splits_on_separator_and_stops_at_eos() {
        let t = toks("DONE ; DONE <eos> CALL");
        assert_eq!(split_turn(&t).len(), 2);
        assert_eq!(split_turn(&toks("<eos>")), vec![&[] as &[Token]]);
    }

    #[test]
    fn parses_each_form() {
        assert_eq!(
            parse_command(&toks("DOCS pay")),
            Some(Command::Docs { app: App::Pay, function: None })
        );
        assert!(matches!(parse_command(&toks("LOGIN mail p3")), Some(Command::Login { .. })));
        assert!(matches!(parse_command(&toks("CALL pay send c1 5")), Some(Command::Call { .. })));
        assert_eq!(parse_command(&toks("ANSWER _")), Some(Command::Answer(vocab::LAST)));
        assert_eq!(parse_command(&toks("DONE")), Some(Command::Done));
    }

    #[test]
    fn rejects_malformed_commands() {
        for bad in ["", "OK", "DONE 5", "LOGIN mail", "CALL c1 send", "CALL pay", "ANSWER OK", "DOCS c1"] {
            assert_eq!(parse_command(&toks(bad)), None, "{bad}");
        }
    }
}
