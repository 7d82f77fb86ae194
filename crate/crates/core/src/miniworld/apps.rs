//! Apps, their functions, and the documentation table.

use std::sync::OnceLock;

use serde::Deserialize;

use super::vocab;
use crate::policy::Token;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum App {
    Supervisor,
    Mail,
    Pay,
    Notes,
}

impl App {
    pub const ALL: [App; 4] = [App::Supervisor, App::Mail, App::Pay, App::Notes];

    pub fn name(self) -> &'static str {
        match self {
            App::Supervisor => "supervisor",
            App::Mail => "mail",
            App::Pay => "pay",
            App::Notes => "notes",
        }
    }

    pub fn token(self) -> Token {
        vocab::APP_BASE + self as usize
    }

    pub fn from_token(t: Token) -> Option<Self> {
        Self::ALL.iter().copied().find(|a| a.token() == t)
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|a| a.name() == name)
    }

    pub fn functions(self) -> impl Iterator<Item = Function> {
        Function::ALL.into_iter().filter(move |f| f.app() == self)
    }
}

/// The nine MiniWorld API functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Function {
    SupervisorPassword,
    MailInbox,
    MailRead,
    MailSend,
    PayBalance,
    PaySend,
    PayTotal,
    NotesRead,
    NotesWrite,
}

impl Function {
    pub const ALL: [Function; 9] = [
        Function::SupervisorPassword,
        Function::MailInbox,
        Function::MailRead,
        Function::MailSend,
        Function::PayBalance,
        Function::PaySend,
        Function::PayTotal,
        Function::NotesRead,
        Function::NotesWrite,
    ];

    pub fn app(self) -> App {
        use Function::*;
        match self {
            SupervisorPassword => App::Supervisor,
            MailInbox | MailRead | MailSend => App::Mail,
            PayBalance | PaySend | PayTotal => App::Pay,
            NotesRead | NotesWrite => App::Notes,
        }
    }

    pub fn name(self) -> &'static str {
        use Function::*;
        match self {
            SupervisorPassword => "password",
            MailInbox => "inbox",
            MailRead | NotesRead => "read",
            MailSend | PaySend => "send",
            PayBalance => "balance",
            PayTotal => "total",
            NotesWrite => "write",
        }
    }

    pub fn token(self) -> Token {
        vocab::vocab().lookup(self.name()).expect("function names are in the vocabulary")
    }

    pub fn endpoint(self) -> String {
        format!("{}.{}", self.app().name(), self.name())
    }

    pub fn arity(self) -> usize {
        use Function::*;
        match self {
            MailInbox | PayBalance => 0,
            SupervisorPassword | MailRead | PayTotal | NotesRead => 1,
            MailSend | PaySend | NotesWrite => 2,
        }
    }

    pub fn mutating(self) -> bool {
        matches!(self, Function::MailSend | Function::PaySend | Function::NotesWrite)
    }

    pub fn resolve(app: App, name: Token) -> Option<Self> {
        app.functions().find(|f| f.token() == name)
    }
}

#[derive(Debug, Deserialize)]
pub struct DocsTable {
    pub version: u32,
    pub apps: Vec<AppDocs>,
}

#[derive(Debug, Deserialize)]
pub struct AppDocs {
    pub app: String,
    pub functions: Vec<FunctionDocs>,
}

#[derive(Debug, Deserialize)]
pub struct FunctionDocs {
    pub name: String,
    pub args: Vec<String>,
    pub mutating: bool,
    pub returns: String,
}

pub const DOCS_JSON: &str = include_str!("../../data/docs_v1.json");

pub fn docs() -> &'static DocsTable {
    static TABLE: OnceLock<DocsTable> = OnceLock::new();
    TABLE.get_or_init(|| serde_json::from_str(DOCS_JSON).expect("bundled docs table parses"))
}

impl DocsTable {
    pub fn app(&self, app: App) -> Option<&AppDocs> {
        self.apps.iter().find(|a| a.app == app.name())
    }
}
