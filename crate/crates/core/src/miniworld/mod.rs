//! MiniWorld: a small, deterministic, stateful multi-app environment.
//!
//! Four apps (`supervisor`, `mail`, `pay`, `notes`) expose nine functions
//! through a positional command language. Non-supervisor apps require a
//! `LOGIN` with the password held by the supervisor; successful reads bind
//! their result to `_`, and state-changing calls are appended to a
//! transaction log. Rewards are the fraction of a task's unit tests that pass.

pub mod apps;
pub mod exec;
pub mod generate;
pub mod lang;
pub mod plan;
pub mod state;
pub mod task;
pub mod vocab;

pub use apps::{App, Function};
pub use exec::{replay, reset, step_turn, EnvConfig, Episode, ErrorCode, TurnResult, TRUNCATION_LIMIT};
pub use generate::{by_split, generate_tasks, generate_tasks_with, read_tasks, split_counts, write_tasks, TaskRecord};
pub use plan::{solution_turns, Plan};
pub use state::{LoggedCall, Value, WorldState};
pub use task::{Family, Predicate, Split, Task, TestKind, UnitTest};
