//! Host side of code execution: guest sessions, cell streaming, budgets and
//! monitor-driven interruption.

mod budget;
pub mod fake_guest;
mod limits;
mod monitor;
pub mod protocol;
mod session;

pub use budget::{enforce_budgets, secs, Budget, BudgetCheck, BudgetUsage, RunClock};
pub use limits::ResourceLimits;
pub use monitor::{Monitor, MonitorContext, ScriptedMonitor};
pub use session::{
    open_session, Dialect, ExecStatus, ExecutionOutcome, GuestSpec, Mount, Session, SessionConfig,
    SessionState, Transcript, TranscriptEntry, DEFAULT_CAPTURE_LIMIT, DEFAULT_GRACE,
    DEFAULT_HANDSHAKE_TIMEOUT, DEFAULT_POLL_INTERVAL,
};
pub use crate::llm::parse::{MonitorAction, MonitorDecision};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("input mount absent: {0}")]
    MissingMount(String),
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
    #[error("could not launch guest {program}: {source}")]
    Spawn {
        program: String,
        #[source]
        source: std::io::Error,
    },
    #[error("guest handshake failed: {0}")]
    Handshake(String),
    #[error("session is {0:?}, not open")]
    NotOpen(SessionState),
    #[error("step limit of {0} reached")]
    StepLimit(u32),
    #[error("budget exhausted: {0:?}")]
    BudgetExhausted(BudgetCheck),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
