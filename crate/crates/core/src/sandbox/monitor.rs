//! Host-side watchers for in-flight cells.

use std::sync::Mutex;
use std::time::Duration;

use crate::llm::parse::{MonitorAction, MonitorDecision};

/// What a monitor sees at each poll.
#[derive(Clone, Debug)]
pub struct MonitorContext {
    pub code: String,
    pub goal: String,
    pub elapsed: Duration,
    pub remaining: Duration,
    pub output: String,
}

/// Decides whether an in-flight cell should keep running. Called from a
/// helper thread, never from the thread draining guest output.
pub trait Monitor: Send + Sync {
    fn decide(&self, ctx: &MonitorContext) -> MonitorDecision;
}

impl<F> Monitor for F
where
    F: Fn(&MonitorContext) -> MonitorDecision + Send + Sync,
{
    fn decide(&self, ctx: &MonitorContext) -> MonitorDecision {
        self(ctx)
    }
}

/// Replays a fixed list of decisions; the last one repeats. An empty list
/// always continues.
#[derive(Debug, Default)]
pub struct ScriptedMonitor {
    actions: Vec<MonitorAction>,
    cursor: Mutex<usize>,
}

impl ScriptedMonitor {
    pub fn new(actions: Vec<MonitorAction>) -> Self {
        Self {
            actions,
            cursor: Mutex::new(0),
        }
    }

    pub fn polls(&self) -> usize {
        *self.cursor.lock().expect("monitor lock")
    }
}

impl Monitor for ScriptedMonitor {
    fn decide(&self, _ctx: &MonitorContext) -> MonitorDecision {
        let mut c = self.cursor.lock().expect("monitor lock");
        let action = self
            .actions
            .get(*c)
            .or(self.actions.last())
            .copied()
            .unwrap_or(MonitorAction::Continue);
        *c += 1;
        MonitorDecision {
            action,
            explanation: format!("scripted decision {}", *c),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_decision_repeats() {
        let m = ScriptedMonitor::new(vec![MonitorAction::Continue, MonitorAction::Stop]);
        let ctx = MonitorContext {
            code: String::new(),
            goal: String::new(),
            elapsed: Duration::ZERO,
            remaining: Duration::ZERO,
            output: String::new(),
        };
        let got: Vec<_> = (0..3).map(|_| m.decide(&ctx).action).collect();
        assert_eq!(got, [MonitorAction::Continue, MonitorAction::Stop, MonitorAction::Stop]);
        assert_eq!(m.polls(), 3);
    }
}
