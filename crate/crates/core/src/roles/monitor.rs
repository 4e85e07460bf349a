//! A model-backed cell monitor. Any failure to get or parse a decision lets
//! the cell continue, so monitoring can never be what breaks a run.

use crate::llm::parse::{parse_monitor_action, MonitorAction, MonitorDecision};
use crate::llm::templates::MONITOR;
use crate::llm::{Gateway, Role};
use crate::sandbox::{Monitor, MonitorContext};
use crate::text::truncate_middle;

use super::PROMPT_OUTPUT_LIMIT;

pub struct LlmMonitor<'a> {
    gateway: &'a Gateway,
    channel: String,
}

impl<'a> LlmMonitor<'a> {
    pub fn new(gateway: &'a Gateway, channel: impl Into<String>) -> Self {
        Self {
            gateway,
            channel: channel.into(),
        }
    }
}

fn fail_open(why: String) -> MonitorDecision {
    tracing::warn!("monitor: {why}; continuing");
    MonitorDecision {
        action: MonitorAction::Continue,
        explanation: why,
    }
}

impl Monitor for LlmMonitor<'_> {
    fn decide(&self, ctx: &MonitorContext) -> MonitorDecision {
        let (output, _) = truncate_middle(&ctx.output, PROMPT_OUTPUT_LIMIT);
        let secs = |d: std::time::Duration| format!("{}s", d.as_secs());
        let prompt = MONITOR.fill(&[
            ("code", &ctx.code),
            ("goal", &ctx.goal),
            ("elapsed", &secs(ctx.elapsed)),
            ("max_runtime", &secs(ctx.elapsed + ctx.remaining)),
            ("remaining", &secs(ctx.remaining)),
            ("output", &output),
        ]);
        let reply = match prompt.map(|p| self.gateway.ask(Role::Monitor, &self.channel, p)) {
            Ok(Ok(r)) => r,
            Ok(Err(e)) | Err(e) => return fail_open(e.to_string()),
        };
        parse_monitor_action(&reply).unwrap_or_else(|e| fail_open(e.to_string()))
    }
}
