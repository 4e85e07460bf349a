//! Backend that answers from a recorded call log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{BackendKind, BackendReply, CallKey, CallRecord, CompletionBackend, CompletionRequest, LlmError};
use crate::seed::sha256_hex;

/// First point where a log stops agreeing with itself or with a re-execution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    /// Index in the `(channel, seq)`-ordered log.
    pub index: usize,
    pub channel: String,
    pub seq: u64,
    pub reason: String,
}

impl std::fmt::Display for Divergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "divergence at call {} ({}#{}): {}",
            self.index, self.channel, self.seq, self.reason
        )
    }
}

/// Checks that every recorded response still matches its digest.
pub fn verify_log(records: &[CallRecord]) -> Result<(), Divergence> {
    for (index, r) in records.iter().enumerate() {
        if sha256_hex(r.response.as_bytes()) != r.response_sha256 {
            return Err(Divergence {
                index,
                channel: r.channel.clone(),
                seq: r.seq,
                reason: "response does not match its recorded digest".into(),
            });
        }
    }
    Ok(())
}

#[derive(Debug)]
pub struct ReplayBackend {
    calls: BTreeMap<CallKey, (usize, CallRecord)>,
}

impl ReplayBackend {
    pub fn new(records: Vec<CallRecord>) -> Self {
        Self {
            calls: records
                .into_iter()
                .enumerate()
                .map(|(i, r)| {
                    (
                        CallKey {
                            channel: r.channel.clone(),
                            seq: r.seq,
                        },
                        (i, r),
                    )
                })
                .collect(),
        }
    }
}

impl CompletionBackend for ReplayBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Replay
    }

    fn complete(&self, req: &CompletionRequest, key: &CallKey) -> Result<BackendReply, LlmError> {
        let (index, rec) = self.calls.get(key).ok_or_else(|| LlmError::NotRecorded {
            channel: key.channel.clone(),
            seq: key.seq,
        })?;
        let diverged = |reason: &str| LlmError::Diverged {
            index: *index,
            channel: key.channel.clone(),
            seq: key.seq,
            reason: reason.into(),
        };
        if rec.role != req.role {
            return Err(diverged("role differs from the recording"));
        }
        if rec.prompt_sha256 != sha256_hex(req.prompt.as_bytes()) {
            return Err(diverged("prompt differs from the recording"));
        }
        Ok(BackendReply {
            text: rec.response.clone(),
            usage: Some(rec.usage),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{Gateway, PriceTable, Role, Script, ScriptEntry, ScriptedBackend};

    fn recorded() -> Vec<CallRecord> {
        let g = Gateway::new(
            Box::new(ScriptedBackend::new(Script {
                entries: vec![ScriptEntry {
                    role: None,
                    contains: String::new(),
                    channel: None,
                    responses: vec!["r0".into(), "r1".into(), "r2".into()],
                }],
            })),
            PriceTable::default(),
        );
        for i in 0..3 {
            g.ask(Role::Coder, "c", format!("p{i}")).unwrap();
        }
        g.records()
    }

    #[test]
    fn replays_identically_without_live_calls() {
        let recs = recorded();
        let g = Gateway::new(Box::new(ReplayBackend::new(recs.clone())), PriceTable::default());
        for i in 0..3 {
            assert_eq!(g.ask(Role::Coder, "c", format!("p{i}")).unwrap(), format!("r{i}"));
        }
        assert_eq!(g.live_calls(), 0);
        assert_eq!(g.records(), recs);
    }

    #[test]
    fn edited_response_is_located() {
        let mut recs = recorded();
        assert!(verify_log(&recs).is_ok());
        recs[1].response = "tampered".into();
        let d = verify_log(&recs).unwrap_err();
        assert_eq!(d.index, 1);
        assert!(d.to_string().starts_with("divergence at call 1"));
    }

    #[test]
    fn changed_prompt_diverges() {
        let g = Gateway::new(Box::new(ReplayBackend::new(recorded())), PriceTable::default());
        let e = g.ask(Role::Coder, "c", "different".into()).unwrap_err();
        assert!(e.to_string().contains("divergence at call 0"));
    }
}
