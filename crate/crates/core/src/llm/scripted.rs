//! Deterministic backend answering from an ordered script.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendKind, BackendReply, CallKey, CompletionBackend, CompletionRequest, LlmError, Role};

/// A matcher plus its canned responses. The last response repeats once the
/// list is used up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default)]
    pub role: Option<Role>,
    /// Substring the prompt must contain.
    #[serde(default)]
    pub contains: String,
    /// Substring the request channel must contain.
    #[serde(default)]
    pub channel: Option<String>,
    pub responses: Vec<String>,
}

impl ScriptEntry {
    fn matches(&self, req: &CompletionRequest) -> bool {
        self.role.is_none_or(|r| r == req.role)
            && self
                .channel
                .as_deref()
                .is_none_or(|c| req.channel.contains(c))
            && req.prompt.contains(&self.contains)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    pub entries: Vec<ScriptEntry>,
}

impl Script {
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|source| LlmError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| LlmError::Config(format!("script {}: {e}", path.display())))
    }
}

/// Every request must match exactly one entry. Cursors advance per
/// `(entry, channel)` so concurrent callers see the same sequence of
/// responses regardless of scheduling.
#[derive(Debug)]
pub struct ScriptedBackend {
    script: Script,
    cursors: Mutex<BTreeMap<(usize, String), usize>>,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        Self {
            script,
            cursors: Mutex::new(BTreeMap::new()),
        }
    }
}

fn head(prompt: &str) -> String {
    prompt.chars().take(120).collect()
}

impl CompletionBackend for ScriptedBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Scripted
    }

    fn complete(&self, req: &CompletionRequest, _key: &CallKey) -> Result<BackendReply, LlmError> {
        let hits: Vec<usize> = self
            .script
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.matches(req))
            .map(|(i, _)| i)
            .collect();
        let entry = match hits.as_slice() {
            [] => {
                return Err(LlmError::NoMatch {
                    role: req.role,
                    channel: req.channel.clone(),
                    head: head(&req.prompt),
                })
            }
            [one] => *one,
            _ => {
                return Err(LlmError::AmbiguousMatch {
                    role: req.role,
                    count: hits.len(),
                    entries: hits,
                    head: head(&req.prompt),
                })
            }
        };
        let responses = &self.script.entries[entry].responses;
        if responses.is_empty() {
            return Err(LlmError::Exhausted {
                entry,
                channel: req.channel.clone(),
            });
        }
        let mut cursors = self.cursors.lock().expect("cursor table poisoned");
        let c = cursors.entry((entry, req.channel.clone())).or_insert(0);
        let text = responses[(*c).min(responses.len() - 1)].clone();
        *c += 1;
        Ok(BackendReply { text, usage: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(role: Role, contains: &str, responses: &[&str]) -> ScriptEntry {
        ScriptEntry {
            role: Some(role),
            contains: contains.into(),
            channel: None,
            responses: responses.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn call(b: &ScriptedBackend, role: Role, ch: &str, prompt: &str) -> Result<String, LlmError> {
        let key = CallKey {
            channel: ch.into(),
            seq: 0,
        };
        b.complete(&CompletionRequest::new(role, ch, prompt), &key).map(|r| r.text)
    }

    #[test]
    fn cursor_advances_per_channel_and_repeats_last() {
        let b = ScriptedBackend::new(Script {
            entries: vec![entry(Role::Coder, "cell", &["one", "two"])],
        });
        assert_eq!(call(&b, Role::Coder, "x", "cell").unwrap(), "one");
        assert_eq!(call(&b, Role::Coder, "y", "cell").unwrap(), "one");
        assert_eq!(call(&b, Role::Coder, "x", "cell").unwrap(), "two");
        assert_eq!(call(&b, Role::Coder, "x", "cell").unwrap(), "two");
    }

    #[test]
    fn unmatched_and_ambiguous_fail_loudly() {
        let b = ScriptedBackend::new(Script {
            entries: vec![
                entry(Role::Proposer, "ideas", &["a"]),
                entry(Role::Proposer, "list", &["b"]),
            ],
        });
        let e = call(&b, Role::Analyzer, "c", "something else").unwrap_err();
        assert!(e.to_string().contains("something else"));
        assert!(matches!(
            call(&b, Role::Proposer, "c", "list ideas"),
            Err(LlmError::AmbiguousMatch { count: 2, .. })
        ));
        assert_eq!(call(&b, Role::Proposer, "c", "ideas").unwrap(), "a");
    }

    #[test]
    fn same_request_same_bytes() {
        let mk = || {
            ScriptedBackend::new(Script {
                entries: vec![entry(Role::Proposer, "", &["['idea 1', 'idea 2']"])],
            })
        };
        assert_eq!(
            call(&mk(), Role::Proposer, "c", "p").unwrap(),
            call(&mk(), Role::Proposer, "c", "p").unwrap()
        );
    }
}
