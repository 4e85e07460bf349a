use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    BackendKind, CallKey, CompletionBackend, CompletionRequest, CompletionResponse, LlmError,
    PriceTable, Role, TokenUsage,
};
use crate::seed::sha256_hex;

/// One logged completion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub channel: String,
    pub seq: u64,
    pub role: Role,
    pub prompt_sha256: String,
    pub response: String,
    pub response_sha256: String,
    pub usage: TokenUsage,
}

/// Thread-safe front door to a completion backend. Accumulates usage and
/// keeps a log of every call keyed by `(channel, seq)`.
pub struct Gateway {
    backend: Box<dyn CompletionBackend>,
    prices: PriceTable,
    usage: Mutex<TokenUsage>,
    seqs: Mutex<BTreeMap<String, u64>>,
    log: Mutex<Vec<CallRecord>>,
    live_calls: AtomicU64,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.kind())
            .field("usage", &self.usage())
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: Box<dyn CompletionBackend>, prices: PriceTable) -> Self {
        Self {
            backend,
            prices,
            usage: Mutex::new(TokenUsage::default()),
            seqs: Mutex::new(BTreeMap::new()),
            log: Mutex::new(Vec::new()),
            live_calls: AtomicU64::new(0),
        }
    }

    pub fn backend_kind(&self) -> BackendKind {
        self.backend.kind()
    }

    pub fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        if req.prompt.trim().is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        let key = {
            let mut seqs = self.seqs.lock().expect("seq table poisoned");
            let next = seqs.entry(req.channel.clone()).or_insert(0);
            let key = CallKey {
                channel: req.channel.clone(),
                seq: *next,
            };
            *next += 1;
            key
        };
        if self.backend.kind() == BackendKind::Live {
            self.live_calls.fetch_add(1, Ordering::SeqCst);
        }
        let reply = self.backend.complete(req, &key)?;
        let mut usage = reply
            .usage
            .unwrap_or_else(|| TokenUsage::estimate(&req.prompt, &reply.text));
        usage.cost = self.prices.cost(&usage);
        *self.usage.lock().expect("usage poisoned") += usage;
        self.log.lock().expect("log poisoned").push(CallRecord {
            channel: key.channel,
            seq: key.seq,
            role: req.role,
            prompt_sha256: sha256_hex(req.prompt.as_bytes()),
            response_sha256: sha256_hex(reply.text.as_bytes()),
            response: reply.text.clone(),
            usage,
        });
        Ok(CompletionResponse {
            text: reply.text,
            usage,
            backend: self.backend.kind(),
        })
    }

    /// Convenience wrapper building the request.
    pub fn ask(&self, role: Role, channel: &str, prompt: String) -> Result<String, LlmError> {
        Ok(self.complete(&CompletionRequest::new(role, channel, prompt))?.text)
    }

    pub fn usage(&self) -> TokenUsage {
        *self.usage.lock().expect("usage poisoned")
    }

    /// Number of calls sent to a live endpoint.
    pub fn live_calls(&self) -> u64 {
        self.live_calls.load(Ordering::SeqCst)
    }

    /// Call log ordered by `(channel, seq)`, independent of thread timing.
    pub fn records(&self) -> Vec<CallRecord> {
        let mut v = self.log.lock().expect("log poisoned").clone();
        v.sort_by(|a, b| (&a.channel, a.seq).cmp(&(&b.channel, b.seq)));
        v
    }

    pub fn write_log(&self, path: &Path) -> Result<(), LlmError> {
        let io = |source| LlmError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = fs::File::create(path).map_err(io)?;
        for r in self.records() {
            let line = serde_json::to_string(&r).expect("record serializes");
            writeln!(f, "{line}").map_err(io)?;
        }
        Ok(())
    }

    pub fn read_log(path: &Path) -> Result<Vec<CallRecord>, LlmError> {
        let text = fs::read_to_string(path).map_err(|source| LlmError::Io {
            path: path.display().to_string(),
            source,
        })?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| LlmError::Config(format!("{} line {}: {e}", path.display(), i + 1)))
            })
            .collect()
    }
}
