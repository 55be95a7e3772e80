use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, GenerationRequest};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub prompt: String,
    pub response: String,
}

/// Prompt-to-response table for [`MockBackend`].
///
/// On disk this is a JSON object:
/// `{"responses": [{"prompt": "...", "response": "..."}], "default": null}`.
/// Without a `default` the mock is strict and fails unscripted prompts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub responses: Vec<ScriptEntry>,
    #[serde(default)]
    pub default: Option<String>,
}

impl MockScript {
    pub fn from_pairs<P: Into<String>, R: Into<String>>(pairs: impl IntoIterator<Item = (P, R)>) -> Self {
        MockScript {
            responses: pairs.into_iter().map(|(p, r)| ScriptEntry { prompt: p.into(), response: r.into() }).collect(),
            default: None,
        }
    }

    pub fn with_default(mut self, default: impl Into<String>) -> Self {
        self.default = Some(default.into());
        self
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

/// Deterministic backend answering from a [`MockScript`]. Its cache
/// timestamps are always zero so runs are byte-reproducible.
#[derive(Debug)]
pub struct MockBackend {
    table: BTreeMap<String, String>,
    default: Option<String>,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        let mut table = BTreeMap::new();
        for entry in script.responses {
            // first entry wins on duplicate prompts
            table.entry(entry.prompt).or_insert(entry.response);
        }
        MockBackend { table, default: script.default, calls: AtomicUsize::new(0) }
    }

    /// Number of `complete` invocations so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.table
            .get(&request.prompt)
            .or(self.default.as_ref())
            .cloned()
            .ok_or_else(|| BackendError::NoScriptedResponse { request_id: request.request_id.clone() })
    }

    fn timestamp(&self) -> u64 {
        0
    }
}
