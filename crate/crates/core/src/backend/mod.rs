//! Text generation backends.
//!
//! [`Backend`] is the raw contract; [`Generator`] wraps a backend with the
//! persistent [`ResponseCache`] and a bounded worker pool. Cache records are
//! committed in request order, so a deterministic backend yields a
//! byte-identical cache regardless of thread scheduling.

mod cache;
mod http;
mod mock;

pub use cache::{CacheError, CacheRecord, ResponseCache};
pub use http::{HttpBackend, HttpConfig};
pub use mock::{MockBackend, MockScript};

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_MAX_NEW_TOKENS: u32 = 64;
pub const DEFAULT_PARALLELISM: usize = 4;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum Decoding {
    #[default]
    Greedy,
}

/// Pipeline stage a request belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Generation,
    Disambiguation,
    Probe,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Generation => "generation",
            Stage::Disambiguation => "disambiguation",
            Stage::Probe => "probe",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_new_tokens: u32,
    pub decoding: Decoding,
    pub request_id: String,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self::with_params(prompt, DEFAULT_MAX_NEW_TOKENS, Decoding::Greedy)
    }

    pub fn with_params(prompt: impl Into<String>, max_new_tokens: u32, decoding: Decoding) -> Self {
        let prompt = prompt.into();
        let request_id = request_id(&prompt, max_new_tokens, &decoding);
        GenerationRequest { prompt, max_new_tokens, decoding, request_id }
    }
}

/// SHA-256 over the canonical JSON of the prompt and decoding parameters.
pub fn request_id(prompt: &str, max_new_tokens: u32, decoding: &Decoding) -> String {
    let canonical = serde_json::json!({
        "decoding": decoding,
        "max_new_tokens": max_new_tokens,
        "prompt": prompt,
    });
    let digest = Sha256::digest(canonical.to_string().as_bytes());
    hex::encode(&digest[..16])
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResponse {
    pub text: String,
    pub backend_name: String,
    pub elapsed: Duration,
    pub cached: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("request {request_id}: transport failure after {attempts} attempt(s): {message}")]
    Transport { request_id: String, attempts: u32, message: String },
    #[error("request {request_id}: backend returned status {status}: {body}")]
    Status { request_id: String, status: u16, body: String },
    #[error("request {request_id}: unexpected response body: {message}")]
    BadResponse { request_id: String, message: String },
    #[error("request {request_id}: no scripted response")]
    NoScriptedResponse { request_id: String },
    #[error("request {request_id}: empty prompt")]
    EmptyPrompt { request_id: String },
    #[error("request {request_id}: cancelled")]
    Cancelled { request_id: String },
    #[error("request {request_id}: cache write failed: {message}")]
    Cache { request_id: String, message: String },
}

impl BackendError {
    pub fn request_id(&self) -> &str {
        match self {
            BackendError::Transport { request_id, .. }
            | BackendError::Status { request_id, .. }
            | BackendError::BadResponse { request_id, .. }
            | BackendError::NoScriptedResponse { request_id }
            | BackendError::EmptyPrompt { request_id }
            | BackendError::Cancelled { request_id }
            | BackendError::Cache { request_id, .. } => request_id,
        }
    }
}

/// A raw text generation service.
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError>;

    /// Timestamp (seconds since the epoch) stamped on cache records.
    fn timestamp(&self) -> u64 {
        std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
    }
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }

    fn timestamp(&self) -> u64 {
        (**self).timestamp()
    }
}

/// Cache-first generation over a backend.
pub struct Generator {
    backend: Box<dyn Backend>,
    cache: Mutex<ResponseCache>,
    parallelism: usize,
    cancel: Arc<AtomicBool>,
}

impl Generator {
    pub fn new(backend: Box<dyn Backend>, cache: ResponseCache) -> Self {
        Generator { backend, cache: Mutex::new(cache), parallelism: DEFAULT_PARALLELISM, cancel: Arc::new(AtomicBool::new(false)) }
    }

    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism.max(1);
        self
    }

    /// Flag that stops dispatching new backend calls once set.
    pub fn cancel_flag(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.cancel)
    }

    pub fn with_cancel_flag(mut self, flag: Arc<AtomicBool>) -> Self {
        self.cancel = flag;
        self
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn cache(&self) -> std::sync::MutexGuard<'_, ResponseCache> {
        self.cache.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn into_cache(self) -> ResponseCache {
        self.cache.into_inner().unwrap_or_else(|e| e.into_inner())
    }

    pub fn generate(&self, request: &GenerationRequest, stage: Stage) -> Result<GenerationResponse, BackendError> {
        self.generate_many(std::slice::from_ref(request), stage).pop().expect("one result per request")
    }

    /// Generates every request, returning results in input order.
    ///
    /// Cached requests are answered without touching the backend. Misses are
    /// deduplicated by request id, fanned out to at most `parallelism`
    /// workers, and appended to the cache in input order.
    pub fn generate_many(&self, requests: &[GenerationRequest], stage: Stage) -> Vec<Result<GenerationResponse, BackendError>> {
        let mut results: Vec<Option<Result<GenerationResponse, BackendError>>> = vec![None; requests.len()];
        let mut pending: Vec<usize> = Vec::new();
        let mut first_of: HashMap<&str, usize> = HashMap::new();
        let mut duplicates: Vec<(usize, usize)> = Vec::new();
        {
            let cache = self.cache();
            for (i, req) in requests.iter().enumerate() {
                if req.prompt.is_empty() {
                    results[i] = Some(Err(BackendError::EmptyPrompt { request_id: req.request_id.clone() }));
                } else if let Some(record) = cache.get(stage, &req.request_id) {
                    results[i] = Some(Ok(GenerationResponse {
                        text: record.response.clone(),
                        backend_name: record.backend.clone(),
                        elapsed: Duration::ZERO,
                        cached: true,
                    }));
                } else if let Some(&first) = first_of.get(req.request_id.as_str()) {
                    duplicates.push((i, first));
                } else {
                    first_of.insert(&req.request_id, i);
                    pending.push(i);
                }
            }
        }

        if !pending.is_empty() {
            self.dispatch(requests, &pending, stage, &mut results);
        }
        for (dup, first) in duplicates {
            results[dup] = results[first].clone().map(|r| r.map(|resp| GenerationResponse { cached: true, ..resp }));
        }
        results.into_iter().map(|r| r.expect("every request resolved")).collect()
    }

    fn dispatch(
        &self,
        requests: &[GenerationRequest],
        pending: &[usize],
        stage: Stage,
        results: &mut [Option<Result<GenerationResponse, BackendError>>],
    ) {
        let queue = Mutex::new(pending.iter().copied().enumerate());
        let (tx, rx) = mpsc::channel::<(usize, usize, Result<String, BackendError>, Duration)>();
        let workers = self.parallelism.min(pending.len());

        std::thread::scope(|scope| {
            for _ in 0..workers {
                let tx = tx.clone();
                let queue = &queue;
                scope.spawn(move || loop {
                    let next = queue.lock().unwrap_or_else(|e| e.into_inner()).next();
                    let Some((slot, idx)) = next else { break };
                    let req = &requests[idx];
                    let started = Instant::now();
                    let outcome = if self.cancel.load(Ordering::SeqCst) {
                        Err(BackendError::Cancelled { request_id: req.request_id.clone() })
                    } else {
                        self.backend.complete(req)
                    };
                    if tx.send((slot, idx, outcome, started.elapsed())).is_err() {
                        break;
                    }
                });
            }
            drop(tx);

            // Single writer: commit to the cache in slot order as results arrive.
            let mut parked: HashMap<usize, (usize, Result<String, BackendError>, Duration)> = HashMap::new();
            let mut next_slot = 0;
            for (slot, idx, outcome, elapsed) in rx {
                parked.insert(slot, (idx, outcome, elapsed));
                while let Some((idx, outcome, elapsed)) = parked.remove(&next_slot) {
                    results[idx] = Some(self.commit(&requests[idx], stage, outcome, elapsed));
                    next_slot += 1;
                }
            }
        });
    }

    fn commit(
        &self,
        req: &GenerationRequest,
        stage: Stage,
        outcome: Result<String, BackendError>,
        elapsed: Duration,
    ) -> Result<GenerationResponse, BackendError> {
        let text = outcome?;
        let record = CacheRecord {
            request_id: req.request_id.clone(),
            stage,
            prompt: req.prompt.clone(),
            response: text.clone(),
            max_new_tokens: req.max_new_tokens,
            decoding: req.decoding.clone(),
            backend: self.backend.name().to_string(),
            timestamp: self.backend.timestamp(),
        };
        self.cache().append(record).map_err(|e| BackendError::Cache { request_id: req.request_id.clone(), message: e.to_string() })?;
        Ok(GenerationResponse { text, backend_name: self.backend.name().to_string(), elapsed, cached: false })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_id_is_pure() {
        let a = GenerationRequest::new("P");
        let b = GenerationRequest::new("P");
        assert_eq!(a.request_id, b.request_id);
        assert_ne!(a.request_id, GenerationRequest::new("Q").request_id);
        assert_ne!(a.request_id, GenerationRequest::with_params("P", 8, Decoding::Greedy).request_id);
    }

    #[test]
    fn cache_hit_skips_backend() {
        let mock = Arc::new(MockBackend::new(MockScript::from_pairs([("P", "Paris")])));
        let generator = Generator::new(Box::new(Arc::clone(&mock)), ResponseCache::in_memory());
        let req = GenerationRequest::new("P");
        let first = generator.generate(&req, Stage::Generation).unwrap();
        assert_eq!(first.text, "Paris");
        assert!(!first.cached);
        let second = generator.generate(&req, Stage::Generation).unwrap();
        assert!(second.cached);
        assert_eq!(second.text, "Paris");
        assert_eq!(mock.calls(), 1);
        assert_eq!(generator.cache().len(), 1);
    }

    #[test]
    fn strict_mock_rejects_unscripted_prompt() {
        let generator = Generator::new(Box::new(MockBackend::new(MockScript::default())), ResponseCache::in_memory());
        let err = generator.generate(&GenerationRequest::new("nope"), Stage::Probe).unwrap_err();
        assert!(matches!(err, BackendError::NoScriptedResponse { .. }));
        assert!(err.to_string().contains("no scripted response"));
        assert!(generator.cache().is_empty());
    }

    #[test]
    fn parallel_batch_is_ordered_and_deduplicated() {
        let pairs: Vec<(String, String)> = (0..50).map(|i| (format!("p{i}"), format!("r{i}"))).collect();
        let mock = Arc::new(MockBackend::new(MockScript::from_pairs(pairs.clone())));
        let generator = Generator::new(Box::new(Arc::clone(&mock)), ResponseCache::in_memory()).with_parallelism(8);
        let mut requests: Vec<GenerationRequest> = pairs.iter().map(|(p, _)| GenerationRequest::new(p.clone())).collect();
        requests.push(GenerationRequest::new("p3"));
        let results = generator.generate_many(&requests, Stage::Generation);
        for (i, r) in results.iter().take(50).enumerate() {
            assert_eq!(r.as_ref().unwrap().text, format!("r{i}"));
        }
        assert_eq!(results[50].as_ref().unwrap().text, "r3");
        assert_eq!(mock.calls(), 50);
        let cache = generator.into_cache();
        let prompts: Vec<&str> = cache.records().iter().map(|r| r.prompt.as_str()).collect();
        let expected: Vec<String> = (0..50).map(|i| format!("p{i}")).collect();
        assert_eq!(prompts, expected);
    }

    #[test]
    fn cancelled_requests_are_not_cached() {
        let generator = Generator::new(Box::new(MockBackend::new(MockScript::from_pairs([("P", "x")]))), ResponseCache::in_memory());
        generator.cancel_flag().store(true, Ordering::SeqCst);
        let err = generator.generate(&GenerationRequest::new("P"), Stage::Generation).unwrap_err();
        assert!(matches!(err, BackendError::Cancelled { .. }));
        assert!(generator.cache().is_empty());
    }
}
