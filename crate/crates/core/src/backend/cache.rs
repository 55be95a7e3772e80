use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Decoding, GenerationResponse, Stage};

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache {path}: line {line}: {message}")]
    Corrupt { path: String, line: usize, message: String },
    #[error("cache io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("no cached response for request {0}")]
    NotFound(String),
}

/// One line of the response cache.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub request_id: String,
    pub stage: Stage,
    pub prompt: String,
    pub response: String,
    pub max_new_tokens: u32,
    pub decoding: Decoding,
    pub backend: String,
    pub timestamp: u64,
}

/// Append-only newline-delimited JSON store of backend responses.
#[derive(Debug)]
pub struct ResponseCache {
    path: Option<PathBuf>,
    file: Option<File>,
    records: Vec<CacheRecord>,
    index: HashMap<(Stage, String), usize>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache { path: None, file: None, records: Vec::new(), index: HashMap::new() }
    }

    /// Opens (creating if needed) a cache file and loads existing records.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CacheError> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let mut cache = ResponseCache::in_memory();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (idx, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: CacheRecord = serde_json::from_str(&line).map_err(|e| CacheError::Corrupt {
                    path: path.display().to_string(),
                    line: idx + 1,
                    message: e.to_string(),
                })?;
                cache.insert(record);
            }
        }
        cache.file = Some(OpenOptions::new().create(true).append(true).open(&path)?);
        cache.path = Some(path);
        Ok(cache)
    }

    fn insert(&mut self, record: CacheRecord) -> bool {
        let key = (record.stage, record.request_id.clone());
        if self.index.contains_key(&key) {
            return false;
        }
        self.index.insert(key, self.records.len());
        self.records.push(record);
        true
    }

    pub fn get(&self, stage: Stage, request_id: &str) -> Option<&CacheRecord> {
        self.index.get(&(stage, request_id.to_string())).map(|&i| &self.records[i])
    }

    /// Appends a record unless one with the same (stage, request id) exists.
    /// Each record is written as one line and flushed immediately.
    pub fn append(&mut self, record: CacheRecord) -> Result<(), CacheError> {
        let line = serde_json::to_string(&record).expect("cache records serialize");
        if !self.insert(record) {
            return Ok(());
        }
        if let Some(file) = self.file.as_mut() {
            file.write_all(format!("{line}\n").as_bytes())?;
            file.flush()?;
        }
        Ok(())
    }

    /// Returns the stored response for a request id, from any stage.
    pub fn replay(&self, request_id: &str) -> Result<GenerationResponse, CacheError> {
        self.records
            .iter()
            .find(|r| r.request_id == request_id)
            .map(|r| GenerationResponse {
                text: r.response.clone(),
                backend_name: r.backend.clone(),
                elapsed: std::time::Duration::ZERO,
                cached: true,
            })
            .ok_or_else(|| CacheError::NotFound(request_id.to_string()))
    }

    pub fn records(&self) -> &[CacheRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn flush(&mut self) -> Result<(), CacheError> {
        if let Some(file) = self.file.as_mut() {
            file.flush()?;
            file.sync_data()?;
        }
        Ok(())
    }
}
