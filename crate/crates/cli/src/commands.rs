//! Subcommand implementations. Each returns an [`Outcome`] describing what
//! was written and which requests failed.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use serde::Serialize;

use histner::backend::{Backend, BackendError, Decoding, Generator, HttpBackend, HttpConfig, MockBackend, MockScript, ResponseCache};
use histner::corpus::{corpus_stats, merge_splits, parse_hipe_tsv, stats_csv, Corpus, DocumentError};
use histner::extraction::{diagnostics, run_pipeline, PipelineConfig, PredictionStore};
use histner::metrics::{baseline_table, sweep, EvalSource, SweepConfig};
use histner::probing::{
    date_csv, date_errors, language_accuracy, language_csv, parse_wili, parse_wili_tsv, run_date_probe, run_language_probe,
    sample_wili_subset,
};
use histner::prompting::PromptSet;
use histner::report::{metrics_csv, render, MetricsReport, ReportFormat, ReportMetadata};

use crate::config::{BackendKind, RunConfig, WiliSource};

/// Required configuration that was not supplied. Reported as a usage error.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("missing configuration: {}", .0.join(", "))]
pub struct MissingKeys(pub Vec<String>);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorEntry {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
    pub message: String,
}

impl ErrorEntry {
    fn from_backend(e: &BackendError) -> Self {
        let kind = match e {
            BackendError::Transport { .. } => "transport",
            BackendError::Status { .. } => "status",
            BackendError::BadResponse { .. } => "bad_response",
            BackendError::NoScriptedResponse { .. } => "no_scripted_response",
            BackendError::EmptyPrompt { .. } => "empty_prompt",
            BackendError::Cancelled { .. } => "cancelled",
            BackendError::Cache { .. } => "cache",
        };
        ErrorEntry { kind: kind.into(), request_id: Some(e.request_id().to_string()), message: e.to_string() }
    }

    fn from_document(e: &DocumentError) -> Self {
        ErrorEntry { kind: "rejected_document".into(), request_id: None, message: e.to_string() }
    }
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub written: Vec<PathBuf>,
    /// Failures that make the command exit nonzero.
    pub errors: Vec<ErrorEntry>,
    /// Problems reported but not fatal, such as rejected documents.
    pub warnings: Vec<ErrorEntry>,
    pub interrupted: bool,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.interrupted {
            130
        } else if self.errors.is_empty() {
            0
        } else {
            1
        }
    }
}

/// Writes through a temporary file in the same directory so readers never
/// see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

struct Writer<'a> {
    out: &'a Path,
    outcome: Outcome,
}

impl<'a> Writer<'a> {
    fn new(out: &'a Path) -> Self {
        Writer { out, outcome: Outcome::default() }
    }

    fn file(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.out.join(name);
        write_atomic(&path, contents.as_bytes())?;
        self.outcome.written.push(path);
        Ok(())
    }

    /// Records request failures and writes `errors.json` when there are any.
    fn finish(mut self, cancel: Option<&AtomicBool>) -> Result<Outcome> {
        self.outcome.interrupted = cancel.is_some_and(|c| c.load(Ordering::SeqCst));
        let path = self.out.join("errors.json");
        if self.outcome.errors.is_empty() {
            if path.exists() {
                std::fs::remove_file(&path)?;
            }
        } else {
            let body = serde_json::to_string_pretty(&self.outcome.errors)? + "\n";
            write_atomic(&path, body.as_bytes())?;
            self.outcome.written.push(path);
        }
        Ok(self.outcome)
    }
}

fn jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn load_corpus(config: &RunConfig) -> Result<(Corpus, Vec<DocumentError>)> {
    if config.corpus.is_empty() {
        return Err(MissingKeys(vec!["corpus.<en|de|fr> (list of HIPE TSV files)".into()]).into());
    }
    let mut corpus = Corpus::default();
    let mut rejected = Vec::new();
    for (&language, paths) in &config.corpus {
        let mut splits = Vec::new();
        for path in paths {
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let parsed = parse_hipe_tsv(BufReader::new(file), language).with_context(|| format!("parsing {}", path.display()))?;
            rejected.extend(parsed.rejected);
            splits.push(parsed.documents);
        }
        corpus.extend(merge_splits(splits)?.documents)?;
    }
    Ok((corpus, rejected))
}

pub fn load_prompts(config: &RunConfig) -> Result<PromptSet> {
    match &config.templates {
        Some(path) => PromptSet::load(path).with_context(|| format!("loading templates {}", path.display())),
        None => Ok(PromptSet::default()),
    }
}

pub fn build_generator(config: &RunConfig, cancel: Arc<AtomicBool>) -> Result<Generator> {
    let backend: Box<dyn Backend> = match &config.backend {
        None => {
            return Err(MissingKeys(vec![
                "backend.url (or --backend-url / GENERATION_BACKEND_URL)".into(),
                "or backend.mock_script (or --mock-script)".into(),
            ])
            .into())
        }
        Some(BackendKind::Mock { script }) => {
            let script = MockScript::load(script).with_context(|| format!("loading mock script {}", script.display()))?;
            Box::new(MockBackend::new(script))
        }
        Some(BackendKind::Http { url, timeout_secs, max_attempts }) => {
            let mut http = HttpConfig::new(url.clone());
            http.timeout = Duration::from_secs(*timeout_secs);
            http.max_attempts = (*max_attempts).max(1);
            Box::new(HttpBackend::new(http)?)
        }
    };
    if let Some(dir) = config.cache.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let cache = ResponseCache::open(&config.cache).with_context(|| format!("opening cache {}", config.cache.display()))?;
    Ok(Generator::new(backend, cache).with_parallelism(config.parallelism).with_cancel_flag(cancel))
}

fn pipeline_config(config: &RunConfig) -> PipelineConfig {
    PipelineConfig { matching_threshold: config.matching_threshold, max_new_tokens: config.max_new_tokens, decoding: Decoding::Greedy }
}

fn flush_cache(generator: &Generator) -> Result<()> {
    generator.cache().flush().context("flushing cache")
}

pub fn stats(config: &RunConfig) -> Result<Outcome> {
    let (corpus, rejected) = load_corpus(config)?;
    let mut w = Writer::new(&config.out);
    w.outcome.warnings.extend(rejected.iter().map(ErrorEntry::from_document));
    let stats = corpus_stats(&corpus);
    w.file("stats.csv", &stats_csv(&stats))?;
    w.finish(None)
}

pub fn run(config: &RunConfig, cancel: Arc<AtomicBool>) -> Result<Outcome> {
    let (corpus, rejected) = load_corpus(config)?;
    let prompts = load_prompts(config)?;
    let generator = build_generator(config, cancel.clone())?;
    let result = run_pipeline(&corpus, &generator, &prompts, &pipeline_config(config));
    flush_cache(&generator)?;

    let mut w = Writer::new(&config.out);
    w.outcome.warnings.extend(rejected.iter().map(ErrorEntry::from_document));
    w.outcome.errors.extend(result.failures.iter().map(ErrorEntry::from_backend));
    w.file("predictions.jsonl", &result.store.to_jsonl())?;
    w.file("diagnostics.json", &(serde_json::to_string_pretty(&diagnostics(&result.store))? + "\n"))?;
    w.finish(Some(&cancel))
}

pub fn eval(config: &RunConfig, predictions: Option<&Path>, source: EvalSource) -> Result<Outcome> {
    let (corpus, _) = load_corpus(config)?;
    let path = predictions.map(Path::to_path_buf).unwrap_or_else(|| config.out.join("predictions.jsonl"));
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let store = PredictionStore::from_jsonl(&text).with_context(|| format!("parsing {}", path.display()))?;

    let sweep_config = SweepConfig { thresholds: config.thresholds.clone(), period_threshold: config.period_threshold, source };
    let rows = sweep(&store, &corpus, &sweep_config);
    let mut metadata = ReportMetadata::new(config.thresholds.clone(), config.period_threshold, source);
    metadata.matching_threshold = Some(config.matching_threshold);
    let report = MetricsReport { metadata, rows, baselines: baseline_table() };
    let mut w = Writer::new(&config.out);
    w.file("metrics.csv", &metrics_csv(&report.rows))?;
    w.file("metrics.json", &report.to_json())?;
    w.finish(None)
}

pub fn probe_language(config: &RunConfig, per_language: Option<usize>, cancel: Arc<AtomicBool>) -> Result<Outcome> {
    let sentences = match &config.wili {
        None => {
            return Err(MissingKeys(vec!["wili.sentences and wili.labels".into(), "or wili.tsv".into()]).into());
        }
        Some(WiliSource::Pair { sentences, labels }) => {
            let read = |p: &PathBuf| std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()));
            parse_wili(&read(sentences)?, &read(labels)?)?
        }
        Some(WiliSource::Tsv(path)) => {
            parse_wili_tsv(&std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)?
        }
    };
    let subset = sample_wili_subset(&sentences, per_language.unwrap_or(config.wili_per_language), config.seed)?;
    let prompts = load_prompts(config)?;
    let generator = build_generator(config, cancel.clone())?;
    let (results, failures) = run_language_probe(&subset, &generator, &prompts, &pipeline_config(config));
    flush_cache(&generator)?;

    let mut w = Writer::new(&config.out);
    w.outcome.errors.extend(failures.iter().map(ErrorEntry::from_backend));
    w.file("probe_language.csv", &language_csv(&language_accuracy(&results)))?;
    w.file("probe_language.jsonl", &jsonl(&results)?)?;
    w.finish(Some(&cancel))
}

pub fn probe_date(config: &RunConfig, max_tokens: Option<usize>, cancel: Arc<AtomicBool>) -> Result<Outcome> {
    let (corpus, rejected) = load_corpus(config)?;
    let prompts = load_prompts(config)?;
    let generator = build_generator(config, cancel.clone())?;
    let max_tokens = max_tokens.unwrap_or(config.date_probe_tokens);
    let (results, failures) = run_date_probe(&corpus, &generator, &prompts, max_tokens, &pipeline_config(config));
    flush_cache(&generator)?;

    let mut w = Writer::new(&config.out);
    w.outcome.warnings.extend(rejected.iter().map(ErrorEntry::from_document));
    w.outcome.errors.extend(failures.iter().map(ErrorEntry::from_backend));
    w.file("probe_date.csv", &date_csv(&date_errors(&results)))?;
    w.file("probe_date.jsonl", &jsonl(&results)?)?;
    w.finish(Some(&cancel))
}

pub fn report(config: &RunConfig, metrics: Option<&Path>, formats: &[ReportFormat]) -> Result<Outcome> {
    let path = metrics.map(Path::to_path_buf).unwrap_or_else(|| config.out.join("metrics.json"));
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let report = MetricsReport::from_json(&text)?;
    let dir = config.out.join("report");
    let mut w = Writer::new(&dir);
    for &format in formats {
        for (name, contents) in render(&report, format) {
            w.file(&name, &contents)?;
        }
    }
    Ok(w.outcome)
}
