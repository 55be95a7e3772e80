//! Language identification and publication-date probes.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, GenerationRequest, Generator, Stage};
use crate::corpus::{Corpus, Document, Language};
use crate::extraction::PipelineConfig;
use crate::prompting::PromptSet;

/// Tokens of a document fed to the date probe by default.
pub const DEFAULT_DATE_PROBE_TOKENS: usize = 100;
/// Sentences per language in the language probe by default.
pub const DEFAULT_SENTENCES_PER_LANGUAGE: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum ProbeError {
    #[error("language {language}: requested {requested} sentences but only {available} available")]
    InsufficientSentences { language: Language, requested: usize, available: usize },
    #[error("WiLI input: {0} sentence lines but {1} label lines")]
    LengthMismatch(usize, usize),
    #[error("WiLI input line {line}: {message}")]
    Malformed { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageProbeResult {
    pub reference: String,
    pub gold: Language,
    pub raw_answer: String,
    pub predicted: Option<Language>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DateProbeResult {
    pub document_id: String,
    pub language: Language,
    pub gold_year: i32,
    pub raw_answer: String,
    pub predicted_year: Option<i32>,
    pub absolute_error: Option<u32>,
}

impl DateProbeResult {
    pub fn new(document_id: String, language: Language, gold_year: i32, raw_answer: String) -> Self {
        let predicted_year = parse_year(&raw_answer);
        DateProbeResult {
            document_id,
            language,
            gold_year,
            absolute_error: predicted_year.map(|y| y.abs_diff(gold_year)),
            predicted_year,
            raw_answer,
        }
    }
}

const LANGUAGE_NAMES: [(Language, &[&str]); 3] =
    [(Language::En, &["english"]), (Language::De, &["german", "deutsch"]), (Language::Fr, &["french", "français", "francais"])];

/// First language (in en, de, fr order) whose name occurs in the answer.
pub fn parse_language_answer(raw: &str) -> Option<Language> {
    let lower = raw.to_lowercase();
    LANGUAGE_NAMES.iter().find(|(_, names)| names.iter().any(|n| lower.contains(n))).map(|(lang, _)| *lang)
}

/// First standalone 4-digit number in `[1400, 2100]`.
pub fn parse_year(raw: &str) -> Option<i32> {
    let bytes = raw.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if !bytes[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i - start == 4 {
            let year: i32 = raw[start..i].parse().expect("four ascii digits");
            if (1400..=2100).contains(&year) {
                return Some(year);
            }
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LanguageAccuracy {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Per gold language; unparsed answers count as wrong.
pub fn language_accuracy(results: &[LanguageProbeResult]) -> BTreeMap<Language, LanguageAccuracy> {
    let mut tally: BTreeMap<Language, (usize, usize)> = BTreeMap::new();
    for r in results {
        let cell = tally.entry(r.gold).or_default();
        cell.0 += 1;
        if r.predicted == Some(r.gold) {
            cell.1 += 1;
        }
    }
    tally.into_iter().map(|(lang, (n, correct))| (lang, LanguageAccuracy { n, correct, accuracy: correct as f64 / n as f64 })).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DateErrorSummary {
    pub n_scored: usize,
    pub n_unparsed: usize,
    /// Absent when nothing parsed.
    pub mean_abs_error: Option<f64>,
    pub median_abs_error: Option<f64>,
}

/// Mean and median absolute year error per language, excluding unparsed answers.
pub fn date_errors(results: &[DateProbeResult]) -> BTreeMap<Language, DateErrorSummary> {
    let mut by_lang: BTreeMap<Language, (Vec<u32>, usize)> = BTreeMap::new();
    for r in results {
        let cell = by_lang.entry(r.language).or_default();
        match r.absolute_error {
            Some(e) => cell.0.push(e),
            None => cell.1 += 1,
        }
    }
    by_lang
        .into_iter()
        .map(|(lang, (mut errors, n_unparsed))| {
            errors.sort_unstable();
            let n = errors.len();
            let mean = (n > 0).then(|| errors.iter().map(|&e| f64::from(e)).sum::<f64>() / n as f64);
            let median = (n > 0).then(|| {
                if n % 2 == 1 {
                    f64::from(errors[n / 2])
                } else {
                    (f64::from(errors[n / 2 - 1]) + f64::from(errors[n / 2])) / 2.0
                }
            });
            (lang, DateErrorSummary { n_scored: n, n_unparsed, mean_abs_error: mean, median_abs_error: median })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WiliSentence {
    /// Zero-based line in the source file.
    pub index: usize,
    pub language: Language,
    pub text: String,
}

fn wili_label(label: &str) -> Option<Language> {
    label.trim().parse().ok()
}

/// Pairs a WiLI sentence file with its label file (one label per line).
/// Sentences labelled outside en/de/fr are skipped.
pub fn parse_wili(sentences: &str, labels: &str) -> Result<Vec<WiliSentence>, ProbeError> {
    let texts: Vec<&str> = sentences.lines().collect();
    let labels: Vec<&str> = labels.lines().collect();
    if texts.len() != labels.len() {
        return Err(ProbeError::LengthMismatch(texts.len(), labels.len()));
    }
    Ok(texts
        .into_iter()
        .zip(labels)
        .enumerate()
        .filter_map(|(index, (text, label))| wili_label(label).map(|language| WiliSentence { index, language, text: text.to_string() }))
        .collect())
}

/// Single-file variant: `label<TAB>sentence` per line.
pub fn parse_wili_tsv(text: &str) -> Result<Vec<WiliSentence>, ProbeError> {
    let mut out = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (label, sentence) = line
            .split_once('\t')
            .ok_or_else(|| ProbeError::Malformed { line: index + 1, message: "expected `label<TAB>sentence`".into() })?;
        if let Some(language) = wili_label(label) {
            out.push(WiliSentence { index, language, text: sentence.to_string() });
        }
    }
    Ok(out)
}

/// Seeded sample of exactly `per_language` sentences for each of en, de, fr,
/// returned in source order within each language.
pub fn sample_wili_subset(sentences: &[WiliSentence], per_language: usize, seed: u64) -> Result<Vec<WiliSentence>, ProbeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_language * Language::ALL.len());
    for language in Language::ALL {
        let pool: Vec<&WiliSentence> = sentences.iter().filter(|s| s.language == language).collect();
        if pool.len() < per_language {
            return Err(ProbeError::InsufficientSentences { language, requested: per_language, available: pool.len() });
        }
        let mut picked = index::sample(&mut rng, pool.len(), per_language).into_vec();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|i| pool[i].clone()));
    }
    Ok(out)
}

/// The first `max_tokens` tokens of a document as running text.
pub fn date_probe_text(document: &Document, max_tokens: usize) -> String {
    let tokens: Vec<_> = document.tokens().take(max_tokens).cloned().collect();
    crate::corpus::join_tokens(&tokens)
}

pub fn run_language_probe(
    sentences: &[WiliSentence],
    generator: &Generator,
    prompts: &PromptSet,
    config: &PipelineConfig,
) -> (Vec<LanguageProbeResult>, Vec<BackendError>) {
    let requests: Vec<GenerationRequest> = sentences
        .iter()
        .map(|s| {
            GenerationRequest::with_params(prompts.render_language_probe(&s.text).text, config.max_new_tokens, config.decoding.clone())
        })
        .collect();
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (s, outcome) in sentences.iter().zip(generator.generate_many(&requests, Stage::Probe)) {
        match outcome {
            Ok(resp) => results.push(LanguageProbeResult {
                reference: format!("wili:{}", s.index),
                gold: s.language,
                predicted: parse_language_answer(&resp.text),
                raw_answer: resp.text,
            }),
            Err(e) => failures.push(e),
        }
    }
    (results, failures)
}

pub fn run_date_probe(
    corpus: &Corpus,
    generator: &Generator,
    prompts: &PromptSet,
    max_tokens: usize,
    config: &PipelineConfig,
) -> (Vec<DateProbeResult>, Vec<BackendError>) {
    let requests: Vec<GenerationRequest> = corpus
        .documents
        .iter()
        .map(|d| {
            let prompt = prompts.render_date_probe(&date_probe_text(d, max_tokens)).text;
            GenerationRequest::with_params(prompt, config.max_new_tokens, config.decoding.clone())
        })
        .collect();
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (doc, outcome) in corpus.documents.iter().zip(generator.generate_many(&requests, Stage::Probe)) {
        match outcome {
            Ok(resp) => results.push(DateProbeResult::new(doc.id.clone(), doc.language, doc.year(), resp.text)),
            Err(e) => failures.push(e),
        }
    }
    (results, failures)
}

pub const LANGUAGE_CSV_HEADER: &str = "language,n,accuracy";
pub const DATE_CSV_HEADER: &str = "language,n_scored,n_unparsed,mean_abs_error,median_abs_error";

pub fn language_csv(accuracy: &BTreeMap<Language, LanguageAccuracy>) -> String {
    let mut out = format!("{LANGUAGE_CSV_HEADER}\n");
    for (lang, acc) in accuracy {
        out.push_str(&format!("{lang},{},{:.3}\n", acc.n, acc.accuracy));
    }
    out
}

pub fn date_csv(errors: &BTreeMap<Language, DateErrorSummary>) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.2}"));
    let mut out = format!("{DATE_CSV_HEADER}\n");
    for (lang, e) in errors {
        out.push_str(&format!("{lang},{},{},{},{}\n", e.n_scored, e.n_unparsed, fmt(e.mean_abs_error), fmt(e.median_abs_error)));
    }
    out
}
