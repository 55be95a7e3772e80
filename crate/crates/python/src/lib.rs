//! Python bindings for the `histner` core crate.

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use histner::backend::{Generator, MockBackend, MockScript, ResponseCache};
use histner::corpus::{self, EntityType, IobTag, Language, Sentence};
use histner::extraction::{self, AnswerItem, PipelineConfig, PredictionStore};
use histner::metrics::{self, EvalSource, GoldMention, SweepConfig};
use histner::{prompting, report};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn entity_type(label: &str) -> PyResult<EntityType> {
    EntityType::parse_label(label).ok_or_else(|| value_error(format!("unknown entity type {label:?}")))
}

fn language(code: &str) -> PyResult<Language> {
    code.parse().map_err(value_error)
}

fn sentence(tokens: Vec<String>) -> Sentence {
    Sentence::from_tagged(0, tokens.into_iter().map(|t| (t, IobTag::O)))
}

#[pyfunction]
fn levenshtein(a: &str, b: &str) -> usize {
    metrics::levenshtein(a, b)
}

#[pyfunction]
fn normalized_levenshtein(a: &str, b: &str) -> f64 {
    metrics::normalized_levenshtein(a, b)
}

/// Splits a raw model answer into cleaned, deduplicated items.
#[pyfunction]
fn parse_answer(raw: &str) -> Vec<String> {
    extraction::parse_answer(raw).into_iter().map(|i| i.text).collect()
}

/// `(distance, start, end)` of the closest token window, end inclusive.
#[pyfunction]
fn best_window(item: &str, tokens: Vec<String>) -> Option<(f64, usize, usize)> {
    extraction::best_window(item, &sentence(tokens)).map(|(d, r)| (d, r.start, r.end))
}

/// Decodes IOB tags (`B-loc`, `I-pers.ind`, `O`, ...) into `(type, start, end)` spans.
#[pyfunction]
fn decode_tags(tags: Vec<String>) -> Vec<(String, usize, usize)> {
    let tags: Vec<IobTag> = tags.iter().map(|t| IobTag::parse(t)).collect();
    corpus::decode_tags(&tags).into_iter().map(|(t, s, e)| (t.label().to_string(), s, e)).collect()
}

#[pyfunction]
fn parse_year(raw: &str) -> Option<i32> {
    histner::probing::parse_year(raw)
}

#[pyfunction]
fn parse_language_answer(raw: &str) -> Option<&'static str> {
    histner::probing::parse_language_answer(raw).map(Language::code)
}

/// `(language, precision, recall, f1)` of the published baselines.
#[pyfunction]
fn baseline_table() -> Vec<(&'static str, f64, f64, f64)> {
    metrics::baseline_table().into_iter().map(|r| (r.language.code(), r.precision, r.recall, r.f1)).collect()
}

/// Scores answer items against one sentence's gold mentions.
///
/// `gold` holds `(surface, start_token)` pairs. Returns
/// `{"tp", "fp", "fn", "precision", "recall", "f1"}`.
#[pyfunction]
fn classify(items: Vec<String>, tokens: Vec<String>, gold: Vec<(String, usize)>, threshold: f64) -> BTreeMap<&'static str, f64> {
    let items: Vec<AnswerItem> = items.into_iter().enumerate().map(|(position, text)| AnswerItem { text, position }).collect();
    let scored = metrics::score_items(&items, &sentence(tokens));
    let gold: Vec<GoldMention> = gold.into_iter().map(|(surface, start)| GoldMention { surface, start }).collect();
    let c = metrics::classify(&scored, &gold, threshold);
    BTreeMap::from([
        ("tp", c.tp as f64),
        ("fp", c.fp as f64),
        ("fn", c.fn_ as f64),
        ("precision", c.precision()),
        ("recall", c.recall()),
        ("f1", c.f1()),
    ])
}

#[pyclass(name = "PromptSet")]
struct PyPromptSet(prompting::PromptSet);

#[pymethods]
impl PyPromptSet {
    #[new]
    fn new() -> Self {
        PyPromptSet(prompting::PromptSet::default())
    }

    #[staticmethod]
    fn from_config(text: &str) -> PyResult<Self> {
        prompting::PromptSet::from_config(text).map(PyPromptSet).map_err(value_error)
    }

    fn to_config(&self) -> String {
        self.0.to_config()
    }

    fn generation(&self, sentence: &str, entity_type: &str) -> PyResult<String> {
        Ok(self.0.render_generation(sentence, self::entity_type(entity_type)?).map_err(value_error)?.text)
    }

    fn disambiguation(&self, sentence: &str, mention: &str, type_a: &str, type_b: &str) -> PyResult<String> {
        let (a, b) = (entity_type(type_a)?, entity_type(type_b)?);
        Ok(self.0.render_disambiguation(sentence, mention, a, b).map_err(value_error)?.text)
    }

    fn language_probe(&self, sentence: &str) -> String {
        self.0.render_language_probe(sentence).text
    }

    fn date_probe(&self, text: &str) -> String {
        self.0.render_date_probe(text).text
    }
}

#[pyclass(name = "Corpus")]
struct PyCorpus {
    inner: corpus::Corpus,
    rejected: Vec<String>,
}

#[pymethods]
impl PyCorpus {
    /// Builds a corpus from `{language: [tsv text, ...]}`, splits merged in order.
    #[staticmethod]
    fn from_tsv(sources: BTreeMap<String, Vec<String>>) -> PyResult<Self> {
        let mut inner = corpus::Corpus::default();
        let mut rejected = Vec::new();
        for (code, texts) in sources {
            let lang = language(&code)?;
            let mut splits = Vec::new();
            for text in texts {
                let parsed = corpus::parse_hipe_tsv(text.as_bytes(), lang).map_err(value_error)?;
                rejected.extend(parsed.rejected.iter().map(|r| r.to_string()));
                splits.push(parsed.documents);
            }
            let merged = corpus::merge_splits(splits).map_err(value_error)?;
            inner.extend(merged.documents).map_err(value_error)?;
        }
        Ok(PyCorpus { inner, rejected })
    }

    fn __len__(&self) -> usize {
        self.inner.documents.len()
    }

    fn document_ids(&self) -> Vec<String> {
        self.inner.documents.iter().map(|d| d.id.clone()).collect()
    }

    #[getter]
    fn rejected(&self) -> Vec<String> {
        self.rejected.clone()
    }

    fn stats_csv(&self) -> String {
        corpus::stats_csv(&corpus::corpus_stats(&self.inner))
    }

    /// Runs the extraction pipeline against a scripted mock backend and
    /// returns the prediction store as JSONL.
    #[pyo3(signature = (script_json, parallelism = 1))]
    fn run_mock(&self, script_json: &str, parallelism: usize) -> PyResult<String> {
        let script: MockScript = serde_json::from_str(script_json).map_err(value_error)?;
        let generator = Generator::new(Box::new(MockBackend::new(script)), ResponseCache::in_memory()).with_parallelism(parallelism);
        let run = extraction::run_pipeline(&self.inner, &generator, &prompting::PromptSet::default(), &PipelineConfig::default());
        Ok(run.store.to_jsonl())
    }

    /// Metrics CSV for a prediction store produced by `run_mock` or the CLI.
    #[pyo3(signature = (predictions_jsonl, thresholds = None, final_labels = false))]
    fn evaluate(&self, predictions_jsonl: &str, thresholds: Option<Vec<f64>>, final_labels: bool) -> PyResult<String> {
        let store = PredictionStore::from_jsonl(predictions_jsonl).map_err(value_error)?;
        let mut config = SweepConfig::default();
        if let Some(t) = thresholds {
            config.thresholds = t;
        }
        if final_labels {
            config.source = EvalSource::FinalLabels;
        }
        Ok(report::metrics_csv(&metrics::sweep(&store, &self.inner, &config)))
    }
}

#[pymodule]
fn histner_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(levenshtein, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_levenshtein, m)?)?;
    m.add_function(wrap_pyfunction!(parse_answer, m)?)?;
    m.add_function(wrap_pyfunction!(best_window, m)?)?;
    m.add_function(wrap_pyfunction!(decode_tags, m)?)?;
    m.add_function(wrap_pyfunction!(parse_year, m)?)?;
    m.add_function(wrap_pyfunction!(parse_language_answer, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_table, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_class::<PyPromptSet>()?;
    m.add_class::<PyCorpus>()?;
    Ok(())
}
