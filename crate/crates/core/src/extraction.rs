//! The extraction pipeline: generation prompts for every sentence and entity
//! type, answer parsing, fuzzy filtering against the sentence, nested-span
//! resolution, and pairwise disambiguation of tokens claimed by several types.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, Decoding, GenerationRequest, Generator, Stage, DEFAULT_MAX_NEW_TOKENS};
use crate::corpus::{Corpus, EntityType, Sentence};
use crate::metrics::normalized_levenshtein;
use crate::prompting::PromptSet;

/// Default step-2 matching threshold.
pub const DEFAULT_MATCHING_THRESHOLD: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerItem {
    pub text: String,
    pub position: usize,
}

/// Inclusive token range within a sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenRange {
    pub start: usize,
    pub end: usize,
}

impl TokenRange {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlaps(&self, other: &TokenRange) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePrediction {
    pub entity_type: EntityType,
    pub item: AnswerItem,
    pub matched: Option<TokenRange>,
    pub normalized_distance: Option<f64>,
    pub echoes_entity_name: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisambiguationTask {
    pub sentence_id: usize,
    pub range: TokenRange,
    pub surface: String,
    /// Distinct claimants in fixed type order.
    pub types: Vec<EntityType>,
}

/// Splits a comma-separated answer into trimmed, deduplicated items.
pub fn parse_answer(raw: &str) -> Vec<AnswerItem> {
    let mut seen = HashSet::new();
    let mut items = Vec::new();
    for segment in raw.split(',') {
        let text = segment.trim().trim_end_matches('.').trim();
        if text.is_empty() || !seen.insert(text.to_lowercase()) {
            continue;
        }
        items.push(AnswerItem { text: text.to_string(), position: items.len() });
    }
    items
}

/// Best sentence window for one item: `(distance, range)`, ties by start then width.
pub fn best_window(item: &str, sentence: &Sentence) -> Option<(f64, TokenRange)> {
    let needle = item.to_lowercase();
    let width = item.split_whitespace().count().max(1).min(sentence.len());
    let mut best: Option<(f64, TokenRange)> = None;
    for start in 0..sentence.len() {
        for len in 1..=width {
            let end = start + len - 1;
            if end >= sentence.len() {
                break;
            }
            let d = normalized_levenshtein(&needle, &sentence.span_text(start, end).to_lowercase());
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, TokenRange { start, end }));
            }
        }
    }
    best
}

/// Matches each item to its closest sentence window; items farther than
/// `threshold` stay unmatched.
pub fn match_items(items: &[AnswerItem], sentence: &Sentence, threshold: f64, entity_type: EntityType) -> Vec<CandidatePrediction> {
    items
        .iter()
        .map(|item| {
            let hit = best_window(&item.text, sentence).filter(|(d, _)| *d <= threshold);
            CandidatePrediction {
                entity_type,
                item: item.clone(),
                matched: hit.map(|(_, r)| r),
                normalized_distance: hit.map(|(d, _)| d),
                echoes_entity_name: false,
            }
        })
        .collect()
}

/// Marks items that only restate the type noun.
pub fn flag_echoes(predictions: &mut [CandidatePrediction], prompts: &PromptSet) {
    for p in predictions {
        let words = prompts.noun_words(p.entity_type);
        p.echoes_entity_name = words.contains(&p.item.text.to_lowercase());
    }
}

/// Keeps the longest of every group of overlapping matched predictions;
/// equal lengths go to the smaller start. Output is sorted by start.
pub fn resolve_nested(predictions: &[CandidatePrediction]) -> Vec<CandidatePrediction> {
    let mut matched: Vec<&CandidatePrediction> = predictions.iter().filter(|p| p.matched.is_some()).collect();
    matched.sort_by_key(|p| {
        let r = p.matched.unwrap();
        (std::cmp::Reverse(r.len()), r.start, p.item.position)
    });
    let mut kept: Vec<CandidatePrediction> = Vec::new();
    for p in matched {
        let r = p.matched.unwrap();
        if kept.iter().all(|k| !k.matched.unwrap().overlaps(&r)) {
            kept.push(p.clone());
        }
    }
    kept.sort_by_key(|p| p.matched.unwrap().start);
    kept
}

/// Groups overlapping claims across types; every group with two or more
/// distinct types becomes one task over the union of its ranges.
pub fn detect_conflicts(per_type: &BTreeMap<EntityType, Vec<CandidatePrediction>>, sentence: &Sentence) -> Vec<DisambiguationTask> {
    let claims: Vec<(EntityType, TokenRange)> =
        per_type.iter().flat_map(|(&t, preds)| preds.iter().filter_map(move |p| p.matched.map(|r| (t, r)))).collect();
    let mut parent: Vec<usize> = (0..claims.len()).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..claims.len() {
        for j in i + 1..claims.len() {
            if claims[i].1.overlaps(&claims[j].1) {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..claims.len() {
        let r = root(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut tasks: Vec<DisambiguationTask> = groups
        .values()
        .filter_map(|members| {
            let mut types: Vec<EntityType> = members.iter().map(|&i| claims[i].0).collect();
            types.sort();
            types.dedup();
            if types.len() < 2 {
                return None;
            }
            let start = members.iter().map(|&i| claims[i].1.start).min().unwrap();
            let end = members.iter().map(|&i| claims[i].1.end).max().unwrap();
            Some(DisambiguationTask {
                sentence_id: sentence.id,
                range: TokenRange { start, end },
                surface: sentence.span_text(start, end),
                types,
            })
        })
        .collect();
    tasks.sort_by_key(|t| t.range);
    tasks
}

/// Maps a free-text answer to one of the candidate types by case-insensitive
/// containment of the type nouns; the earliest mention wins.
pub fn apply_disambiguation(answer: &str, candidates: &[EntityType], prompts: &PromptSet) -> Option<EntityType> {
    let answer = answer.to_lowercase();
    candidates
        .iter()
        .enumerate()
        .filter_map(|(order, &t)| prompts.noun_words(t).iter().filter_map(|w| answer.find(w.as_str())).min().map(|pos| (pos, order, t)))
        .min()
        .map(|(_, _, t)| t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisambiguationRound {
    pub type_a: EntityType,
    pub type_b: EntityType,
    pub request_id: String,
    pub answer: Option<String>,
    pub winner: Option<EntityType>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", content = "data", rename_all = "snake_case")]
pub enum StoreBody {
    RawAnswer { request_id: String, prompt: String, answer: String },
    Items { items: Vec<AnswerItem> },
    Matches { threshold: f64, predictions: Vec<CandidatePrediction> },
    Disambiguation { task: DisambiguationTask, rounds: Vec<DisambiguationRound>, winner: Option<EntityType> },
    Final { labels: Vec<CandidatePrediction> },
    Error { request: Stage, request_id: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreRecord {
    pub document_id: String,
    pub sentence_id: usize,
    pub entity_type: Option<EntityType>,
    #[serde(flatten)]
    pub body: StoreBody,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("prediction store line {line}: {message}")]
    Parse { line: usize, message: String },
}

type CellKey = (String, usize, EntityType);

/// Every stage's output, in corpus order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionStore {
    records: Vec<StoreRecord>,
    items: HashMap<CellKey, usize>,
    finals: HashMap<CellKey, usize>,
}

impl PredictionStore {
    pub fn from_records(records: Vec<StoreRecord>) -> Self {
        let mut store = PredictionStore::default();
        for record in records {
            store.push(record);
        }
        store
    }

    fn push(&mut self, record: StoreRecord) {
        if let Some(t) = record.entity_type {
            let key = (record.document_id.clone(), record.sentence_id, t);
            match record.body {
                StoreBody::Items { .. } => {
                    self.items.insert(key, self.records.len());
                }
                StoreBody::Final { .. } => {
                    self.finals.insert(key, self.records.len());
                }
                _ => {}
            }
        }
        self.records.push(record);
    }

    pub fn records(&self) -> &[StoreRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn cell(&self, index: &HashMap<CellKey, usize>, doc: &str, sentence: usize, t: EntityType) -> Option<&StoreBody> {
        index.get(&(doc.to_string(), sentence, t)).map(|&i| &self.records[i].body)
    }

    /// Parsed answer items of one query; empty if the query is missing or failed.
    pub fn items(&self, doc: &str, sentence: usize, t: EntityType) -> Vec<AnswerItem> {
        match self.cell(&self.items, doc, sentence, t) {
            Some(StoreBody::Items { items }) => items.clone(),
            _ => Vec::new(),
        }
    }

    /// Items behind the final labels of one query.
    pub fn final_items(&self, doc: &str, sentence: usize, t: EntityType) -> Vec<AnswerItem> {
        match self.cell(&self.finals, doc, sentence, t) {
            Some(StoreBody::Final { labels }) => labels.iter().map(|l| l.item.clone()).collect(),
            _ => Vec::new(),
        }
    }

    pub fn errors(&self) -> impl Iterator<Item = &StoreRecord> {
        self.records.iter().filter(|r| matches!(r.body, StoreBody::Error { .. }))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("store records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, StoreError> {
        let mut records = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record = serde_json::from_str(line).map_err(|e| StoreError::Parse { line: idx + 1, message: e.to_string() })?;
            records.push(record);
        }
        Ok(PredictionStore::from_records(records))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub matching_threshold: f64,
    pub max_new_tokens: u32,
    pub decoding: Decoding,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            matching_threshold: DEFAULT_MATCHING_THRESHOLD,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            decoding: Decoding::Greedy,
        }
    }
}

#[derive(Debug)]
pub struct PipelineRun {
    pub store: PredictionStore,
    pub failures: Vec<BackendError>,
}

impl PipelineRun {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

struct SentenceState<'a> {
    doc_id: &'a str,
    sentence: &'a Sentence,
    text: String,
    generation: BTreeMap<EntityType, Result<(GenerationRequest, String), BackendError>>,
    matches: BTreeMap<EntityType, (Vec<AnswerItem>, Vec<CandidatePrediction>)>,
    resolved: BTreeMap<EntityType, Vec<CandidatePrediction>>,
    tasks: Vec<TaskState>,
}

struct TaskState {
    task: DisambiguationTask,
    current: Option<EntityType>,
    next: usize,
    rounds: Vec<DisambiguationRound>,
    error: Option<BackendError>,
}

impl TaskState {
    fn pending_pair(&self) -> Option<(EntityType, EntityType)> {
        match (self.current, self.error.as_ref()) {
            (Some(a), None) if self.next < self.task.types.len() => Some((a, self.task.types[self.next])),
            _ => None,
        }
    }
}

/// Runs generation, filtering, nesting and disambiguation over the corpus.
/// Failed requests are recorded and the remaining cells still complete.
pub fn run_pipeline(corpus: &Corpus, generator: &Generator, prompts: &PromptSet, config: &PipelineConfig) -> PipelineRun {
    let request = |prompt: String| GenerationRequest::with_params(prompt, config.max_new_tokens, config.decoding.clone());

    let mut states: Vec<SentenceState> = corpus
        .documents
        .iter()
        .flat_map(|doc| doc.sentences.iter().filter(|s| !s.is_empty()).map(move |s| (doc.id.as_str(), s)))
        .map(|(doc_id, sentence)| SentenceState {
            doc_id,
            sentence,
            text: sentence.text(),
            generation: BTreeMap::new(),
            matches: BTreeMap::new(),
            resolved: BTreeMap::new(),
            tasks: Vec::new(),
        })
        .collect();

    // step 1: every generation prompt for every sentence
    let mut requests = Vec::new();
    for state in &states {
        for t in EntityType::ALL {
            let prompt = prompts.render_generation(&state.text, t).expect("sentence is non-empty");
            requests.push(request(prompt.text));
        }
    }
    let mut responses = generator.generate_many(&requests, Stage::Generation).into_iter();
    let mut requests = requests.into_iter();
    for state in &mut states {
        for t in EntityType::ALL {
            let req = requests.next().unwrap();
            let outcome = responses.next().unwrap().map(|r| (req, r.text));
            state.generation.insert(t, outcome);
        }
    }

    // step 2: parse, filter to in-sentence tokens, keep the longest nested span
    for state in &mut states {
        for (&t, outcome) in &state.generation {
            if let Ok((_, answer)) = outcome {
                let items = parse_answer(answer);
                let mut predictions = match_items(&items, state.sentence, config.matching_threshold, t);
                flag_echoes(&mut predictions, prompts);
                state.resolved.insert(t, resolve_nested(&predictions));
                state.matches.insert(t, (items, predictions));
            }
        }
        state.tasks = detect_conflicts(&state.resolved, state.sentence)
            .into_iter()
            .map(|task| TaskState { current: Some(task.types[0]), next: 1, rounds: Vec::new(), error: None, task })
            .collect();
    }

    // step 3: pairwise disambiguation, one round per extra claimant
    loop {
        let mut slots = Vec::new();
        let mut round_requests = Vec::new();
        for (si, state) in states.iter().enumerate() {
            for (ti, task) in state.tasks.iter().enumerate() {
                if let Some((a, b)) = task.pending_pair() {
                    let prompt = prompts
                        .render_disambiguation(&state.text, &task.task.surface, a, b)
                        .expect("task surface is a span of the sentence");
                    slots.push((si, ti, a, b));
                    round_requests.push(request(prompt.text));
                }
            }
        }
        if round_requests.is_empty() {
            break;
        }
        let responses = generator.generate_many(&round_requests, Stage::Disambiguation);
        for ((si, ti, a, b), (req, outcome)) in slots.into_iter().zip(round_requests.into_iter().zip(responses)) {
            let task = &mut states[si].tasks[ti];
            match outcome {
                Ok(resp) => {
                    let winner = apply_disambiguation(&resp.text, &[a, b], prompts);
                    task.rounds.push(DisambiguationRound {
                        type_a: a,
                        type_b: b,
                        request_id: req.request_id,
                        answer: Some(resp.text),
                        winner,
                    });
                    task.current = winner;
                    task.next += 1;
                }
                Err(e) => {
                    task.rounds.push(DisambiguationRound { type_a: a, type_b: b, request_id: req.request_id, answer: None, winner: None });
                    task.current = None;
                    task.error = Some(e);
                }
            }
        }
    }

    let mut store = PredictionStore::default();
    let mut failures = Vec::new();
    for state in states {
        let record = |entity_type: Option<EntityType>, body: StoreBody| StoreRecord {
            document_id: state.doc_id.to_string(),
            sentence_id: state.sentence.id,
            entity_type,
            body,
        };
        for (&t, outcome) in &state.generation {
            match outcome {
                Ok((req, answer)) => {
                    store.push(record(
                        Some(t),
                        StoreBody::RawAnswer { request_id: req.request_id.clone(), prompt: req.prompt.clone(), answer: answer.clone() },
                    ));
                    let (items, predictions) = state.matches[&t].clone();
                    store.push(record(Some(t), StoreBody::Items { items }));
                    store.push(record(Some(t), StoreBody::Matches { threshold: config.matching_threshold, predictions }));
                }
                Err(e) => {
                    store.push(record(
                        Some(t),
                        StoreBody::Error { request: Stage::Generation, request_id: e.request_id().to_string(), message: e.to_string() },
                    ));
                    failures.push(e.clone());
                }
            }
        }

        let mut finals = state.resolved.clone();
        for task in &state.tasks {
            let winner = task.current.filter(|_| task.error.is_none());
            for (&t, preds) in finals.iter_mut() {
                if Some(t) != winner {
                    preds.retain(|p| !p.matched.is_some_and(|r| r.overlaps(&task.task.range)));
                }
            }
            if let Some(e) = &task.error {
                store.push(record(
                    None,
                    StoreBody::Error { request: Stage::Disambiguation, request_id: e.request_id().to_string(), message: e.to_string() },
                ));
                failures.push(e.clone());
            }
            store.push(record(None, StoreBody::Disambiguation { task: task.task.clone(), rounds: task.rounds.clone(), winner }));
        }
        for (t, labels) in finals {
            store.push(record(Some(t), StoreBody::Final { labels }));
        }
    }
    PipelineRun { store, failures }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    /// Answered generation queries per type.
    pub queries: BTreeMap<EntityType, usize>,
    /// Share of answered queries whose items all restate the type noun.
    pub echo_rate: BTreeMap<EntityType, f64>,
    /// Share of answer items matching no sentence window at the stored threshold.
    pub unmatched_rate: Option<f64>,
    pub empty_answer_count: usize,
    pub errored_requests: usize,
    pub disambiguations: usize,
    pub unresolved_disambiguations: usize,
}

pub fn diagnostics(store: &PredictionStore) -> Diagnostics {
    let mut diag = Diagnostics::default();
    let mut echoes: BTreeMap<EntityType, usize> = BTreeMap::new();
    let (mut items_total, mut items_unmatched) = (0usize, 0usize);
    for record in store.records() {
        match (&record.body, record.entity_type) {
            (StoreBody::Matches { predictions, .. }, Some(t)) => {
                *diag.queries.entry(t).or_default() += 1;
                if !predictions.is_empty() && predictions.iter().all(|p| p.echoes_entity_name) {
                    *echoes.entry(t).or_default() += 1;
                }
                items_total += predictions.len();
                items_unmatched += predictions.iter().filter(|p| p.matched.is_none()).count();
            }
            (StoreBody::Items { items }, _) if items.is_empty() => diag.empty_answer_count += 1,
            (StoreBody::Error { .. }, _) => diag.errored_requests += 1,
            (StoreBody::Disambiguation { winner, .. }, _) => {
                diag.disambiguations += 1;
                if winner.is_none() {
                    diag.unresolved_disambiguations += 1;
                }
            }
            _ => {}
        }
    }
    diag.echo_rate = diag.queries.iter().map(|(&t, &n)| (t, echoes.get(&t).copied().unwrap_or(0) as f64 / n as f64)).collect();
    diag.unmatched_rate = (items_total > 0).then(|| items_unmatched as f64 / items_total as f64);
    diag
}
