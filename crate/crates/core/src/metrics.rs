//! Fuzzy scoring of predictions against gold spans.
//!
//! Strings are NFC-normalized and compared as sequences of Unicode scalar
//! values. The normalized distance divides the edit distance by the length
//! of the longer string.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::corpus::{assign_period, decode_entities, Corpus, EntityType, Language, PeriodBin, Sentence};
use crate::extraction::{best_window, AnswerItem, PredictionStore};

/// Thresholds evaluated by default.
pub const DEFAULT_THRESHOLDS: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
/// Threshold at which period-resolved rows are computed.
pub const DEFAULT_PERIOD_THRESHOLD: f64 = 0.4;

fn scalars(s: &str) -> Vec<char> {
    s.nfc().collect()
}

fn edit_distance(a: &[char], b: &[char]) -> usize {
    if a.len() < b.len() {
        return edit_distance(b, a);
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if ca == cb { diag } else { 1 + diag.min(above).min(row[j]) };
            diag = above;
        }
    }
    row[b.len()]
}

/// Unit-cost edit distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    edit_distance(&scalars(a), &scalars(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distance {
    pub raw: usize,
    pub normalized: f64,
}

impl Distance {
    pub fn between(a: &str, b: &str) -> Distance {
        let (a, b) = (scalars(a), scalars(b));
        let longest = a.len().max(b.len());
        let raw = edit_distance(&a, &b);
        let normalized = if longest == 0 { 0.0 } else { raw as f64 / longest as f64 };
        Distance { raw, normalized }
    }
}

pub fn normalized_levenshtein(a: &str, b: &str) -> f64 {
    Distance::between(a, b).normalized
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, rhs: Counts) {
        self.tp += rhs.tp;
        self.fp += rhs.fp;
        self.fn_ += rhs.fn_;
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// A gold span reduced to what scoring needs.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldMention {
    pub surface: String,
    pub start: usize,
}

/// A prediction for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPrediction {
    pub text: String,
    /// Start of the best sentence window (sentence order), if any window matched.
    pub sentence_start: Option<usize>,
    /// Normalized distance to the best-matching sentence window.
    pub sentence_distance: Option<f64>,
    /// Ordinal within the answer.
    pub position: usize,
}

impl ScoredPrediction {
    /// Whether some sentence window lies within `threshold`.
    pub fn in_sentence(&self, threshold: f64) -> bool {
        self.sentence_distance.is_some_and(|d| d <= threshold)
    }

    fn order_key(&self) -> (usize, usize) {
        (self.sentence_start.unwrap_or(usize::MAX), self.position)
    }
}

/// Builds scoring inputs for answer items against a sentence; sentence
/// matching is unthresholded so one set serves every threshold.
pub fn score_items(items: &[AnswerItem], sentence: &Sentence) -> Vec<ScoredPrediction> {
    items
        .iter()
        .map(|item| {
            let best = best_window(&item.text, sentence);
            ScoredPrediction {
                text: item.text.clone(),
                sentence_start: best.map(|(_, r)| r.start),
                sentence_distance: best.map(|(d, _)| d),
                position: item.position,
            }
        })
        .collect()
}

/// TP/FP/FN for one (sentence, entity type) query.
///
/// Gold/prediction pairs within the threshold are assigned one-to-one,
/// greedily by ascending distance, ties by gold start then prediction
/// order; comparison is case-insensitive. Unassigned predictions with no sentence window inside the
/// threshold are false positives; unassigned golds are false negatives.
pub fn classify(predictions: &[ScoredPrediction], gold: &[GoldMention], threshold: f64) -> Counts {
    let mut gold_order: Vec<usize> = (0..gold.len()).collect();
    gold_order.sort_by_key(|&g| (gold[g].start, g));
    let mut pred_order: Vec<usize> = (0..predictions.len()).collect();
    pred_order.sort_by_key(|&p| predictions[p].order_key());

    let folded: Vec<String> = pred_order.iter().map(|&p| predictions[p].text.to_lowercase()).collect();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (gr, &g) in gold_order.iter().enumerate() {
        let surface = gold[g].surface.to_lowercase();
        for (pr, text) in folded.iter().enumerate() {
            let d = normalized_levenshtein(&surface, text);
            if d <= threshold {
                pairs.push((d, gr, pr));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut gold_used = vec![false; gold.len()];
    let mut pred_used = vec![false; predictions.len()];
    let mut counts = Counts::default();
    for (_, gr, pr) in pairs {
        if !gold_used[gr] && !pred_used[pr] {
            gold_used[gr] = true;
            pred_used[pr] = true;
            counts.tp += 1;
        }
    }
    counts.fn_ = gold.len() - counts.tp;
    counts.fp = pred_order.iter().enumerate().filter(|&(pr, &p)| !pred_used[pr] && !predictions[p].in_sentence(threshold)).count();
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub language: Language,
    pub entity_type: EntityType,
    pub period: Option<PeriodBin>,
    pub threshold: f64,
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricsRow {
    pub fn new(language: Language, entity_type: EntityType, period: Option<PeriodBin>, threshold: f64, counts: Counts) -> Self {
        MetricsRow {
            language,
            entity_type,
            period,
            threshold,
            counts,
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
        }
    }
}

/// Which stored predictions are scored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSource {
    /// Every parsed answer item, before nesting and disambiguation.
    #[default]
    Items,
    /// Only the labels that survived nesting and disambiguation.
    FinalLabels,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub thresholds: Vec<f64>,
    pub period_threshold: f64,
    pub source: EvalSource,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { thresholds: DEFAULT_THRESHOLDS.to_vec(), period_threshold: DEFAULT_PERIOD_THRESHOLD, source: EvalSource::Items }
    }
}

/// Rows per (language, entity type, threshold), then per period at the
/// period threshold. Sentences absent from the store contribute their gold
/// spans as false negatives.
pub fn sweep(store: &PredictionStore, corpus: &Corpus, config: &SweepConfig) -> Vec<MetricsRow> {
    type Key = (Language, EntityType, Option<PeriodBin>, u64);
    let mut cells: BTreeMap<Key, Counts> = BTreeMap::new();
    let languages = corpus.languages();
    let key_t = |t: f64| t.to_bits();

    for &language in &languages {
        for &entity in &EntityType::ALL {
            for &t in &config.thresholds {
                cells.entry((language, entity, None, key_t(t))).or_default();
            }
        }
    }

    for doc in &corpus.documents {
        let period = assign_period(doc).ok();
        if let Some(p) = period {
            for &entity in &EntityType::ALL {
                cells.entry((doc.language, entity, Some(p), key_t(config.period_threshold))).or_default();
            }
        }
        for sentence in &doc.sentences {
            let spans = decode_entities(sentence);
            for &entity in &EntityType::ALL {
                let gold: Vec<GoldMention> = spans
                    .iter()
                    .filter(|s| s.entity_type == entity)
                    .map(|s| GoldMention { surface: s.surface.clone(), start: s.start })
                    .collect();
                let items = match config.source {
                    EvalSource::Items => store.items(&doc.id, sentence.id, entity),
                    EvalSource::FinalLabels => store.final_items(&doc.id, sentence.id, entity),
                };
                let predictions = score_items(&items, sentence);
                for &t in &config.thresholds {
                    *cells.entry((doc.language, entity, None, key_t(t))).or_default() += classify(&predictions, &gold, t);
                }
                if let Some(p) = period {
                    *cells.entry((doc.language, entity, Some(p), key_t(config.period_threshold))).or_default() +=
                        classify(&predictions, &gold, config.period_threshold);
                }
            }
        }
    }

    let mut rows: Vec<MetricsRow> = cells
        .into_iter()
        .map(|((language, entity, period, t), counts)| MetricsRow::new(language, entity, period, f64::from_bits(t), counts))
        .collect();
    // unperiodized rows first, thresholds ascending
    rows.sort_by(|a, b| {
        (a.period.is_some(), a.language, a.entity_type, a.period)
            .cmp(&(b.period.is_some(), b.language, b.entity_type, b.period))
            .then(a.threshold.total_cmp(&b.threshold))
    });
    rows
}

/// Best published coarse literal NER results with fuzzy boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub language: Language,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn baseline_table() -> Vec<BaselineRow> {
    vec![
        BaselineRow { language: Language::En, precision: 0.794, recall: 0.817, f1: 0.806 },
        BaselineRow { language: Language::De, precision: 0.870, recall: 0.886, f1: 0.878 },
        BaselineRow { language: Language::Fr, precision: 0.912, recall: 0.931, f1: 0.921 },
    ]
}
