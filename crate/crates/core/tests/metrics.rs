use histner::corpus::{IobTag, Sentence};
use histner::metrics::*;
use proptest::prelude::*;
use unicode_normalization::UnicodeNormalization;

/// Full-matrix edit distance over NFC scalars.
fn oracle_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.nfc().collect();
    let b: Vec<char> = b.nfc().collect();
    let mut m = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in m.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        m[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = m[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            m[i][j] = sub.min(m[i - 1][j] + 1).min(m[i][j - 1] + 1);
        }
    }
    m[a.len()][b.len()]
}

fn text() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!['a', 'b', 'é', 'e', '\u{301}', 'ß', 'Ж', '語', ' ', '😀']), 0..20)
        .prop_map(|cs| cs.into_iter().collect())
}

#[test]
fn known_distances() {
    assert_eq!(levenshtein("kitten", "sitting"), 3);
    assert_eq!(levenshtein("", "abc"), 3);
    assert_eq!(normalized_levenshtein("", ""), 0.0);
    assert_eq!(normalized_levenshtein("abc", ""), 1.0);
    // precomposed and decomposed forms are the same string
    assert_eq!(levenshtein("caf\u{e9}", "cafe\u{301}"), 0);
    assert_eq!(levenshtein("Preußen", "Preussen"), 2);
}

proptest! {
    #[test]
    fn matches_oracle(a in text(), b in text()) {
        prop_assert_eq!(levenshtein(&a, &b), oracle_distance(&a, &b));
    }

    #[test]
    fn metric_axioms(a in text(), b in text(), c in text()) {
        prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
        prop_assert_eq!(levenshtein(&a, &a), 0);
        prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
        let n = normalized_levenshtein(&a, &b);
        prop_assert!((0.0..=1.0).contains(&n));
    }

    #[test]
    fn recall_never_drops_with_threshold(
        gold in prop::collection::vec((text(), 0..6usize), 0..5),
        preds in prop::collection::vec((text(), prop::option::of(0..6usize), prop::option::of(0.0..1.0f64)), 0..6),
    ) {
        let gold: Vec<GoldMention> = gold.into_iter().map(|(surface, start)| GoldMention { surface, start }).collect();
        let preds: Vec<ScoredPrediction> = preds
            .into_iter()
            .enumerate()
            .map(|(position, (text, start, d))| ScoredPrediction { text, sentence_start: start, sentence_distance: d, position })
            .collect();
        let mut last = 0;
        for t in DEFAULT_THRESHOLDS {
            let c = classify(&preds, &gold, t);
            prop_assert!(c.tp >= last);
            prop_assert_eq!(c.tp + c.fn_, gold.len());
            prop_assert!(c.tp + c.fp <= preds.len());
            last = c.tp;
        }
    }
}

fn sentence(words: &[&str]) -> Sentence {
    Sentence::from_tagged(0, words.iter().map(|w| (*w, IobTag::O)))
}

#[test]
fn classification_examples() {
    let s = sentence(&["Le", "général", "Bonaparte", "à", "Paris"]);
    let items = histner::extraction::parse_answer("Bonaparte, Général Bonaparte, Lyon");
    let preds = score_items(&items, &s);
    let gold = [GoldMention { surface: "Bonaparte".into(), start: 2 }];
    // the wider item lies inside the sentence, so it is neither TP nor FP
    assert_eq!(classify(&preds, &gold, 0.4), Counts { tp: 1, fp: 1, fn_: 0 });

    let gold = [GoldMention { surface: "Paris".into(), start: 4 }];
    let preds = score_items(&histner::extraction::parse_answer("Pariss"), &s);
    assert_eq!(classify(&preds, &gold, 0.1), Counts { tp: 0, fp: 1, fn_: 1 });
    assert_eq!(classify(&preds, &gold, 0.2), Counts { tp: 1, fp: 0, fn_: 0 });
}

#[test]
fn one_prediction_serves_one_gold() {
    let s = sentence(&["Paris", "and", "Paris"]);
    let gold = [GoldMention { surface: "Paris".into(), start: 0 }, GoldMention { surface: "Paris".into(), start: 2 }];
    let preds = score_items(&histner::extraction::parse_answer("Paris"), &s);
    assert_eq!(classify(&preds, &gold, 0.0), Counts { tp: 1, fp: 0, fn_: 1 });
}

#[test]
fn ratio_conventions() {
    let zero = Counts::default();
    assert_eq!((zero.precision(), zero.recall(), zero.f1()), (0.0, 0.0, 0.0));
    let c = Counts { tp: 3, fp: 1, fn_: 2 };
    assert_eq!(c.precision(), 0.75);
    assert_eq!(c.recall(), 0.6);
    assert!((c.f1() - 2.0 * 0.75 * 0.6 / 1.35).abs() < 1e-12);
}

#[test]
fn baselines() {
    let rows = baseline_table();
    let got: Vec<_> = rows.iter().map(|r| (r.language.code(), r.precision, r.recall, r.f1)).collect();
    assert_eq!(got, [("en", 0.794, 0.817, 0.806), ("de", 0.870, 0.886, 0.878), ("fr", 0.912, 0.931, 0.921)]);
}
