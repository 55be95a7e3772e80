//! Metrics report rendering: CSV, JSON and SVG line charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{EntityType, Language, PeriodBin};
use crate::metrics::{BaselineRow, Counts, EvalSource, MetricsRow};

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("unknown report format {0:?} (expected csv, json or svg)")]
    UnknownFormat(String),
    #[error("metrics CSV line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("metrics JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

impl FromStr for ReportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(ReportError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    Precision,
    Recall,
    F1,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Precision, Metric::Recall, Metric::F1];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Precision => "precision",
            Metric::Recall => "recall",
            Metric::F1 => "f1",
        }
    }

    fn of(self, row: &MetricsRow) -> f64 {
        match self {
            Metric::Precision => row.precision,
            Metric::Recall => row.recall,
            Metric::F1 => row.f1,
        }
    }
}

pub const METRICS_CSV_HEADER: &str = "language,entity,period,threshold,tp,fp,fn,precision,recall,f1";

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = format!("{METRICS_CSV_HEADER}\n");
    for r in rows {
        let period = r.period.map(|p| p.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{:.3},{},{},{},{:.3},{:.3},{:.3}",
            r.language, r.entity_type, period, r.threshold, r.counts.tp, r.counts.fp, r.counts.fn_, r.precision, r.recall, r.f1
        );
    }
    out
}

/// Reads a metrics CSV; float columns carry their 3-decimal values.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>, ReportError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == METRICS_CSV_HEADER => {}
        _ => return Err(ReportError::Csv { line: 1, message: format!("expected header `{METRICS_CSV_HEADER}`") }),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let err = |message: String| ReportError::Csv { line: line_no, message };
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 10 {
            return Err(err(format!("expected 10 fields, found {}", cells.len())));
        }
        let language: Language = cells[0].parse().map_err(|e: crate::corpus::CorpusError| err(e.to_string()))?;
        let entity_type = EntityType::parse_label(cells[1]).ok_or_else(|| err(format!("unknown entity {:?}", cells[1])))?;
        let period = if cells[2].is_empty() { None } else { Some(cells[2].parse::<PeriodBin>().map_err(err)?) };
        let float = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}")));
        let int = |s: &str| s.parse::<usize>().map_err(|e| err(format!("{s:?}: {e}")));
        rows.push(MetricsRow {
            language,
            entity_type,
            period,
            threshold: float(cells[3])?,
            counts: Counts { tp: int(cells[4])?, fp: int(cells[5])?, fn_: int(cells[6])? },
            precision: float(cells[7])?,
            recall: float(cells[8])?,
            f1: float(cells[9])?,
        });
    }
    Ok(rows)
}

pub const BASELINE_CSV_HEADER: &str = "language,precision,recall,f1";

pub fn baselines_csv(rows: &[BaselineRow]) -> String {
    let mut out = format!("{BASELINE_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{:.3},{:.3},{:.3}", r.language, r.precision, r.recall, r.f1);
    }
    out
}

/// Choices that shape the numbers, carried alongside them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub thresholds: Vec<f64>,
    pub period_threshold: f64,
    pub source: EvalSource,
    /// False positives are counted per answer item.
    pub fp_counting: String,
    pub string_comparison: String,
    /// Step-2 filter threshold of the run being evaluated, when known.
    #[serde(default)]
    pub matching_threshold: Option<f64>,
}

impl ReportMetadata {
    pub fn new(thresholds: Vec<f64>, period_threshold: f64, source: EvalSource) -> Self {
        ReportMetadata {
            thresholds,
            period_threshold,
            source,
            fp_counting: "per_item".into(),
            string_comparison: "nfc, case-insensitive, normalized levenshtein".into(),
            matching_threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metadata: ReportMetadata,
    pub rows: Vec<MetricsRow>,
    pub baselines: Vec<BaselineRow>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        serde_json::from_str(text).map_err(|e| ReportError::Json(e.to_string()))
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Series {
    key: String,
    points: Vec<(f64, f64)>,
}

fn svg_chart(title: &str, x_labels: &[(f64, String)], x_range: (f64, f64), series: &[Series]) -> String {
    let (x0, x1) = x_range;
    let span = if x1 > x0 { x1 - x0 } else { 1.0 };
    let sx = |x: f64| MARGIN + (x - x0) / span * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - y * (HEIGHT - 2.0 * MARGIN);

    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#);
    let _ = writeln!(out, r#"<title>{}</title>"#, xml_escape(title));
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, xml_escape(title));
    let _ = writeln!(
        out,
        r#"<line x1="{MARGIN}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{}" stroke="black"/>"#,
        HEIGHT - MARGIN,
        WIDTH - MARGIN,
        HEIGHT - MARGIN,
        HEIGHT - MARGIN
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(out, r#"<text x="{}" y="{:.1}" text-anchor="end" font-size="10">{tick:.2}</text>"#, MARGIN - 5.0, sy(tick) + 3.0);
    }
    for (x, label) in x_labels {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle" font-size="10">{}</text>"#,
            sx(*x),
            HEIGHT - MARGIN + 15.0,
            xml_escape(label)
        );
    }
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        let _ = writeln!(
            out,
            r#"<polyline data-series="{}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            xml_escape(&s.key),
            points.join(" ")
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="11" fill="{color}">{}</text>"#,
            WIDTH - MARGIN + 5.0,
            MARGIN + 14.0 * i as f64,
            xml_escape(&s.key)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// One polyline per language: `metric` against threshold for one entity type.
pub fn threshold_chart(rows: &[MetricsRow], metric: Metric, entity: EntityType) -> String {
    let mut by_lang: BTreeMap<Language, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.period.is_none() && r.entity_type == entity) {
        by_lang.entry(r.language).or_default().push((r.threshold, metric.of(r)));
    }
    let mut thresholds: Vec<f64> = by_lang.values().flatten().map(|p| p.0).collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let range = (thresholds.first().copied().unwrap_or(0.0), thresholds.last().copied().unwrap_or(1.0));
    let labels: Vec<(f64, String)> = thresholds.iter().map(|&t| (t, format!("{t:.1}"))).collect();
    let series: Vec<Series> = by_lang
        .into_iter()
        .map(|(lang, mut points)| {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series { key: lang.to_string(), points }
        })
        .collect();
    svg_chart(&format!("{} {} by threshold", entity, metric.name()), &labels, range, &series)
}

/// One polyline per `language@threshold` series across period bins.
pub fn period_chart(rows: &[MetricsRow], metric: Metric, entity: EntityType) -> String {
    let mut by_key: BTreeMap<(Language, u64), Vec<(f64, f64)>> = BTreeMap::new();
    let mut bins: Vec<PeriodBin> = Vec::new();
    for r in rows.iter().filter(|r| r.entity_type == entity) {
        if let Some(p) = r.period {
            by_key.entry((r.language, r.threshold.to_bits())).or_default().push((f64::from(p.start_year), metric.of(r)));
            bins.push(p);
        }
    }
    bins.sort();
    bins.dedup();
    let range = (bins.first().map_or(0.0, |b| f64::from(b.start_year)), bins.last().map_or(1.0, |b| f64::from(b.start_year)));
    let labels: Vec<(f64, String)> = bins.iter().map(|b| (f64::from(b.start_year), b.to_string())).collect();
    let series: Vec<Series> = by_key
        .into_iter()
        .map(|((lang, t), mut points)| {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series { key: format!("{lang}@{:.1}", f64::from_bits(t)), points }
        })
        .collect();
    svg_chart(&format!("{} {} by period", entity, metric.name()), &labels, range, &series)
}

/// Files making up a report in the given format, as `(file name, contents)`.
pub fn render(report: &MetricsReport, format: ReportFormat) -> Vec<(String, String)> {
    match format {
        ReportFormat::Csv => {
            vec![("metrics.csv".into(), metrics_csv(&report.rows)), ("baselines.csv".into(), baselines_csv(&report.baselines))]
        }
        ReportFormat::Json => vec![("metrics.json".into(), report.to_json())],
        ReportFormat::Svg => {
            let mut files = Vec::new();
            for metric in Metric::ALL {
                for entity in EntityType::ALL {
                    let stem = format!("{}_{}", metric.name(), entity.label().to_ascii_lowercase());
                    files.push((format!("{stem}_by_threshold.svg"), threshold_chart(&report.rows, metric, entity)));
                    if report.rows.iter().any(|r| r.period.is_some()) {
                        files.push((format!("{stem}_by_period.svg"), period_chart(&report.rows, metric, entity)));
                    }
                }
            }
            files
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::baseline_table;

    fn rows() -> Vec<MetricsRow> {
        let mut rows = Vec::new();
        for lang in [Language::En, Language::Fr] {
            for (i, t) in [0.0, 0.4].into_iter().enumerate() {
                rows.push(MetricsRow::new(lang, EntityType::Loc, None, t, Counts { tp: i + 1, fp: 1, fn_: 2 }));
            }
            rows.push(MetricsRow::new(
                lang,
                EntityType::Loc,
                Some(PeriodBin { start_year: 1790, end_year: 1810 }),
                0.4,
                Counts { tp: 1, fp: 0, fn_: 1 },
            ));
        }
        rows
    }

    #[test]
    fn csv_layout_and_round_trip() {
        let csv = metrics_csv(&rows());
        assert!(csv.starts_with("language,entity,period,threshold,tp,fp,fn,precision,recall,f1\nen,LOC,,0.000,1,1,2,0.500,0.333,0.400\n"));
        assert!(csv.contains("en,LOC,1790-1810,0.400,1,0,1,1.000,0.500,0.667\n"));
        assert_eq!(metrics_csv(&parse_metrics_csv(&csv).unwrap()), csv);
        assert!(parse_metrics_csv("bad header\n").is_err());
    }

    #[test]
    fn json_round_trip() {
        let report = MetricsReport {
            metadata: ReportMetadata::new(vec![0.0, 0.4], 0.4, EvalSource::Items),
            rows: rows(),
            baselines: baseline_table(),
        };
        assert_eq!(MetricsReport::from_json(&report.to_json()).unwrap(), report);
    }

    #[test]
    fn svg_has_one_polyline_per_language() {
        let svg = threshold_chart(&rows(), Metric::Precision, EntityType::Loc);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(r#"data-series="en""#));
        assert!(svg.contains(r#"data-series="fr""#));
        let svg = period_chart(&rows(), Metric::F1, EntityType::Loc);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(r#"data-series="en@0.4""#));
    }

    #[test]
    fn format_names() {
        assert_eq!("CSV".parse::<ReportFormat>().unwrap(), ReportFormat::Csv);
        assert_eq!("pdf".parse::<ReportFormat>(), Err(ReportError::UnknownFormat("pdf".into())));
    }
}
