//! Corpus ingestion for CLEF-HIPE style TSV files.
//!
//! Only the `TOKEN`, `NE-COARSE-LIT` and `MISC` columns are read. Documents
//! are delimited by `# document_id = …` comment lines and carry a
//! `# date = …` comment. Sentences end at a blank line, at a token whose
//! `MISC` column contains `EndOfSentence`, or at the end of the document.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// First publication year covered by the period table.
pub const FIRST_YEAR: i32 = 1790;
/// Years at or after this are parsed but fall outside the period table.
pub const TABLE_END_YEAR: i32 = 1950;
/// Last publication year accepted for a document.
pub const LAST_YEAR: i32 = 2010;
/// Width of a period bin in years.
pub const PERIOD_WIDTH: i32 = 20;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed header, missing column(s) {missing}")]
    MalformedHeader { line: usize, missing: String },
    #[error("line {line}: {message}")]
    MalformedRow { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("duplicate document id {0:?}")]
    DuplicateDocument(String),
    #[error("cannot merge documents of different languages ({0} and {1})")]
    MixedLanguages(Language, Language),
    #[error("publication year {0} precedes {FIRST_YEAR}")]
    YearTooEarly(i32),
    #[error("unknown language code {0:?}")]
    UnknownLanguage(String),
}

/// Problem confined to a single document; the rest of the file still parses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DocumentError {
    pub document_id: String,
    pub line: usize,
    pub message: String,
}

impl fmt::Display for DocumentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "document {} (line {}): {}", self.document_id, self.line, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    De,
    Fr,
}

impl Language {
    pub const ALL: [Language; 3] = [Language::En, Language::De, Language::Fr];

    pub fn code(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::De => "de",
            Language::Fr => "fr",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Language {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "en" | "eng" => Ok(Language::En),
            "de" | "deu" => Ok(Language::De),
            "fr" | "fra" => Ok(Language::Fr),
            other => Err(CorpusError::UnknownLanguage(other.to_string())),
        }
    }
}

/// Coarse entity types of the literal annotation layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EntityType {
    Pers,
    Loc,
    Org,
    Time,
    Prod,
}

impl EntityType {
    /// Fixed order used for prompting and pairwise disambiguation.
    pub const ALL: [EntityType; 5] = [EntityType::Pers, EntityType::Loc, EntityType::Org, EntityType::Time, EntityType::Prod];

    pub fn label(self) -> &'static str {
        match self {
            EntityType::Pers => "PERS",
            EntityType::Loc => "LOC",
            EntityType::Org => "ORG",
            EntityType::Time => "TIME",
            EntityType::Prod => "PROD",
        }
    }

    /// Case-insensitive parse of a bare type label such as `pers` or `LOC`.
    pub fn parse_label(s: &str) -> Option<EntityType> {
        match s.to_ascii_lowercase().as_str() {
            "pers" => Some(EntityType::Pers),
            "loc" => Some(EntityType::Loc),
            "org" => Some(EntityType::Org),
            "time" => Some(EntityType::Time),
            "prod" => Some(EntityType::Prod),
            _ => None,
        }
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IobTag {
    O,
    B(EntityType),
    I(EntityType),
}

impl IobTag {
    /// Parses a coarse-literal cell. Unknown entity labels and placeholder
    /// cells (`_`, empty) map to `O`.
    pub fn parse(cell: &str) -> IobTag {
        let cell = cell.trim();
        let (prefix, rest) = match cell.split_once('-') {
            Some(parts) => parts,
            None => return IobTag::O,
        };
        // fine-grained labels like `loc.adm.town` keep only the coarse head
        let head = rest.split('.').next().unwrap_or(rest);
        match (prefix.to_ascii_uppercase().as_str(), EntityType::parse_label(head)) {
            ("B", Some(t)) => IobTag::B(t),
            ("I", Some(t)) => IobTag::I(t),
            _ => IobTag::O,
        }
    }

    pub fn entity_type(self) -> Option<EntityType> {
        match self {
            IobTag::O => None,
            IobTag::B(t) | IobTag::I(t) => Some(t),
        }
    }
}

impl fmt::Display for IobTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IobTag::O => f.write_str("O"),
            IobTag::B(t) => write!(f, "B-{}", t.label().to_ascii_lowercase()),
            IobTag::I(t) => write!(f, "I-{}", t.label().to_ascii_lowercase()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub index: usize,
    pub coarse_lit_tag: IobTag,
    /// False when the source marked the token `NoSpaceAfter`.
    pub space_after: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: usize,
    pub tokens: Vec<Token>,
}

impl Sentence {
    /// Builds a sentence from `(surface, tag)` pairs with a space after every token.
    pub fn from_tagged<S: Into<String>>(id: usize, tagged: impl IntoIterator<Item = (S, IobTag)>) -> Sentence {
        let tokens = tagged
            .into_iter()
            .enumerate()
            .map(|(index, (surface, coarse_lit_tag))| Token { surface: surface.into(), index, coarse_lit_tag, space_after: true })
            .collect();
        Sentence { id, tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Running text of the sentence, honouring `NoSpaceAfter`.
    pub fn text(&self) -> String {
        join_tokens(&self.tokens)
    }

    /// Text of the inclusive token range `start..=end`.
    pub fn span_text(&self, start: usize, end: usize) -> String {
        join_tokens(&self.tokens[start..=end])
    }

    pub fn tags(&self) -> Vec<IobTag> {
        self.tokens.iter().map(|t| t.coarse_lit_tag).collect()
    }
}

pub(crate) fn join_tokens(tokens: &[Token]) -> String {
    let mut out = String::new();
    for (i, tok) in tokens.iter().enumerate() {
        out.push_str(&tok.surface);
        if tok.space_after && i + 1 < tokens.len() {
            out.push(' ');
        }
    }
    out
}

/// Publication date; only the year is used downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PubDate {
    pub year: i32,
    pub month: Option<u8>,
    pub day: Option<u8>,
}

impl FromStr for PubDate {
    type Err = String;

    /// Accepts `YYYY`, `YYYY-MM` and `YYYY-MM-DD`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let mut parts = s.split('-');
        let year_part = parts.next().unwrap_or("");
        if year_part.len() != 4 || !year_part.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format!("unparseable date {s:?}"));
        }
        let year: i32 = year_part.parse().map_err(|_| format!("unparseable date {s:?}"))?;
        let mut field = |max: u8| -> Result<Option<u8>, String> {
            match parts.next() {
                None => Ok(None),
                Some(p) if p.len() == 2 && p.bytes().all(|b| b.is_ascii_digit()) => {
                    let v: u8 = p.parse().map_err(|_| format!("unparseable date {s:?}"))?;
                    if v == 0 || v > max {
                        Err(format!("unparseable date {s:?}"))
                    } else {
                        Ok(Some(v))
                    }
                }
                Some(_) => Err(format!("unparseable date {s:?}")),
            }
        };
        let month = field(12)?;
        let day = if month.is_some() { field(31)? } else { None };
        if parts.next().is_some() {
            return Err(format!("unparseable date {s:?}"));
        }
        Ok(PubDate { year, month, day })
    }
}

impl fmt::Display for PubDate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}", self.year)?;
        if let Some(m) = self.month {
            write!(f, "-{m:02}")?;
            if let Some(d) = self.day {
                write!(f, "-{d:02}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub language: Language,
    pub date: PubDate,
    pub sentences: Vec<Sentence>,
}

impl Document {
    pub fn year(&self) -> i32 {
        self.date.year
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &Token> {
        self.sentences.iter().flat_map(|s| s.tokens.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub entity_type: EntityType,
    pub start: usize,
    /// Inclusive.
    pub end: usize,
    pub surface: String,
}

impl EntitySpan {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Replaces every `I-X` that does not continue a `B-X`/`I-X` with `B-X`.
pub fn repair_tags(tags: &[IobTag]) -> Vec<IobTag> {
    let mut out = Vec::with_capacity(tags.len());
    let mut prev = IobTag::O;
    for &tag in tags {
        let fixed = match tag {
            IobTag::I(t) if prev.entity_type() != Some(t) => IobTag::B(t),
            other => other,
        };
        out.push(fixed);
        prev = fixed;
    }
    out
}

/// Decodes maximal coarse-literal spans, sorted by start.
pub fn decode_entities(sentence: &Sentence) -> Vec<EntitySpan> {
    decode_tags(&sentence.tags())
        .into_iter()
        .map(|(entity_type, start, end)| EntitySpan { entity_type, start, end, surface: sentence.span_text(start, end) })
        .collect()
}

/// Tag-level decoding: `(type, start, end_inclusive)` triples.
pub fn decode_tags(tags: &[IobTag]) -> Vec<(EntityType, usize, usize)> {
    let mut spans = Vec::new();
    let mut open: Option<(EntityType, usize)> = None;
    for (i, tag) in repair_tags(tags).into_iter().enumerate() {
        match tag {
            IobTag::I(_) => {}
            IobTag::B(t) => {
                if let Some((ot, start)) = open.take() {
                    spans.push((ot, start, i - 1));
                }
                open = Some((t, i));
            }
            IobTag::O => {
                if let Some((ot, start)) = open.take() {
                    spans.push((ot, start, i - 1));
                }
            }
        }
    }
    if let Some((t, start)) = open {
        spans.push((t, start, tags.len() - 1));
    }
    spans
}

/// Inverse of [`decode_tags`] on repaired sequences.
pub fn encode_spans(spans: &[(EntityType, usize, usize)], len: usize) -> Vec<IobTag> {
    let mut tags = vec![IobTag::O; len];
    for &(t, start, end) in spans {
        tags[start] = IobTag::B(t);
        for tag in &mut tags[start + 1..=end] {
            *tag = IobTag::I(t);
        }
    }
    tags
}

/// Documents from one TSV file, plus documents rejected for metadata problems.
#[derive(Debug, Default, Clone)]
pub struct ParsedFile {
    pub documents: Vec<Document>,
    pub rejected: Vec<DocumentError>,
}

struct Columns {
    token: usize,
    coarse_lit: usize,
    misc: Option<usize>,
}

impl Columns {
    fn from_header(line: &str, line_no: usize) -> Result<Columns, CorpusError> {
        let names: Vec<&str> = line.split('\t').map(str::trim).collect();
        let find = |name: &str| names.iter().position(|n| n.eq_ignore_ascii_case(name));
        let token = find("TOKEN");
        let coarse_lit = find("NE-COARSE-LIT");
        match (token, coarse_lit) {
            (Some(token), Some(coarse_lit)) => Ok(Columns { token, coarse_lit, misc: find("MISC") }),
            _ => {
                let mut missing = Vec::new();
                if token.is_none() {
                    missing.push("TOKEN");
                }
                if coarse_lit.is_none() {
                    missing.push("NE-COARSE-LIT");
                }
                Err(CorpusError::MalformedHeader { line: line_no, missing: missing.join(", ") })
            }
        }
    }
}

struct PendingDoc {
    id: String,
    line: usize,
    date: Option<Result<PubDate, String>>,
    sentences: Vec<Sentence>,
    current: Vec<Token>,
}

impl PendingDoc {
    fn close_sentence(&mut self) {
        if !self.current.is_empty() {
            let tokens = std::mem::take(&mut self.current);
            let id = self.sentences.len();
            self.sentences.push(Sentence { id, tokens });
        }
    }

    fn finish(mut self, language: Language, out: &mut ParsedFile) {
        self.close_sentence();
        let date = match self.date {
            Some(Ok(d)) => d,
            Some(Err(message)) => {
                out.rejected.push(DocumentError { document_id: self.id, line: self.line, message });
                return;
            }
            None => {
                out.rejected.push(DocumentError { document_id: self.id, line: self.line, message: "missing `# date` comment".into() });
                return;
            }
        };
        if !(FIRST_YEAR..=LAST_YEAR).contains(&date.year) {
            out.rejected.push(DocumentError {
                document_id: self.id,
                line: self.line,
                message: format!("year {} outside [{FIRST_YEAR}, {LAST_YEAR}]", date.year),
            });
            return;
        }
        out.documents.push(Document { id: self.id, language, date, sentences: self.sentences });
    }
}

fn comment_value<'a>(comment: &'a str, key: &str) -> Option<&'a str> {
    let (k, v) = comment.split_once('=')?;
    (k.trim() == key).then(|| v.trim())
}

/// Parses one HIPE TSV stream. The `language` argument overrides any
/// `# language` comment in the file.
pub fn parse_hipe_tsv<R: BufRead>(reader: R, language: Language) -> Result<ParsedFile, CorpusError> {
    let mut out = ParsedFile::default();
    let mut columns: Option<Columns> = None;
    let mut doc: Option<PendingDoc> = None;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        let trimmed = line.trim();

        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some(id) = comment_value(comment, "document_id") {
                if let Some(prev) = doc.take() {
                    prev.finish(language, &mut out);
                }
                doc = Some(PendingDoc { id: id.to_string(), line: line_no, date: None, sentences: Vec::new(), current: Vec::new() });
            } else if let Some(value) = comment_value(comment, "date") {
                match doc.as_mut() {
                    Some(d) => d.date = Some(value.parse::<PubDate>()),
                    None => {
                        return Err(CorpusError::MalformedRow {
                            line: line_no,
                            message: "`# date` comment before any `# document_id`".into(),
                        })
                    }
                }
            }
            continue;
        }

        if trimmed.is_empty() {
            if let Some(d) = doc.as_mut() {
                d.close_sentence();
            }
            continue;
        }

        let Some(cols) = columns.as_ref() else {
            columns = Some(Columns::from_header(line, line_no)?);
            continue;
        };

        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() <= cols.token.max(cols.coarse_lit) {
            return Err(CorpusError::MalformedRow {
                line: line_no,
                message: format!("expected at least {} columns, found {}", cols.token.max(cols.coarse_lit) + 1, cells.len()),
            });
        }
        let surface = cells[cols.token].trim();
        if surface.is_empty() {
            return Err(CorpusError::MalformedRow { line: line_no, message: "empty token".into() });
        }
        let Some(d) = doc.as_mut() else {
            return Err(CorpusError::MalformedRow { line: line_no, message: "token row before any `# document_id`".into() });
        };
        let misc = cols.misc.and_then(|m| cells.get(m)).copied().unwrap_or("");
        let flags: Vec<&str> = misc.split('|').map(str::trim).collect();
        d.current.push(Token {
            surface: surface.to_string(),
            index: d.current.len(),
            coarse_lit_tag: IobTag::parse(cells[cols.coarse_lit]),
            space_after: !flags.contains(&"NoSpaceAfter"),
        });
        if flags.contains(&"EndOfSentence") {
            d.close_sentence();
        }
    }
    if let Some(d) = doc.take() {
        d.finish(language, &mut out);
    }
    Ok(out)
}

/// Renders documents in the harness's normal form: a three-column TSV that
/// [`parse_hipe_tsv`] reads back to the same documents.
pub fn write_normal_form(documents: &[Document]) -> String {
    let mut out = String::from("TOKEN\tNE-COARSE-LIT\tMISC\n");
    for doc in documents {
        out.push_str(&format!("# language = {}\n", doc.language));
        out.push_str(&format!("# document_id = {}\n", doc.id));
        out.push_str(&format!("# date = {}\n", doc.date));
        for sentence in &doc.sentences {
            for (i, tok) in sentence.tokens.iter().enumerate() {
                let mut flags = Vec::new();
                if !tok.space_after {
                    flags.push("NoSpaceAfter");
                }
                if i + 1 == sentence.tokens.len() {
                    flags.push("EndOfSentence");
                }
                let misc = if flags.is_empty() { "_".to_string() } else { flags.join("|") };
                out.push_str(&format!("{}\t{}\t{}\n", tok.surface, tok.coarse_lit_tag, misc));
            }
        }
    }
    out
}

/// A merged, multi-language document collection with unique ids.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub documents: Vec<Document>,
}

impl Corpus {
    /// Appends documents, rejecting ids already present.
    pub fn extend(&mut self, documents: Vec<Document>) -> Result<(), CorpusError> {
        let mut seen: HashSet<String> = self.documents.iter().map(|d| d.id.clone()).collect();
        for doc in &documents {
            if !seen.insert(doc.id.clone()) {
                return Err(CorpusError::DuplicateDocument(doc.id.clone()));
            }
        }
        self.documents.extend(documents);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn languages(&self) -> Vec<Language> {
        let mut langs: Vec<Language> = self.documents.iter().map(|d| d.language).collect();
        langs.sort();
        langs.dedup();
        langs
    }
}

/// Concatenates the splits of one language (e.g. train then dev).
pub fn merge_splits(splits: Vec<Vec<Document>>) -> Result<Corpus, CorpusError> {
    let mut corpus = Corpus::default();
    let mut language: Option<Language> = None;
    for split in splits {
        for doc in &split {
            match language {
                None => language = Some(doc.language),
                Some(l) if l != doc.language => return Err(CorpusError::MixedLanguages(l, doc.language)),
                _ => {}
            }
        }
        corpus.extend(split)?;
    }
    Ok(corpus)
}

/// Half-open publication interval `[start_year, end_year)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PeriodBin {
    pub start_year: i32,
    pub end_year: i32,
}

impl PeriodBin {
    pub fn containing(year: i32) -> Result<PeriodBin, CorpusError> {
        if year < FIRST_YEAR {
            return Err(CorpusError::YearTooEarly(year));
        }
        let start_year = FIRST_YEAR + PERIOD_WIDTH * ((year - FIRST_YEAR) / PERIOD_WIDTH);
        Ok(PeriodBin { start_year, end_year: start_year + PERIOD_WIDTH })
    }

    /// The eight bins from 1790 to 1950.
    pub fn table_bins() -> Vec<PeriodBin> {
        (FIRST_YEAR..TABLE_END_YEAR)
            .step_by(PERIOD_WIDTH as usize)
            .map(|start_year| PeriodBin { start_year, end_year: start_year + PERIOD_WIDTH })
            .collect()
    }

    /// Whether the bin belongs to the 1790–1950 table.
    pub fn in_table(&self) -> bool {
        self.start_year < TABLE_END_YEAR
    }

    pub fn contains(&self, year: i32) -> bool {
        (self.start_year..self.end_year).contains(&year)
    }
}

impl fmt::Display for PeriodBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.start_year, self.end_year)
    }
}

impl FromStr for PeriodBin {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s.split_once('-').ok_or_else(|| format!("bad period {s:?}"))?;
        let start_year: i32 = a.parse().map_err(|_| format!("bad period {s:?}"))?;
        let end_year: i32 = b.parse().map_err(|_| format!("bad period {s:?}"))?;
        Ok(PeriodBin { start_year, end_year })
    }
}

pub fn assign_period(document: &Document) -> Result<PeriodBin, CorpusError> {
    PeriodBin::containing(document.year())
}

/// One row of the corpus statistics table. `period` is `None` on totals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsRow {
    pub period: Option<PeriodBin>,
    pub language: Language,
    pub n_documents: usize,
    pub n_tokens: usize,
    pub n_entity_tokens: usize,
}

impl StatsRow {
    /// Percentage of tokens covered by a coarse-literal span, absent for empty splits.
    pub fn ne_token_percent(&self) -> Option<f64> {
        (self.n_tokens > 0).then(|| 100.0 * self.n_entity_tokens as f64 / self.n_tokens as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub rows: Vec<StatsRow>,
    /// Documents dated 1950 or later, left out of the table.
    pub out_of_table_documents: usize,
}

fn entity_token_count(doc: &Document) -> usize {
    doc.sentences.iter().flat_map(decode_entities).map(|s| s.len()).sum()
}

/// Per-period and total statistics for every language in the corpus.
pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut cells: BTreeMap<(Language, PeriodBin), (usize, usize, usize)> = BTreeMap::new();
    let mut out_of_table = 0;
    for doc in &corpus.documents {
        let bin = match assign_period(doc) {
            Ok(bin) if bin.in_table() => bin,
            _ => {
                out_of_table += 1;
                continue;
            }
        };
        let cell = cells.entry((doc.language, bin)).or_default();
        cell.0 += 1;
        cell.1 += doc.token_count();
        cell.2 += entity_token_count(doc);
    }

    let mut rows = Vec::new();
    for language in corpus.languages() {
        let mut total = StatsRow { period: None, language, n_documents: 0, n_tokens: 0, n_entity_tokens: 0 };
        for bin in PeriodBin::table_bins() {
            let (n_documents, n_tokens, n_entity_tokens) = cells.get(&(language, bin)).copied().unwrap_or_default();
            total.n_documents += n_documents;
            total.n_tokens += n_tokens;
            total.n_entity_tokens += n_entity_tokens;
            rows.push(StatsRow { period: Some(bin), language, n_documents, n_tokens, n_entity_tokens });
        }
        rows.push(total);
    }
    CorpusStats { rows, out_of_table_documents: out_of_table }
}

pub const STATS_CSV_HEADER: &str = "period,language,documents,tokens,ne_percent";

/// CSV rendering; totals use the period label `total`, empty splits leave
/// `ne_percent` blank.
pub fn stats_csv(stats: &CorpusStats) -> String {
    let mut out = format!("{STATS_CSV_HEADER}\n");
    for row in &stats.rows {
        let period = row.period.map_or_else(|| "total".to_string(), |p| p.to_string());
        let pct = row.ne_token_percent().map_or_else(String::new, |p| format!("{p:.1}"));
        out.push_str(&format!("{period},{},{},{},{pct}\n", row.language, row.n_documents, row.n_tokens));
    }
    out
}
