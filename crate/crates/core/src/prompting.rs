//! Prompt templates and rendering.
//!
//! Templates are plain strings with `<sentence>`, `<entity>`, `<text>`,
//! `<type_a>` and `<type_b>` placeholders. Substitution is a single
//! left-to-right pass, so placeholder-like text inside a sentence is never
//! expanded.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::EntityType;

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("cannot render a {0} prompt for an empty sentence")]
    EmptySentence(TemplateKind),
    #[error("disambiguation needs two distinct types, got {0} twice")]
    SameTypes(EntityType),
    #[error("entity {entity:?} does not occur in the sentence")]
    EntityNotInSentence { entity: String },
    #[error("template {key}: {message}")]
    InvalidTemplate { key: String, message: String },
    #[error("template config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("unknown template key {0:?}")]
    UnknownKey(String),
    #[error("cannot read template config: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Generation,
    Disambiguation,
    ProbeLanguage,
    ProbeDate,
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TemplateKind::Generation => "generation",
            TemplateKind::Disambiguation => "disambiguation",
            TemplateKind::ProbeLanguage => "probe_language",
            TemplateKind::ProbeDate => "probe_date",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub kind: TemplateKind,
    pub entity_type: Option<EntityType>,
    pub text: String,
}

impl PromptTemplate {
    fn count(&self, name: &str) -> usize {
        self.text.matches(&format!("<{name}>")).count()
    }

    fn validate(&self, key: &str) -> Result<(), PromptError> {
        let invalid = |message: &str| PromptError::InvalidTemplate { key: key.to_string(), message: message.to_string() };
        match self.kind {
            TemplateKind::Generation | TemplateKind::ProbeLanguage => {
                if self.count("sentence") != 1 {
                    return Err(invalid("must contain <sentence> exactly once"));
                }
            }
            TemplateKind::Disambiguation => {
                if self.count("sentence") == 0 || self.count("entity") == 0 {
                    return Err(invalid("must contain both <sentence> and <entity>"));
                }
                if self.count("type_a") == 0 || self.count("type_b") == 0 {
                    return Err(invalid("must contain both <type_a> and <type_b>"));
                }
            }
            TemplateKind::ProbeDate => {
                if self.count("text") != 1 {
                    return Err(invalid("must contain <text> exactly once"));
                }
            }
        }
        Ok(())
    }

    /// Substitutes placeholders in one pass; unknown `<…>` sequences are kept.
    fn render(&self, values: &[(&str, &str)]) -> String {
        let mut out = String::with_capacity(self.text.len() + 64);
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find('<') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let hit = after.find('>').and_then(|close| {
                let name = &after[..close];
                values.iter().find(|(k, _)| *k == name).map(|(_, v)| (close, *v))
            });
            match hit {
                Some((close, value)) => {
                    out.push_str(value);
                    rest = &after[close + 1..];
                }
                None => {
                    out.push('<');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub kind: TemplateKind,
    pub entity_type: Option<EntityType>,
    /// Free-form pointer to the source (e.g. `doc-id#3`).
    pub reference: Option<String>,
    /// Rendered from empty input.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub provenance: Provenance,
}

/// The full prompt set plus the type nouns used by disambiguation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    generation: BTreeMap<EntityType, PromptTemplate>,
    disambiguation: PromptTemplate,
    probe_language: PromptTemplate,
    probe_date: PromptTemplate,
    nouns: BTreeMap<EntityType, String>,
}

fn default_noun(t: EntityType) -> &'static str {
    match t {
        EntityType::Pers => "person",
        EntityType::Loc => "location",
        EntityType::Org => "organization",
        EntityType::Time => "date",
        EntityType::Prod => "media or doctrine",
    }
}

impl Default for PromptSet {
    fn default() -> Self {
        let generation = EntityType::ALL
            .iter()
            .map(|&t| {
                let text =
                    format!("Input: <sentence>\n In input, what are the names of {}? Separate answers with commas.", default_noun(t));
                (t, PromptTemplate { kind: TemplateKind::Generation, entity_type: Some(t), text })
            })
            .collect();
        PromptSet {
            generation,
            disambiguation: PromptTemplate {
                kind: TemplateKind::Disambiguation,
                entity_type: None,
                text: "Input: <sentence>\n In input, is <entity> a <type_a> or a <type_b>? Give only one answer.".into(),
            },
            probe_language: PromptTemplate {
                kind: TemplateKind::ProbeLanguage,
                entity_type: None,
                text: "<sentence>\n Q:Name the language of the previous sentence.\nA: ".into(),
            },
            probe_date: PromptTemplate {
                kind: TemplateKind::ProbeDate,
                entity_type: None,
                text: "In which year is the following text likely to have been published: text: <text>".into(),
            },
            nouns: EntityType::ALL.iter().map(|&t| (t, default_noun(t).to_string())).collect(),
        }
    }
}

impl PromptSet {
    pub fn noun(&self, t: EntityType) -> &str {
        &self.nouns[&t]
    }

    /// Words that identify a type in free text: the noun and its `or` alternatives.
    pub fn noun_words(&self, t: EntityType) -> Vec<String> {
        let noun = self.noun(t).to_lowercase();
        let mut words: Vec<String> = noun.split(" or ").map(|w| w.trim().to_string()).filter(|w| !w.is_empty()).collect();
        if !words.contains(&noun) {
            words.push(noun);
        }
        words
    }

    pub fn render_generation(&self, sentence: &str, entity_type: EntityType) -> Result<RenderedPrompt, PromptError> {
        if sentence.trim().is_empty() {
            return Err(PromptError::EmptySentence(TemplateKind::Generation));
        }
        Ok(RenderedPrompt {
            text: self.generation[&entity_type].render(&[("sentence", sentence)]),
            provenance: Provenance { kind: TemplateKind::Generation, entity_type: Some(entity_type), reference: None, degenerate: false },
        })
    }

    pub fn render_disambiguation(
        &self,
        sentence: &str,
        entity: &str,
        type_a: EntityType,
        type_b: EntityType,
    ) -> Result<RenderedPrompt, PromptError> {
        if type_a == type_b {
            return Err(PromptError::SameTypes(type_a));
        }
        if entity.is_empty() || !sentence.contains(entity) {
            return Err(PromptError::EntityNotInSentence { entity: entity.to_string() });
        }
        let text = self.disambiguation.render(&[
            ("sentence", sentence),
            ("entity", entity),
            ("type_a", self.noun(type_a)),
            ("type_b", self.noun(type_b)),
        ]);
        Ok(RenderedPrompt {
            text,
            provenance: Provenance { kind: TemplateKind::Disambiguation, entity_type: None, reference: None, degenerate: false },
        })
    }

    pub fn render_language_probe(&self, sentence: &str) -> RenderedPrompt {
        RenderedPrompt {
            text: self.probe_language.render(&[("sentence", sentence)]),
            provenance: Provenance {
                kind: TemplateKind::ProbeLanguage,
                entity_type: None,
                reference: None,
                degenerate: sentence.is_empty(),
            },
        }
    }

    pub fn render_date_probe(&self, text: &str) -> RenderedPrompt {
        RenderedPrompt {
            text: self.probe_date.render(&[("text", text)]),
            provenance: Provenance { kind: TemplateKind::ProbeDate, entity_type: None, reference: None, degenerate: text.is_empty() },
        }
    }

    fn entries(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for t in EntityType::ALL {
            out.push((format!("generation.{t}"), self.generation[&t].text.clone()));
        }
        out.push(("disambiguation".into(), self.disambiguation.text.clone()));
        out.push(("probe.language".into(), self.probe_language.text.clone()));
        out.push(("probe.date".into(), self.probe_date.text.clone()));
        for t in EntityType::ALL {
            out.push((format!("noun.{t}"), self.nouns[&t].clone()));
        }
        out
    }

    /// Flat `key = value` config text; values use `\n`, `\t` and `\\` escapes.
    pub fn to_config(&self) -> String {
        let mut out = String::from("# prompt templates\n");
        for (key, value) in self.entries() {
            out.push_str(&format!("{key} = {}\n", escape(&value)));
        }
        out
    }

    /// Parses a config; keys not mentioned keep their defaults.
    pub fn from_config(text: &str) -> Result<PromptSet, PromptError> {
        let mut set = PromptSet::default();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let trimmed = line.trim_start();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once(" = ")
                .or_else(|| line.split_once('='))
                .ok_or_else(|| PromptError::Config { line: line_no, message: "expected `key = value`".into() })?;
            let key = key.trim();
            let value = unescape(value).map_err(|message| PromptError::Config { line: line_no, message })?;
            set.set(key, value)?;
        }
        set.validate()?;
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<PromptSet, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|e| PromptError::Io(format!("{}: {e}", path.display())))?;
        PromptSet::from_config(&text)
    }

    fn set(&mut self, key: &str, value: String) -> Result<(), PromptError> {
        if let Some(label) = key.strip_prefix("generation.") {
            let t = EntityType::parse_label(label).ok_or_else(|| PromptError::UnknownKey(key.into()))?;
            self.generation.insert(t, PromptTemplate { kind: TemplateKind::Generation, entity_type: Some(t), text: value });
        } else if let Some(label) = key.strip_prefix("noun.") {
            let t = EntityType::parse_label(label).ok_or_else(|| PromptError::UnknownKey(key.into()))?;
            if value.trim().is_empty() {
                return Err(PromptError::InvalidTemplate { key: key.into(), message: "noun must not be empty".into() });
            }
            self.nouns.insert(t, value);
        } else {
            match key {
                "disambiguation" => self.disambiguation.text = value,
                "probe.language" => self.probe_language.text = value,
                "probe.date" => self.probe_date.text = value,
                _ => return Err(PromptError::UnknownKey(key.into())),
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), PromptError> {
        for (t, tpl) in &self.generation {
            tpl.validate(&format!("generation.{t}"))?;
        }
        self.disambiguation.validate("disambiguation")?;
        self.probe_language.validate("probe.language")?;
        self.probe_date.validate("probe.date")
    }
}

fn escape(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for c in value.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(value: &str) -> Result<String, String> {
    let mut out = String::with_capacity(value.len());
    let mut chars = value.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some(other) => return Err(format!("unknown escape \\{other}")),
            None => return Err("dangling backslash".into()),
        }
    }
    Ok(out)
}
