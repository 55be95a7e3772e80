//! Run configuration: a TOML file overlaid with command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use histner::backend::{DEFAULT_MAX_NEW_TOKENS, DEFAULT_PARALLELISM};
use histner::corpus::Language;
use histner::extraction::DEFAULT_MATCHING_THRESHOLD;
use histner::metrics::{DEFAULT_PERIOD_THRESHOLD, DEFAULT_THRESHOLDS};
use histner::probing::{DEFAULT_DATE_PROBE_TOKENS, DEFAULT_SENTENCES_PER_LANGUAGE};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub out: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub matching_threshold: Option<f64>,
    pub thresholds: Option<Vec<f64>>,
    pub period_threshold: Option<f64>,
    pub parallelism: Option<usize>,
    pub seed: Option<u64>,
    pub max_new_tokens: Option<u32>,
    pub date_probe_tokens: Option<usize>,
    #[serde(default)]
    pub corpus: BTreeMap<String, Vec<PathBuf>>,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub wili: WiliSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub kind: Option<String>,
    pub url: Option<String>,
    pub mock_script: Option<PathBuf>,
    pub timeout_secs: Option<u64>,
    pub max_attempts: Option<u32>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WiliSection {
    pub sentences: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub tsv: Option<PathBuf>,
    pub per_language: Option<usize>,
}

/// Values given on the command line; each one beats the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub backend_url: Option<String>,
    pub mock_script: Option<PathBuf>,
    pub threshold: Option<f64>,
    pub thresholds: Option<Vec<f64>>,
    pub parallelism: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendKind {
    Http { url: String, timeout_secs: u64, max_attempts: u32 },
    Mock { script: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub enum WiliSource {
    Pair { sentences: PathBuf, labels: PathBuf },
    Tsv(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus: BTreeMap<Language, Vec<PathBuf>>,
    pub backend: Option<BackendKind>,
    pub templates: Option<PathBuf>,
    pub matching_threshold: f64,
    pub thresholds: Vec<f64>,
    pub period_threshold: f64,
    pub parallelism: usize,
    pub cache: PathBuf,
    pub seed: u64,
    pub out: PathBuf,
    pub max_new_tokens: u32,
    pub date_probe_tokens: usize,
    pub wili: Option<WiliSource>,
    pub wili_per_language: usize,
}

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

fn check_threshold(name: &str, t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        bail!("{name} must lie in [0, 1], got {t}");
    }
    Ok(())
}

impl RunConfig {
    /// Reads the optional config file and applies flag overrides. Relative
    /// paths in the file resolve against the file's directory.
    pub fn load(path: Option<&Path>, overrides: Overrides) -> Result<RunConfig> {
        let (file, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                let file: FileConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
                (file, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (FileConfig::default(), PathBuf::new()),
        };
        RunConfig::from_parts(file, &base, overrides)
    }

    pub fn from_parts(file: FileConfig, base: &Path, o: Overrides) -> Result<RunConfig> {
        let mut corpus = BTreeMap::new();
        for (code, paths) in file.corpus {
            let lang: Language = code.parse().with_context(|| format!("corpus key {code:?}"))?;
            corpus.insert(lang, paths.into_iter().map(|p| resolve(base, p)).collect());
        }

        let url = o.backend_url.clone().or(file.backend.url.clone());
        let mock_script = o.mock_script.clone().or_else(|| file.backend.mock_script.clone().map(|p| resolve(base, p)));
        let timeout_secs = file.backend.timeout_secs.unwrap_or(60);
        let max_attempts = file.backend.max_attempts.unwrap_or(3);
        let kind = if o.mock_script.is_some() {
            Some("mock")
        } else if o.backend_url.is_some() {
            Some("http")
        } else {
            file.backend.kind.as_deref()
        };
        let backend = match kind {
            Some("mock") => mock_script.map(|script| BackendKind::Mock { script }),
            Some("http") => url.map(|url| BackendKind::Http { url, timeout_secs, max_attempts }),
            Some(other) => bail!("backend.kind must be \"http\" or \"mock\", got {other:?}"),
            None => match (mock_script, url) {
                (Some(script), _) => Some(BackendKind::Mock { script }),
                (None, Some(url)) => Some(BackendKind::Http { url, timeout_secs, max_attempts }),
                (None, None) => None,
            },
        };

        let wili = match (file.wili.tsv, file.wili.sentences, file.wili.labels) {
            (Some(tsv), _, _) => Some(WiliSource::Tsv(resolve(base, tsv))),
            (None, Some(s), Some(l)) => Some(WiliSource::Pair { sentences: resolve(base, s), labels: resolve(base, l) }),
            _ => None,
        };

        let out = o.out.clone().or_else(|| file.out.map(|p| resolve(base, p))).unwrap_or_else(|| PathBuf::from("out"));
        let cache = o.cache.clone().or_else(|| file.cache.map(|p| resolve(base, p))).unwrap_or_else(|| out.join("cache.jsonl"));

        let config = RunConfig {
            corpus,
            backend,
            templates: o.templates.clone().or_else(|| file.templates.map(|p| resolve(base, p))),
            matching_threshold: o.threshold.or(file.matching_threshold).unwrap_or(DEFAULT_MATCHING_THRESHOLD),
            thresholds: o.thresholds.clone().or(file.thresholds).unwrap_or_else(|| DEFAULT_THRESHOLDS.to_vec()),
            period_threshold: file.period_threshold.unwrap_or(DEFAULT_PERIOD_THRESHOLD),
            parallelism: o.parallelism.or(file.parallelism).unwrap_or(DEFAULT_PARALLELISM),
            cache,
            seed: o.seed.or(file.seed).unwrap_or(0),
            out,
            max_new_tokens: file.max_new_tokens.unwrap_or(DEFAULT_MAX_NEW_TOKENS),
            date_probe_tokens: file.date_probe_tokens.unwrap_or(DEFAULT_DATE_PROBE_TOKENS),
            wili,
            wili_per_language: file.wili.per_language.unwrap_or(DEFAULT_SENTENCES_PER_LANGUAGE),
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        check_threshold("matching_threshold", self.matching_threshold)?;
        check_threshold("period_threshold", self.period_threshold)?;
        for &t in &self.thresholds {
            check_threshold("thresholds", t)?;
        }
        if self.thresholds.is_empty() {
            bail!("thresholds must not be empty");
        }
        if self.parallelism == 0 {
            bail!("parallelism must be at least 1");
        }
        if self.max_new_tokens == 0 {
            bail!("max_new_tokens must be positive");
        }
        Ok(())
    }
}

/// Parses `0.0,0.1,0.4`.
pub fn parse_threshold_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> FileConfig {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn defaults() {
        let cfg = RunConfig::from_parts(FileConfig::default(), Path::new(""), Overrides::default()).unwrap();
        assert_eq!(cfg.matching_threshold, 0.4);
        assert_eq!(cfg.thresholds, vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]);
        assert_eq!(cfg.parallelism, 4);
        assert_eq!(cfg.cache, PathBuf::from("out/cache.jsonl"));
        assert!(cfg.backend.is_none());
    }

    #[test]
    fn flags_beat_file() {
        let file = parse(
            r#"
            parallelism = 2
            matching_threshold = 0.2
            [backend]
            kind = "http"
            url = "http://file"
            [corpus]
            fr = ["fr.tsv"]
            "#,
        );
        let o = Overrides { parallelism: Some(8), mock_script: Some("m.json".into()), ..Default::default() };
        let cfg = RunConfig::from_parts(file, Path::new("/cfg"), o).unwrap();
        assert_eq!(cfg.parallelism, 8);
        assert_eq!(cfg.matching_threshold, 0.2);
        assert_eq!(cfg.backend, Some(BackendKind::Mock { script: "m.json".into() }));
        assert_eq!(cfg.corpus[&Language::Fr], vec![PathBuf::from("/cfg/fr.tsv")]);
    }

    #[test]
    fn invalid_values_rejected() {
        let bad = |o: Overrides| RunConfig::from_parts(FileConfig::default(), Path::new(""), o).is_err();
        assert!(bad(Overrides { threshold: Some(1.5), ..Default::default() }));
        assert!(bad(Overrides { parallelism: Some(0), ..Default::default() }));
        assert!(bad(Overrides { thresholds: Some(vec![0.1, -0.1]), ..Default::default() }));
        assert!(toml::from_str::<FileConfig>("nonsense_key = 1").is_err());
    }

    #[test]
    fn threshold_lists() {
        assert_eq!(parse_threshold_list("0.0, 0.4").unwrap(), vec![0.0, 0.4]);
        assert!(parse_threshold_list("0.1,x").is_err());
    }
}
