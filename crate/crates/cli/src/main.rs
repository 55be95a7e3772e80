use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use histner::metrics::EvalSource;
use histner::report::ReportFormat;
use histner_cli::commands::{self, MissingKeys, Outcome};
use histner_cli::config::{parse_threshold_list, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "histner", version, about = "Zero-shot prompted entity recognition for historical newspapers")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Text-generation endpoint.
    #[arg(long, global = true, env = "GENERATION_BACKEND_URL")]
    backend_url: Option<String>,
    /// Answer from a JSON prompt/response script instead of a server.
    #[arg(long, global = true)]
    mock_script: Option<PathBuf>,
    /// Matching threshold used when filtering answer items.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// Comma-separated evaluation thresholds.
    #[arg(long, global = true, value_parser = parse_threshold_list)]
    thresholds: Option<Vec<f64>>,
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Response cache file (default: <out>/cache.jsonl).
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// Prompt template file.
    #[arg(long, global = true)]
    templates: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    Items,
    FinalLabels,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus statistics per period and language.
    Stats,
    /// Prompt the model for every sentence and entity type.
    Run,
    /// Score stored predictions at every threshold.
    Eval {
        #[arg(long, value_enum, default_value = "items")]
        source: Source,
        /// Prediction store (default: <out>/predictions.jsonl).
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Language identification probe on WiLI sentences.
    ProbeLang {
        #[arg(long)]
        per_language: Option<usize>,
    },
    /// Publication year probe on corpus documents.
    ProbeDate {
        #[arg(long)]
        max_tokens: Option<usize>,
    },
    /// Render tables and charts from metrics.json.
    Report {
        #[arg(long, value_delimiter = ',', default_value = "csv,json,svg")]
        format: Vec<ReportFormat>,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Stats => "stats",
            Command::Run => "run",
            Command::Eval { .. } => "eval",
            Command::ProbeLang { .. } => "probe-lang",
            Command::ProbeDate { .. } => "probe-date",
            Command::Report { .. } => "report",
        }
    }
}

fn execute(cli: Cli, cancel: Arc<AtomicBool>) -> Result<Outcome, (u8, serde_json::Value)> {
    let overrides = Overrides {
        backend_url: cli.backend_url,
        mock_script: cli.mock_script,
        threshold: cli.threshold,
        thresholds: cli.thresholds,
        parallelism: cli.parallelism,
        seed: cli.seed,
        out: cli.out,
        cache: cli.cache,
        templates: cli.templates,
    };
    let usage = |e: anyhow::Error| (2, json!({ "status": "usage_error", "message": format!("{e:#}") }));
    let config = RunConfig::load(cli.config.as_deref(), overrides).map_err(usage)?;
    let result = match cli.command {
        Command::Stats => commands::stats(&config),
        Command::Run => commands::run(&config, cancel),
        Command::Eval { source, predictions } => {
            let source = match source {
                Source::Items => EvalSource::Items,
                Source::FinalLabels => EvalSource::FinalLabels,
            };
            commands::eval(&config, predictions.as_deref(), source)
        }
        Command::ProbeLang { per_language } => commands::probe_language(&config, per_language, cancel),
        Command::ProbeDate { max_tokens } => commands::probe_date(&config, max_tokens, cancel),
        Command::Report { format, metrics } => commands::report(&config, metrics.as_deref(), &format),
    };
    result.map_err(|e| match e.downcast_ref::<MissingKeys>() {
        Some(missing) => (2, json!({ "status": "usage_error", "message": e.to_string(), "missing_keys": missing.0 })),
        None => (1, json!({ "status": "failed", "message": format!("{e:#}") })),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = cli.command.name();
    let cancel = Arc::new(AtomicBool::new(false));
    {
        let cancel = cancel.clone();
        // a failed install only means Ctrl-C kills the process outright
        let _ = ctrlc::set_handler(move || cancel.store(true, Ordering::SeqCst));
    }

    match execute(cli, cancel) {
        Ok(outcome) => {
            for path in &outcome.written {
                println!("wrote {}", path.display());
            }
            for w in &outcome.warnings {
                eprintln!("warning: {}", w.message);
            }
            let code = outcome.exit_code();
            if code != 0 {
                let status = if outcome.interrupted { "interrupted" } else { "failed" };
                let summary = json!({ "command": command, "status": status, "errors": outcome.errors });
                eprintln!("{summary}");
            }
            ExitCode::from(code as u8)
        }
        Err((code, mut summary)) => {
            summary["command"] = json!(command);
            eprintln!("{summary}");
            ExitCode::from(code)
        }
    }
}
