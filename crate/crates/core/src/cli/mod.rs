//! Argument parsing, config layering and exit-code policy.

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use lmdx::config::{ClientKind, PipelineConfig};
use lmdx::prompt::CoordinateScheme;

mod commands;

#[derive(Debug, Parser)]
#[command(name = "lmdx", version, about = "Layout-aware entity extraction with a text-only language model")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML pipeline config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Coordinate scheme as `level:style:buckets[:indentN]`, e.g. `line:center_2:100`.
    #[arg(long, global = true)]
    pub scheme: Option<CoordinateScheme>,
    /// Prompt token budget per chunk.
    #[arg(long, global = true)]
    pub limit: Option<usize>,
    /// Completions sampled per prompt.
    #[arg(long = "samples", global = true, value_name = "K")]
    pub samples: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Completion backend: replay, http or static.
    #[arg(long, global = true)]
    pub client: Option<ClientKind>,
    /// Documents processed concurrently.
    #[arg(long, global = true, value_name = "N")]
    pub parallel: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Extraction schema file.
    #[arg(long, global = true)]
    pub schema: Option<PathBuf>,
    /// Replay fixture for the replay client and `decode`.
    #[arg(long, global = true)]
    pub fixture: Option<PathBuf>,
    /// Endpoint of the http client.
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split documents into prompt-sized chunks and write a chunk manifest.
    Chunk {
        #[arg(required = true)]
        docs: Vec<PathBuf>,
    },
    /// Render one prompt file per chunk of a manifest.
    Prompt { manifest: PathBuf },
    /// Chunk, prompt, sample and decode documents end to end.
    Extract {
        #[arg(required = true)]
        docs: Vec<PathBuf>,
        /// Also write the sampled completions as a replay fixture.
        #[arg(long)]
        save_completions: bool,
    },
    /// Decode recorded completions for the chunks of a manifest.
    Decode { manifest: PathBuf },
    /// Score extractions against groundtruth.
    Eval {
        /// Groundtruth file.
        #[arg(long)]
        gold: PathBuf,
        /// Extraction files or directories of `*.extraction.json`.
        #[arg(required = true)]
        preds: Vec<PathBuf>,
    },
    /// Prompt and target token lengths per coordinate scheme.
    Stats {
        #[arg(required = true)]
        docs: Vec<PathBuf>,
        /// Comma-separated schemes; defaults to the standard comparison set.
        #[arg(long, value_delimiter = ',')]
        schemes: Vec<CoordinateScheme>,
        /// Groundtruth file, for target lengths.
        #[arg(long)]
        gold: Option<PathBuf>,
    },
    /// Assemble a prompt with solved exemplars from a pool.
    Icl {
        /// Pool file listing exemplar documents and completions.
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, value_enum, default_value_t = Method::Nearest)]
        method: Method,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    Random,
    Nearest,
}

impl GlobalArgs {
    /// Config file, then flags, then validation.
    pub fn resolve(&self) -> anyhow::Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::load(p).map_err(lmdx::Error::from)?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = &self.scheme {
            c.scheme = *s;
        }
        if let Some(l) = self.limit {
            c.chunking.limit = Some(l);
        }
        if let Some(k) = self.samples {
            c.sampling.num_samples = k;
        }
        if let Some(s) = self.seed {
            c.sampling.seed = s;
        }
        if let Some(k) = self.client {
            c.client.kind = k;
        }
        if let Some(n) = self.parallel {
            c.runtime.parallel = n;
        }
        if let Some(o) = &self.out {
            c.paths.out = Some(o.clone());
        }
        if let Some(s) = &self.schema {
            c.paths.schema = Some(s.clone());
        }
        if let Some(f) = &self.fixture {
            c.client.fixture = Some(f.clone());
        }
        if let Some(e) = &self.endpoint {
            c.client.endpoint = Some(e.clone());
        }
        c.validate().map_err(lmdx::Error::from)?;
        Ok(c)
    }
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Default)]
pub struct Outcome {
    pub failures: usize,
}

/// Reports a per-document failure on stderr as one JSON line.
pub fn report_failure(kind: &str, item: &str, message: &str) {
    eprintln!("{}", json!({ "error": kind, "item": item, "message": message }));
}

pub fn error_kind(err: &anyhow::Error) -> &'static str {
    if let Some(e) = err.downcast_ref::<lmdx::Error>() {
        e.kind()
    } else if err.downcast_ref::<std::io::Error>().is_some() {
        "io"
    } else if err.downcast_ref::<serde_json::Error>().is_some() {
        "json"
    } else {
        "fatal"
    }
}

pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": "usage", "message": e.to_string().trim_end() }));
            return ExitCode::from(2);
        }
    };
    let result = cli.global.resolve().context("loading configuration").and_then(|config| commands::dispatch(cli.command, &config));
    match result {
        Ok(o) if o.failures == 0 => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{}", json!({ "error": error_kind(&e), "message": format!("{e:#}") }));
            ExitCode::from(2)
        }
    }
}
