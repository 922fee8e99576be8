use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::RunConfig;

/// A malformed invocation or configuration (exit status 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "convact", version, about = "Speech-act and search-action classification for conversational search")]
struct Cli {
    /// Cap on worker threads (0: one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Corpus checks and statistics.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Inter-annotator agreement from item/annotator/label files.
    Kappa(KappaArgs),
    /// Feature extraction.
    #[command(subcommand)]
    Features(FeaturesCommand),
    /// Train one classifier and save it.
    Train(TrainArgs),
    /// Channel ablation over seeds with significance tests.
    Ablate(RunArgs),
    /// Two-stage speech-act then search-action prediction.
    #[command(subcommand)]
    Pipeline(PipelineCommand),
    /// Generate a synthetic corpus from the dialogue grammar.
    Synth(SynthArgs),
    /// Re-render reports from saved ablation results and corpus statistics.
    Report(ReportArgs),
}

#[derive(Subcommand, Debug)]
enum CorpusCommand {
    /// Check structural invariants; exits 1 when violations are found.
    Validate { path: PathBuf },
    /// Label and size statistics.
    Stats {
        path: PathBuf,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
        /// Also write label-distribution charts to this directory.
        #[arg(long)]
        charts: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum FeaturesCommand {
    /// Fit a feature schema and write it with token annotations and encoded
    /// instances.
    Extract(RunArgs),
}

#[derive(Subcommand, Debug)]
enum PipelineCommand {
    /// Predict speech acts, then search actions from the predicted acts.
    Run(PipelineArgs),
}

/// Options shared by commands that read a run configuration. Flags take
/// precedence over `--config`; `--set` applies last.
#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    /// Flat JSON configuration with dotted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus file (TSV or JSONL); repeat to concatenate.
    #[arg(long)]
    corpus: Vec<PathBuf>,
    /// speech or search.
    #[arg(long)]
    task: Option<String>,
    /// Channel set, e.g. meta,linguistic,bert.
    #[arg(long)]
    channels: Option<String>,
    /// Seeds, e.g. 1..30 or 1,2,3.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Precomputed token-annotation TSV.
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Contextual encoder: none or stub.
    #[arg(long)]
    encoder: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any config key, e.g. --set model.hidden_units=32.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Train on every instance instead of the training split.
    #[arg(long)]
    all: bool,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    speech_model: PathBuf,
    #[arg(long)]
    search_model: PathBuf,
}

#[derive(Args, Debug)]
struct KappaArgs {
    /// Speech-act annotation file (item_id, annotator_id, label).
    #[arg(long)]
    speech: Option<PathBuf>,
    /// Search-action annotation file.
    #[arg(long)]
    search: Option<PathBuf>,
    /// Write kappa.tsv and kappa.md here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 75)]
    sessions: u64,
    /// Upper bound on utterances per session.
    #[arg(long, default_value_t = 30)]
    turns: usize,
    #[arg(long, default_value_t = 1)]
    first_seed: u64,
    /// Grammar JSON; the built-in grammar when absent.
    #[arg(long)]
    grammar: Option<PathBuf>,
    /// Write the grammar in use to this file.
    #[arg(long)]
    dump_grammar: Option<PathBuf>,
    /// Corpus file to write (.tsv or .jsonl).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Saved ablation result (ablation.json); repeatable.
    #[arg(long)]
    ablation: Vec<PathBuf>,
    /// Corpus whose label distributions are charted.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

impl RunArgs {
    pub fn resolve(&self, jobs: usize) -> Result<RunConfig, UsageError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if !self.corpus.is_empty() {
            c.corpus = self.corpus.clone();
        }
        let s = |v: &str| serde_json::Value::String(v.to_string());
        if let Some(v) = &self.task {
            c.set("task", &s(v))?;
        }
        if let Some(v) = &self.channels {
            c.set("channels", &s(v))?;
        }
        if let Some(v) = &self.seeds {
            c.seeds = config::parse_seeds(v)?;
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = &self.annotations {
            c.annotations = Some(v.clone());
        }
        if let Some(v) = &self.encoder {
            c.encoder = v.clone();
        }
        if let Some(v) = &self.out {
            c.output = v.clone();
        }
        if jobs > 0 {
            c.jobs = jobs;
        }
        for assignment in &self.set {
            c.set_str(assignment)?;
        }
        if c.corpus.is_empty() {
            return Err(UsageError("no corpus given (use --corpus or the `corpus` config key)".into()));
        }
        Ok(c)
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global()?;
    }
    let jobs = cli.jobs;
    match cli.command {
        Command::Corpus(CorpusCommand::Validate { path }) => commands::corpus_validate(&path),
        Command::Corpus(CorpusCommand::Stats { path, json, charts }) => commands::corpus_stats(&path, json, charts.as_deref()),
        Command::Kappa(a) => commands::kappa(a.speech.as_deref(), a.search.as_deref(), a.out.as_deref()),
        Command::Features(FeaturesCommand::Extract(a)) => commands::features_extract(&a.resolve(jobs)?),
        Command::Train(a) => commands::train(&a.run.resolve(jobs)?, a.all),
        Command::Ablate(a) => commands::ablate(&a.resolve(jobs)?),
        Command::Pipeline(PipelineCommand::Run(a)) => {
            commands::pipeline_run(&a.run.resolve(jobs)?, &a.speech_model, &a.search_model)
        }
        Command::Synth(a) => commands::synth(
            a.sessions,
            a.turns,
            a.first_seed,
            a.grammar.as_deref(),
            a.dump_grammar.as_deref(),
            &a.out,
        ),
        Command::Report(a) => commands::report(&a.ablation, a.corpus.as_deref(), &a.out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            if let Some(u) = e.downcast_ref::<UsageError>() {
                eprintln!("error: {u}");
                eprintln!("Run `convact --help` for usage.");
                return ExitCode::from(2);
            }
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
