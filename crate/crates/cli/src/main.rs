//! `codec-probe`: command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod commands;
mod output;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use codec_probe::par::{self, Parallelism};


#[derive(Debug, Parser)]
#[command(name = "codec-probe", version, about = "Probe speech attributes inside codec token streams")]
pub struct Cli {
    /// Seed for every random choice (default 42; a spec file's own seed
    /// wins unless this is given).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for corpus statistics and MI cells.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Run every data-parallel step sequentially.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a corpus file and print a summary.
    Validate(ValidateArgs),
    /// Generate a synthetic corpus with known ground truth.
    Synth(SynthArgs),
    /// Co-occurrence counts and predominant mapping for one scale.
    Assoc(AssocArgs),
    /// Top-k usage curves per scale.
    Topk(TopkArgs),
    /// Two-dimensional t-SNE of codebook rows or utterance means.
    Tsne(TsneArgs),
    /// Mutual-information table over scales and attributes.
    Mi(MiArgs),
    /// Train the masked encoder-decoder model.
    Train(TrainArgs),
    /// Predict attribute tokens from codec tokens.
    Analyze(AnalyzeArgs),
    /// Predict codec tokens from attribute tokens.
    Generate(GenerateArgs),
    /// Swap the speaker of every utterance and regenerate codec tokens.
    Convert(ConvertArgs),
    /// Top-k curves, t-SNE plots and the MI table in one directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    SpeechtokenizerLike,
    Deterministic,
    Noise,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON file with generator settings; overrides --preset.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "speechtokenizer-like")]
    pub preset: Preset,
    /// Number of utterances.
    #[arg(long)]
    pub n: usize,
    /// Corpus JSONL output.
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to `ground_truth.json` next to the corpus.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    /// Defaults to `codebook.cbk` next to the corpus.
    #[arg(long)]
    pub codebook: Option<PathBuf>,
    /// Defaults to `categories.csv` next to the corpus.
    #[arg(long)]
    pub categories: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub codebook_dim: usize,
}

#[derive(Debug, Args)]
pub struct AssocArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub scale: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write pitch statistics of frames carrying this content token.
    #[arg(long)]
    pub content_token: Option<u32>,
}

#[derive(Debug, Args)]
pub struct TopkArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Only this scale (default: every scale).
    #[arg(long)]
    pub scale: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub k_max: usize,
    /// Weight codec tokens by frequency instead of equally.
    #[arg(long)]
    pub weighted: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TsneArgs {
    #[arg(long)]
    pub codebook: PathBuf,
    #[arg(long)]
    pub scale: usize,
    /// Corpus used for colouring (codebook mode) or averaging (--utterances).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// `attr_token,category` file.
    #[arg(long)]
    pub categories: Option<PathBuf>,
    /// Project per-utterance mean embeddings labelled by speaker.
    #[arg(long)]
    pub utterances: bool,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    /// Use Barnes-Hut with this theta instead of the exact gradient.
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MiArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Defaults to `mi_report.csv` in the working directory.
    #[arg(long, default_value = "mi_report.csv")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub max_samples: usize,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    /// Comma-separated subset of content,pitch,identity.
    #[arg(long, value_delimiter = ',')]
    pub attributes: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Checkpoint path; the sidecar goes to the same path plus `.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub encoder_blocks: Option<usize>,
    #[arg(long)]
    pub decoder_blocks: Option<usize>,
    /// Per-step losses as `step,loss`.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Content accuracy and pitch AAE against the input attributes.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-scale exact-match rate against the input codec tokens.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Speaker id as it appears in the training corpus.
    #[arg(long)]
    pub target_speaker: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub codebook: Option<PathBuf>,
    #[arg(long)]
    pub categories: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k_max: usize,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 10_000)]
    pub max_samples: usize,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    /// Skip the MI table.
    #[arg(long)]
    pub no_mi: bool,
}

pub struct Context {
    pub seed: u64,
    pub seed_given: bool,
    pub par: Parallelism,
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("CODEC_PROBE_LOG", "info");
    let _ = env_logger::Builder::from_env(env).format_target(false).try_init();
}

fn main() -> ExitCode {
    init_logging();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    log::info!("config: {cli:?}");
    let ctx = Context {
        seed: cli.seed.unwrap_or(42),
        seed_given: cli.seed.is_some(),
        par: if cli.deterministic { Parallelism::Sequential } else { Parallelism::Parallel },
    };
    let threads = cli.threads;
    let command = cli.command;
    match par::with_threads(threads, move || commands::run(&ctx, command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
