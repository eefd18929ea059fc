//! `kgprompt`: dataset ingestion, prompt generation, inference, scoring and
//! reevaluation for generative knowledge graph completion.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "kgprompt", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a dataset and print its statistics.
    Ingest(DatasetArgs),
    /// Build prompts for one split.
    GenDataset(GenArgs),
    /// Generate answers for a pipeline file.
    Infer(InferArgs),
    /// Hits@k and hallucination statistics for a prediction file.
    Score(ScoreArgs),
    /// Export failures for judging, or fold judgments back into the score.
    Reevaluate {
        #[command(subcommand)]
        action: ReevaluateCommand,
    },
    /// One dataset (and report) per context budget.
    Sweep(SweepArgs),
}

#[derive(Args, Clone)]
pub struct DatasetArgs {
    /// WN18RR, FB15k-237, FB15k-237N, ICEWS14, ICEWS05-15, or any label with --format.
    #[arg(long)]
    pub dataset: String,
    /// Directory holding train/valid/test files.
    #[arg(long)]
    pub dir: PathBuf,
    /// Required for datasets outside the known list.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// `identifier \t name` file with entity display names.
    #[arg(long)]
    pub entity_names: Option<PathBuf>,
    /// `identifier \t name` file with relation display names.
    #[arg(long)]
    pub relation_names: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy)]
pub enum FormatArg {
    Static,
    Temporal,
}

#[derive(Args, Clone)]
pub struct PromptArgs {
    /// TOML file with prompt settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Neighbor path depth (0-5).
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub no_negatives: bool,
    #[arg(long)]
    pub no_neighbors: bool,
    /// `entity \t description` file; enables descriptions.
    #[arg(long)]
    pub descriptions: Option<PathBuf>,
    #[arg(long)]
    pub char_cap: Option<usize>,
}

#[derive(Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[command(flatten)]
    pub prompt: PromptArgs,
    /// Budget of negatives + neighbors per prompt.
    #[arg(long = "M")]
    pub budget: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write `{"instruction","input","output"}` lines here.
    #[arg(long)]
    pub trainer_out: Option<PathBuf>,
    /// Per-query subgraph dump (JSONL).
    #[arg(long)]
    pub debug_dump: Option<PathBuf>,
}

#[derive(Args, Clone)]
#[group(id = "backend", required = true, multiple = false)]
pub struct BackendArgs {
    /// OpenAI-compatible base URL, e.g. http://localhost:8000/v1
    #[arg(long, group = "backend")]
    pub endpoint: Option<String>,
    /// `perfect` or `corrupt:<rate>`.
    #[arg(long, group = "backend")]
    pub mock: Option<String>,
}

#[derive(Args, Clone)]
pub struct GenerationArgs {
    #[arg(long, default_value = "default")]
    pub model: String,
    #[arg(long, default_value_t = 0)]
    pub mock_seed: u64,
    /// Environment variable holding the bearer token.
    #[arg(long, default_value = "OPENAI_API_KEY")]
    pub token_env: String,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value_t = 4)]
    pub concurrency: usize,
    #[arg(long, default_value_t = 0.95)]
    pub top_p: f32,
    #[arg(long, default_value_t = 20)]
    pub top_k: u32,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f32,
    /// Sequences per sampling request.
    #[arg(long, default_value_t = 5)]
    pub num_return_sequences: usize,
    #[arg(long, default_value_t = 64)]
    pub max_new_tokens: u32,
    /// Forward top_k to the endpoint (not every API accepts it).
    #[arg(long)]
    pub send_top_k: bool,
    #[arg(long, value_enum, default_value = "first-occurrence")]
    pub ranking: RankingArg,
    #[arg(long, default_value_t = 4)]
    pub max_retries: u32,
    #[arg(long, default_value_t = 120)]
    pub timeout_secs: u64,
}

#[derive(ValueEnum, Clone, Copy)]
pub enum RankingArg {
    FirstOccurrence,
    Frequency,
}

#[derive(Args)]
pub struct InferArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub generation: GenerationArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub preds: PathBuf,
    /// Pipeline file with gold answers.
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,3,10")]
    pub ks: Vec<usize>,
    /// Dataset directory for the hallucination check.
    #[arg(long, requires = "dataset")]
    pub dir: Option<PathBuf>,
    #[arg(long, requires = "dir")]
    pub dataset: Option<String>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long)]
    pub entity_names: Option<PathBuf>,
    /// Write the JSON report here as well.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ReevaluateCommand {
    /// Write every rank-1 miss as a judging row.
    Export(ExportArgs),
    /// Combine judged rows with the run into raw and adjusted Hits@1.
    Adjust(AdjustArgs),
}

#[derive(Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub preds: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AdjustArgs {
    #[arg(long)]
    pub preds: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    /// Output of `reevaluate export`.
    #[arg(long)]
    pub failures: PathBuf,
    /// JSONL rows `{"id","split","verdict_a","verdict_b"}`.
    #[arg(long)]
    pub judgments: PathBuf,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[command(flatten)]
    pub prompt: PromptArgs,
    #[arg(long = "M", value_delimiter = ',', default_value = "0,20,40,60,80,100")]
    pub budgets: Vec<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long, conflicts_with = "endpoint")]
    pub mock: Option<String>,
    #[command(flatten)]
    pub generation: GenerationArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(&a),
        Command::GenDataset(a) => commands::gen_dataset(&a),
        Command::Infer(a) => commands::infer(&a),
        Command::Score(a) => commands::score(&a),
        Command::Reevaluate { action } => match action {
            ReevaluateCommand::Export(a) => commands::reevaluate_export(&a),
            ReevaluateCommand::Adjust(a) => commands::reevaluate_adjust(&a),
        },
        Command::Sweep(a) => commands::sweep(&a),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::exit_code(&err))
        }
    }
}
