use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "schemind", version, about = "Induce writing schemas from example sets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Full pipeline with every suggestion accepted.
    Run(RunArgs),
    /// One stage against the artifacts in --out.
    Stage(StageArgs),
    /// Single-prompt schema report for comparison.
    Baseline(BaselineArgs),
    /// HTTP API for interactive sessions.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GatewayArgs {
    /// Record every model call to this transcript.
    #[arg(long, value_name = "PATH", conflicts_with = "replay")]
    pub record: Option<PathBuf>,
    /// Answer model calls from this transcript only.
    #[arg(long, value_name = "PATH")]
    pub replay: Option<PathBuf>,
    #[arg(long, env = "SCHEMEX_MODEL", default_value = "gpt-4o")]
    pub model: String,
    #[arg(long, env = "SCHEMEX_BASE_URL", default_value = "https://api.openai.com/v1")]
    pub base_url: String,
    /// `scripted` is a deterministic offline model for demos and tests.
    #[arg(long, value_enum, default_value_t = Backend::Http)]
    pub backend: Backend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Http,
    Scripted,
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    #[arg(long)]
    pub goal: String,
    /// Directory of text files or a manifest file.
    #[arg(long, value_name = "DIR|MANIFEST")]
    pub examples: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TuningArgs {
    /// Cluster members sampled per apply.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    #[arg(long, default_value_t = 0.2)]
    pub holdout_ratio: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Downgrade unquoted or unverifiable Yes judgments and drop
    /// unsupported dimension attributes.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub iterations: usize,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[command(flatten)]
    pub gateway: GatewayArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageName {
    Cluster,
    Features,
    Dimensions,
    Attributes,
    Overall,
    Apply,
    Contrast,
    Iterate,
}

#[derive(Debug, Clone, Args)]
pub struct StageArgs {
    #[arg(value_enum)]
    pub stage: StageName,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Needed by `cluster`, which ingests the examples.
    #[arg(long)]
    pub goal: Option<String>,
    #[arg(long, value_name = "DIR|MANIFEST")]
    pub examples: Option<PathBuf>,
    /// `iterate` only: treat pending suggestions as accepted.
    #[arg(long = "auto-accept-all", visible_alias = "accept-all")]
    pub accept_all: bool,
    #[command(flatten)]
    pub tuning: TuningArgs,
    #[command(flatten)]
    pub gateway: GatewayArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub gateway: GatewayArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    #[arg(long, env = "SCHEMEX_DATA_DIR", default_value = "schemind-data")]
    pub data_dir: PathBuf,
    #[command(flatten)]
    pub gateway: GatewayArgs,
}
