mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input or arguments; exit 1.
    #[error("{0}")]
    User(String),
    /// Anything else; exit 2.
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn user(e: impl std::fmt::Display) -> Self {
        CliError::User(e.to_string())
    }

    pub fn internal(e: impl std::fmt::Display) -> Self {
        CliError::Internal(e.to_string())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "stindex",
    version,
    about = "Schema-configurable spatiotemporal extraction and analytics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract entities from documents into a run file.
    Extract(ExtractArgs),
    /// Cluster and burst analytics over a run file.
    Analyze(AnalyzeArgs),
    /// Score a run file against gold annotations.
    Eval(EvalArgs),
    /// Write the self-contained dashboard bundle.
    ExportDashboard(ExportArgs),
    /// Check a dimension schema file.
    SchemaValidate(SchemaArgs),
    /// Run the bundled demo corpus offline.
    Demo(DemoArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BackendArg {
    Http,
    Replay,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GeocoderArg {
    Http,
    Offline,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    SlidingWindow,
    Paragraph,
    Element,
    Semantic,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Dimension schema (YAML or JSON); the two anchor dimensions when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// File path, http(s) URL, or `-` for stdin.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<String>,
    #[arg(long, value_enum, default_value = "http")]
    pub backend: BackendArg,
    /// Replay fixture for `--backend replay`.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// Model name; defaults to STINDEX_MODEL for http and `replay` for replay.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the run path with a `.manifest.json` extension.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub no_reflection: bool,
    #[arg(long, default_value_t = 0.7)]
    pub reflection_threshold: f64,
    #[arg(long)]
    pub no_context_correction: bool,
    /// Country code preferred for every toponym.
    #[arg(long)]
    pub bias: Option<String>,
    #[arg(long, value_enum, default_value = "sliding-window")]
    pub chunk_strategy: StrategyArg,
    #[arg(long, default_value_t = 2000)]
    pub chunk_size: usize,
    #[arg(long, default_value_t = 200)]
    pub chunk_overlap: usize,
    #[arg(long, value_enum, default_value = "offline")]
    pub geocoder: GeocoderArg,
    /// Gazetteer TSV; the bundled one when omitted.
    #[arg(long)]
    pub gazetteer: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long, default_value_t = 50.0)]
    pub eps_km: f64,
    #[arg(long, default_value_t = 7.0)]
    pub eps_days: f64,
    #[arg(long, default_value_t = 2)]
    pub min_pts: usize,
    #[arg(long, default_value_t = 7)]
    pub window_days: u32,
    #[arg(long, default_value_t = 1)]
    pub step_days: u32,
    #[arg(long, default_value_t = 2.0)]
    pub z: f64,
    #[arg(long, default_value_t = 3)]
    pub min_count: usize,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub params: ClusterArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    /// Schema; read from the run manifest when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Analytics file; computed with default parameters when omitted.
    #[arg(long)]
    pub analytics: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SchemaArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long, default_value = "stindex-demo")]
    pub out: PathBuf,
}

fn init_tracing() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_tracing();
    let outcome = match cli.command {
        Command::Extract(a) => commands::extract(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Eval(a) => commands::eval(a),
        Command::ExportDashboard(a) => commands::export_dashboard(a),
        Command::SchemaValidate(a) => commands::schema_validate(a),
        Command::Demo(a) => commands::demo(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
