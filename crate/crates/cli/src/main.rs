mod config;
mod manifest;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use parkcast_core::models::Family;

use crate::config::PipelineConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl From<parkcast_core::Error> for CliError {
    fn from(e: parkcast_core::Error) -> Self {
        use parkcast_core::Error as E;
        match e {
            E::Parse { .. }
            | E::Schema(_)
            | E::Validation(_)
            | E::Geometry(_)
            | E::DegenerateGate { .. }
            | E::AmbiguousSection(_)
            | E::Lookup { .. }
            | E::Argument(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<parkcast_service::ServiceError> for CliError {
    fn from(e: parkcast_service::ServiceError) -> Self {
        use parkcast_service::ServiceError as E;
        match e {
            E::Io(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

/// Sensor-free campus parking availability pipeline.
#[derive(Debug, Parser)]
#[command(name = "parkcast", version)]
pub struct Cli {
    /// Pipeline configuration (TOML, or JSON by extension).
    #[arg(long, global = true, env = "PARKCAST_CONFIG")]
    pub config: Option<PathBuf>,
    /// Seed for every randomized step; overrides the config file.
    #[arg(long, global = true, env = "PARKCAST_SEED")]
    pub seed: Option<u64>,
    /// Work directory holding stage artifacts and manifests.
    #[arg(
        long,
        global = true,
        env = "PARKCAST_OUT",
        default_value = "parkcast-out"
    )]
    pub out: PathBuf,
    #[arg(
        long,
        global = true,
        env = "PARKCAST_FORMAT",
        value_enum,
        default_value = "text"
    )]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a campus file and an observation CSV and copy them into the work directory.
    Ingest(IngestArgs),
    /// Snap observations to road segments and parking sections.
    Join(JoinArgs),
    /// Aggregate hourly feature rows, clean them and fit the encoder.
    BuildDataset(BuildArgs),
    /// Correlate each attribute with availability.
    Analyze(AnalyzeArgs),
    /// Fit one model family on the training split.
    Train(TrainArgs),
    /// Cross-validated hyperparameter search.
    Tune(TuneArgs),
    /// Tune, refit and score every family on the test split.
    Evaluate(EvaluateArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Generate synthetic observations with exact occupancy ground truth.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long, env = "PARKCAST_CAMPUS")]
    pub campus: PathBuf,
    #[arg(long, env = "PARKCAST_OBSERVATIONS")]
    pub observations: PathBuf,
}

#[derive(Debug, Args)]
pub struct JoinArgs {
    /// Campus file; defaults to the ingested one.
    #[arg(long, env = "PARKCAST_CAMPUS")]
    pub campus: Option<PathBuf>,
    /// Observation CSV; defaults to the ingested one.
    #[arg(long, env = "PARKCAST_OBSERVATIONS")]
    pub observations: Option<PathBuf>,
    #[arg(long, env = "PARKCAST_SNAP_THRESHOLD_M")]
    pub snap_threshold_m: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long, env = "PARKCAST_TRAIN_RATIO")]
    pub train_ratio: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Feature-row CSV; defaults to the built dataset.
    #[arg(long, env = "PARKCAST_ROWS")]
    pub rows: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, env = "PARKCAST_FAMILY", default_value = "rfr")]
    pub family: Family,
    /// Use the best configuration found by `tune` for this family.
    #[arg(long)]
    pub tuned: bool,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    /// Families to tune; defaults to the configured list.
    #[arg(long, env = "PARKCAST_FAMILY", value_delimiter = ',')]
    pub family: Vec<Family>,
    /// Random search with this many draws instead of the configured strategy.
    #[arg(long, env = "PARKCAST_BUDGET")]
    pub budget: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, env = "PARKCAST_FAMILY", value_delimiter = ',')]
    pub family: Vec<Family>,
    /// Vehicles per unit of availability, for errors in vehicles.
    #[arg(long, env = "PARKCAST_VEHICLE_SCALE")]
    pub vehicle_scale: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Model artifact; defaults to the RFR model in the work directory.
    #[arg(long, env = "PARKCAST_MODEL")]
    pub model: Option<PathBuf>,
    #[arg(long, env = "PARKCAST_SIDECAR")]
    pub sidecar: Option<PathBuf>,
    #[arg(long, env = "PARKCAST_CAMPUS")]
    pub campus: Option<PathBuf>,
    #[arg(long, env = "PARKCAST_HOST")]
    pub host: Option<String>,
    #[arg(long, env = "PARKCAST_PORT")]
    pub port: Option<u16>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Campus file; defaults to the bundled fixture campus.
    #[arg(long, env = "PARKCAST_CAMPUS")]
    pub campus: Option<PathBuf>,
    #[arg(long, env = "PARKCAST_DAYS")]
    pub days: Option<u32>,
    /// GPS noise standard deviation in meters.
    #[arg(long, env = "PARKCAST_SIGMA")]
    pub sigma: Option<f64>,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<String, CliError> {
    let cfg = load_config(cli)?;
    let ctx = stages::Context::new(cli, cfg)?;
    match &cli.command {
        Command::Ingest(a) => stages::ingest(&ctx, a),
        Command::Join(a) => stages::join(&ctx, a),
        Command::BuildDataset(a) => stages::build_dataset(&ctx, a),
        Command::Analyze(a) => stages::analyze(&ctx, a),
        Command::Train(a) => stages::train(&ctx, a),
        Command::Tune(a) => stages::tune(&ctx, a),
        Command::Evaluate(a) => stages::evaluate(&ctx, a),
        Command::Serve(a) => stages::serve(&ctx, a),
        Command::Synth(a) => stages::synth(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(&cli) {
        Ok(out) => {
            if !out.is_empty() {
                print!("{out}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
