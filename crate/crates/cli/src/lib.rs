//! `fspc`: dataset preparation, training, evaluation, gradient checks and
//! report emission.

mod commands;
mod overrides;
pub mod report;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fspc_core::backbone::BackboneKind;
use fspc_core::train::{Profile, TrainConfig};

pub use overrides::{apply as apply_override, merge as merge_json};

/// Exit status for usage errors: bad flags, bad config, missing paths.
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<fspc_core::Error> for CliError {
    fn from(e: fspc_core::Error) -> Self {
        if e.is_numeric_error() {
            CliError::Numeric(e.to_string())
        } else if e.is_data_error() {
            CliError::Data(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

impl Toggle {
    fn on(self) -> bool {
        self == Toggle::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Paper,
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackboneArg {
    Pointnet,
    Dgcnn,
}

#[derive(Debug, Parser)]
#[command(
    name = "fspc",
    version,
    about = "Few-shot point-cloud classification experiments"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON config; missing keys take the profile defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory. Defaults to a named directory under $FSPC_OUT_DIR
    /// (or ./fspc-out).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub profile: Option<ProfileArg>,
    #[arg(long, global = true)]
    pub way: Option<usize>,
    #[arg(long, global = true)]
    pub shot: Option<usize>,
    #[arg(long, global = true)]
    pub query: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub backbone: Option<BackboneArg>,
    #[arg(long, global = true, value_enum)]
    pub sci: Option<Toggle>,
    #[arg(long, global = true, value_enum)]
    pub cif: Option<Toggle>,
    #[arg(long, global = true)]
    pub k1: Option<usize>,
    #[arg(long, global = true)]
    pub k2: Option<usize>,
    /// Dotted config override, e.g. `--set optimizer.lr0=0.001`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset or import an existing one.
    PrepareData(PrepareArgs),
    /// Episodic training with validation and a final novel-class test.
    Train(TrainArgs),
    /// Test a checkpoint on novel-class episodes.
    Eval(EvalArgs),
    /// Finite-difference check of every analytic gradient on a tiny model.
    Gradcheck(GradcheckArgs),
    /// Tables and curves over one or more run directories.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// `<classes>x<per-class>`, drawn from the built-in shape catalog.
    #[arg(long, conflicts_with = "input")]
    pub synthetic: Option<String>,
    /// How many of the synthetic classes go to the novel side.
    #[arg(long, default_value_t = 2)]
    pub novel: usize,
    #[arg(long, default_value_t = 512)]
    pub points: usize,
    /// Existing dataset directory to validate and copy.
    #[arg(long, requires = "manifest")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `prepare-data`; the built-in synthetic
    /// pool is used when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Class-level k-fold cross-validation instead of a single run.
    #[arg(long)]
    pub cv: bool,
    /// Build a plain prototype network without the adaptation module.
    #[arg(long)]
    pub no_cia: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub episodes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories, each holding a report.json.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
}

/// Resolves the effective config: profile defaults, then the config file,
/// then `--set` overrides, then the dedicated flags.
pub fn resolve_config(g: &GlobalArgs) -> Result<TrainConfig, CliError> {
    let file: Option<serde_json::Value> = match &g.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Usage(format!("cannot read config {}: {e}", path.display()))
            })?;
            Some(serde_json::from_str(&text).map_err(|e| {
                CliError::Usage(format!("config {} is not valid JSON: {e}", path.display()))
            })?)
        }
        None => None,
    };
    let profile = match (g.profile, &file) {
        (Some(ProfileArg::Paper), _) => Profile::Paper,
        (Some(ProfileArg::Desk), _) => Profile::Desk,
        (None, Some(f)) => match f.get("profile").and_then(|p| p.as_str()) {
            Some(p) => p.parse()?,
            None => Profile::Desk,
        },
        (None, None) => Profile::Desk,
    };
    let mut value =
        serde_json::to_value(TrainConfig::for_profile(profile)).expect("config serializes");
    if let Some(f) = file {
        merge_json(&mut value, f);
    }
    for s in &g.set {
        apply_override(&mut value, s)?;
    }
    let mut cfg: TrainConfig = serde_json::from_value(value)
        .map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
    cfg.profile = profile;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(v) = g.way {
        cfg.way = v;
    }
    if let Some(v) = g.shot {
        cfg.shot = v;
    }
    if let Some(v) = g.query {
        cfg.query = v;
    }
    if let Some(b) = g.backbone {
        cfg.backbone.kind = match b {
            BackboneArg::Pointnet => BackboneKind::Pointnet,
            BackboneArg::Dgcnn => BackboneKind::Dgcnn,
        };
    }
    if let Some(t) = g.sci {
        cfg.cia.sci = t.on();
    }
    if let Some(t) = g.cif {
        cfg.cia.cif = t.on();
    }
    if let Some(v) = g.k1 {
        cfg.cia.k1 = v;
    }
    if let Some(v) = g.k2 {
        cfg.cia.k2 = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// `--out` if given, else `name` under `$FSPC_OUT_DIR` (or `./fspc-out`).
pub fn output_dir(g: &GlobalArgs, name: &str) -> PathBuf {
    match &g.out {
        Some(p) => p.clone(),
        None => std::env::var_os("FSPC_OUT_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("fspc-out"))
            .join(name),
    }
}

pub(crate) fn require_path(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "{what} {} does not exist",
            path.display()
        )))
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot size the thread pool: {e}")))?;
    }
    match &cli.command {
        Command::PrepareData(a) => commands::prepare_data(&cli.global, a),
        Command::Train(a) => commands::train(&cli.global, a),
        Command::Eval(a) => commands::eval(&cli.global, a),
        Command::Gradcheck(a) => commands::gradcheck(&cli.global, a),
        Command::Report(a) => report::run(&cli.global, a),
    }
}

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
