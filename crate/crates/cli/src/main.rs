use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lad::data::{save_features, save_labels, synth_gaussian_shift, SyntheticSpec};
use lad::report::{aggregate, read_report, render_table, RunReport};
use lad::trainer::{Method, Precision};

mod experiment;

use experiment::{load_inputs, run_experiment, ConfigFile, ExperimentConfig};

/// Failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub const CONFIG: u8 = 2;
    pub const DATA: u8 = 3;
    pub const INVARIANT: u8 = 4;

    pub fn config(message: impl Into<String>) -> Self {
        Self { code: Self::CONFIG, message: message.into() }
    }

    pub fn data(e: lad::Error) -> Self {
        Self { code: Self::DATA, message: e.to_string() }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self { code: 1, message: format!("{}: {e}", path.display()) }
    }

    /// Classifies a library error by kind.
    pub fn run(e: lad::Error) -> Self {
        use lad::Error as E;
        let code = match &e {
            E::InvalidArgument(_) => Self::CONFIG,
            E::Data(_) | E::Parse { .. } | E::Shape { .. } => Self::DATA,
            E::Invariant(_) => Self::INVARIANT,
            E::Io { .. } | E::Json { .. } | E::SchemaVersion { .. } => 1,
        };
        Self { code, message: e.to_string() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Parser)]
#[command(name = "lad", version, about = "Label alignment domain adaptation on pre-extracted features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic source/target pair with a known shift.
    GenSynth(GenSynthArgs),
    /// Train over several seeds and write per-run and aggregate results.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Summarize finished experiment directories as a table.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenSynthArgs {
    /// Spec file, JSON or key=value lines.
    #[arg(long, conflicts_with = "reference", required_unless_present = "reference")]
    spec: Option<PathBuf>,
    /// Use the built-in reference shift.
    #[arg(long)]
    reference: bool,
    /// Overrides the generator seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON file with any of the settings below; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Method>,
    #[arg(long)]
    source: Option<PathBuf>,
    #[arg(long)]
    target: Option<PathBuf>,
    /// `id,label` file used only to score target predictions.
    #[arg(long)]
    target_labels: Option<PathBuf>,
    /// Task name in reports; defaults to `<source>-><target>`.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    no_class_weights: bool,
    #[arg(long)]
    record_every: Option<usize>,
    #[arg(long)]
    precision: Option<Precision>,
    /// Number of seeds (default 10).
    #[arg(long)]
    runs: Option<usize>,
    /// Base seed; run i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Runs trained in parallel.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl TrainArgs {
    fn into_config_file(self) -> ConfigFile {
        ConfigFile {
            mode: self.mode,
            source: self.source,
            target: self.target,
            target_labels: self.target_labels,
            task: self.task,
            n_runs: self.runs,
            jobs: self.jobs,
            out: self.out,
            learning_rate: self.lr,
            momentum: self.momentum,
            batch_size: self.batch_size,
            n_epochs: self.epochs,
            hidden_width: self.hidden,
            dropout_rate: self.dropout,
            use_class_weights: self.no_class_weights.then_some(false),
            seed: self.seed,
            record_every: self.record_every,
            precision: self.precision,
            reverse_gradient: None,
        }
    }
}

#[derive(Args)]
struct ReportArgs {
    /// Experiment directories (containing run_*/report.json) or run directories.
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
}

fn gen_synth(args: GenSynthArgs) -> Result<(), CliError> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            SyntheticSpec::parse(&text).map_err(CliError::run)?
        }
        None => SyntheticSpec::reference(0),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let (source, target) = synth_gaussian_shift(&spec).map_err(CliError::run)?;
    fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    save_features(&source, args.out.join("source.csv")).map_err(CliError::run)?;
    save_features(&target.without_labels(), args.out.join("target.csv")).map_err(CliError::run)?;
    save_labels(&target, args.out.join("target_labels.csv")).map_err(CliError::run)?;
    experiment::write_json(&args.out.join("spec.json"), &spec)?;
    println!(
        "wrote {} source and {} target rows to {}",
        source.len(),
        target.len(),
        args.out.display()
    );
    Ok(())
}

fn train(args: TrainArgs) -> Result<(), CliError> {
    let file = match &args.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let cfg = ExperimentConfig::resolve(file.merge(args.into_config_file()))?;
    // Inputs are fully loaded and checked before anything is written.
    let inputs = load_inputs(&cfg)?;
    println!("config {} ({})", cfg.digest.sha256, cfg.digest.summary);
    let agg = run_experiment(&cfg, &inputs)?;
    print!("{}", render_table(&agg));
    Ok(())
}

/// Report files under `dir`: its own `report.json`, else `run_*/report.json`.
fn report_paths(dir: &Path) -> Result<Vec<PathBuf>, String> {
    let own = dir.join("report.json");
    if own.is_file() {
        return Ok(vec![own]);
    }
    let entries = fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let mut runs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("run_") && e.path().is_dir())
        .map(|e| e.path().join("report.json"))
        .collect();
    runs.sort();
    if runs.is_empty() {
        return Err(format!("{}: no report.json or run_* directories", dir.display()));
    }
    Ok(runs)
}

fn report(args: ReportArgs) -> Result<(), CliError> {
    let mut reports: Vec<RunReport> = Vec::new();
    let mut problems = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for dir in &args.dirs {
        match report_paths(dir) {
            Ok(paths) => {
                // The same run named twice (directly and via its parent) counts once.
                for p in paths {
                    if !seen.insert(fs::canonicalize(&p).unwrap_or_else(|_| p.clone())) {
                        continue;
                    }
                    if !p.is_file() {
                        problems.push(format!("{}: missing", p.display()));
                        continue;
                    }
                    match read_report(&p) {
                        Ok(r) => reports.push(r),
                        Err(e) => problems.push(e.to_string()),
                    }
                }
            }
            Err(e) => problems.push(e),
        }
    }
    if !problems.is_empty() {
        return Err(CliError::data(lad::Error::Data(format!(
            "{} unreadable report(s):\n  {}",
            problems.len(),
            problems.join("\n  ")
        ))));
    }
    let agg = aggregate(&reports).map_err(CliError::run)?;
    print!("{}", render_table(&agg));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("LAD_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenSynth(a) => gen_synth(a),
        Command::Train(a) => train(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
