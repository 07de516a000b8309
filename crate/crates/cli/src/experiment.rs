//! Experiment configuration: config file, flag overrides and the multi-run
//! driver.

use std::fs;
use std::path::{Path, PathBuf};

use lad::data::{load_features, load_labels, FeatureDataset};
use lad::report::{aggregate, emit, write_predictions, AggregateReport, Artifact, Format, RunReport};
use lad::trainer::{check_domains, run_method, ConfigDigest, Method, Precision, TrainConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything a config file may set. Every field is optional; flags take
/// precedence, and unset training fields fall back to the defaults of the
/// selected mode. Relative paths are resolved against the file's directory.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub mode: Option<Method>,
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub target_labels: Option<PathBuf>,
    pub task: Option<String>,
    pub n_runs: Option<usize>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub batch_size: Option<usize>,
    pub n_epochs: Option<usize>,
    pub hidden_width: Option<usize>,
    pub dropout_rate: Option<f64>,
    pub use_class_weights: Option<bool>,
    pub seed: Option<u64>,
    pub record_every: Option<usize>,
    pub precision: Option<Precision>,
    pub reverse_gradient: Option<bool>,
}

/// `$base` with every training field set in `$over` replaced.
macro_rules! overlay {
    ($over:expr, $base:expr, $($f:ident),*) => {
        TrainConfig { $($f: $over.$f.clone().unwrap_or($base.$f)),* }
    };
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut file: ConfigFile = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut file.source, &mut file.target, &mut file.target_labels, &mut file.out]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(file)
    }

    /// Fields set in `flags` win.
    pub fn merge(self, flags: ConfigFile) -> Self {
        macro_rules! pick {
            ($($f:ident),*) => { Self { $($f: flags.$f.or(self.$f)),* } };
        }
        pick!(
            mode, source, target, target_labels, task, n_runs, jobs, out, learning_rate, momentum,
            batch_size, n_epochs, hidden_width, dropout_rate, use_class_weights, seed, record_every,
            precision, reverse_gradient
        )
    }

    fn train_config(&self, mode: Method) -> TrainConfig {
        let base = TrainConfig::for_method(mode);
        overlay!(
            self, base, learning_rate, momentum, batch_size, n_epochs, hidden_width, dropout_rate,
            use_class_weights, seed, record_every, precision, reverse_gradient
        )
    }
}

/// Fully resolved experiment, written to `effective_config.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub task: String,
    pub mode: Method,
    pub source: PathBuf,
    pub target: PathBuf,
    pub target_labels: Option<PathBuf>,
    pub n_runs: usize,
    pub jobs: usize,
    pub out: PathBuf,
    /// Training settings; `seed` is the base seed, run `i` uses `seed + i`.
    pub train: TrainConfig,
    pub digest: ConfigDigest,
}

pub const DEFAULT_RUNS: usize = 10;

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

impl ExperimentConfig {
    /// Checks required fields, values and that input files exist.
    pub fn resolve(file: ConfigFile) -> Result<Self, CliError> {
        let missing = |what: &str| CliError::config(format!("missing required setting `{what}`"));
        let mode = file.mode.unwrap_or(Method::Lad);
        let train = file.train_config(mode);
        let source = file.source.ok_or_else(|| missing("source"))?;
        let target = file.target.ok_or_else(|| missing("target"))?;
        let out = file.out.ok_or_else(|| missing("out"))?;
        train.validate().map_err(|e| CliError::config(e.to_string()))?;
        let n_runs = file.n_runs.unwrap_or(DEFAULT_RUNS);
        if n_runs == 0 {
            return Err(CliError::config("runs: must be at least 1"));
        }
        let jobs = file.jobs.unwrap_or(1);
        if jobs == 0 {
            return Err(CliError::config("jobs: must be at least 1"));
        }
        for (what, p) in [("source", Some(&source)), ("target", Some(&target)), ("target-labels", file.target_labels.as_ref())] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(CliError::config(format!("{what} file {} does not exist", p.display())));
                }
            }
        }
        Ok(Self {
            task: file.task.unwrap_or_else(|| format!("{}->{}", stem(&source), stem(&target))),
            digest: train.digest(mode),
            mode,
            source,
            target,
            target_labels: file.target_labels,
            n_runs,
            jobs,
            out,
            train,
        })
    }
}

/// Loaded inputs of an experiment.
pub struct Inputs {
    pub source: FeatureDataset,
    /// Unlabeled view used for training.
    pub target: FeatureDataset,
    /// Labels for evaluation, from `--target-labels` or the target file.
    pub truth: Option<Vec<usize>>,
    pub num_classes: usize,
}

pub fn load_inputs(cfg: &ExperimentConfig) -> Result<Inputs, CliError> {
    let source = load_features(&cfg.source).map_err(CliError::data)?;
    let mut target = load_features(&cfg.target).map_err(CliError::data)?;
    // Keep only the class count the target file itself declares; one inferred
    // from attached labels may undercount classes absent from the target.
    let declared = target.num_classes;
    if let Some(p) = &cfg.target_labels {
        let pairs = load_labels(p).map_err(CliError::data)?;
        target = target.with_labels_from(&pairs).map_err(CliError::data)?;
    }
    let truth = target.labels.clone();
    let target = FeatureDataset {
        num_classes: declared,
        ..target.without_labels()
    };
    let num_classes = check_domains(&source, &target).map_err(CliError::data)?;
    if let Some(t) = &truth {
        if let Some(y) = t.iter().find(|&&y| y >= num_classes) {
            return Err(CliError::data(lad::Error::Data(format!(
                "target label {y} out of range for {num_classes} classes"
            ))));
        }
    }
    Ok(Inputs {
        source,
        target,
        truth,
        num_classes,
    })
}

/// Per-run settings written next to the run's outputs.
#[derive(Serialize)]
struct RunConfig<'a> {
    task: &'a str,
    mode: Method,
    run_index: usize,
    source: &'a Path,
    target: &'a Path,
    train: &'a TrainConfig,
    digest: &'a ConfigDigest,
}

fn run_one(cfg: &ExperimentConfig, inputs: &Inputs, index: usize) -> Result<RunReport, CliError> {
    let train = TrainConfig {
        seed: cfg.train.seed.wrapping_add(index as u64),
        ..cfg.train.clone()
    };
    log::info!("{} {} run {index} (seed {})", cfg.task, cfg.mode, train.seed);
    let dir = cfg.out.join(format!("run_{index:03}"));
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;

    let out = run_method(cfg.mode, &inputs.source, &inputs.target, &train).map_err(CliError::run)?;
    let ids: Vec<String> = (0..inputs.target.len()).map(|r| inputs.target.id(r)).collect();
    write_predictions(dir.join("predictions.csv"), &ids, &out.predictions).map_err(CliError::run)?;
    emit(Artifact::History(&out.history), dir.join("history.csv"), Format::Csv).map_err(CliError::run)?;
    let mut report = RunReport::new(
        &cfg.task,
        cfg.mode,
        cfg.digest.clone(),
        train.seed,
        &out.predictions,
        inputs.truth.as_deref(),
        inputs.num_classes,
        out.discriminator_accuracy,
        out.runtime_seconds,
    )
    .map_err(CliError::run)?;
    report.history_file = Some("history.csv".into());
    emit(Artifact::Report(&report), dir.join("report.json"), Format::Json).map_err(CliError::run)?;
    let run_cfg = RunConfig {
        task: &cfg.task,
        mode: cfg.mode,
        run_index: index,
        source: &cfg.source,
        target: &cfg.target,
        train: &train,
        digest: &cfg.digest,
    };
    write_json(&dir.join("config.json"), &run_cfg)?;
    if let Some(acc) = report.target_accuracy {
        log::info!("{} {} run {index}: target accuracy {:.1}%", cfg.task, cfg.mode, 100.0 * acc);
    }
    Ok(report)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("plain data serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Runs every seed and writes per-run artifacts plus the aggregate.
pub fn run_experiment(cfg: &ExperimentConfig, inputs: &Inputs) -> Result<AggregateReport, CliError> {
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    write_json(&cfg.out.join("effective_config.json"), cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| CliError::config(format!("jobs: {e}")))?;
    let reports: Vec<RunReport> = pool.install(|| {
        (0..cfg.n_runs)
            .into_par_iter()
            .map(|i| run_one(cfg, inputs, i))
            .collect::<Result<_, _>>()
    })?;
    let agg = aggregate(&reports).map_err(CliError::run)?;
    emit(Artifact::Aggregate(&agg), cfg.out.join("aggregate.json"), Format::Json).map_err(CliError::run)?;
    Ok(agg)
}
