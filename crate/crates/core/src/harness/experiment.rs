//! End-to-end runs and their on-disk artifacts.
//!
//! A run directory holds:
//! - `accuracy_matrix.csv`: lower-triangular test accuracies, 6 decimals
//! - `metrics.json`: ACC, BWT, overlap decisions, capacities, memory report
//! - `config.json`: the resolved configuration
//! - `train_log.jsonl`: one JSON record per epoch, overlap analysis and task
//! - `timings.json`: wall-clock seconds per task
//! - `model.json`: final model checkpoint

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{load_mnist_benchmark, permuted_tasks, synthetic_subspace_tasks, TaskSequence};
use crate::error::{Error, Result};
use crate::harness::config::{Benchmark, ExperimentConfig};
use crate::harness::memory::{memory_report, MemoryReport};
use crate::harness::metrics::AccuracyMatrix;
use crate::network::MlpModel;
use crate::trainer::{JsonLines, LayerOverlapSummary, Method, SequenceOutcome, TaskResult, Trainer};

pub const DATA_DIR_ENV: &str = "CODECL_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "data/mnist";

pub const ACCURACY_FILE: &str = "accuracy_matrix.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const CONFIG_FILE: &str = "config.json";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const TIMINGS_FILE: &str = "timings.json";
pub const MODEL_FILE: &str = "model.json";

/// Flag, then environment, then config file, then `data/mnist`.
pub fn resolve_data_dir(flag: Option<&Path>, config: &ExperimentConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(DATA_DIR_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    config
        .data_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
}

/// Writes to a sibling temp file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::param("path", format!("{} has no file name", path.display())))?;
    let mut tmp_name = name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOverlap {
    pub task: usize,
    pub layers: Vec<LayerOverlapSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub benchmark: Benchmark,
    pub method: Method,
    pub seed: u64,
    pub tasks: usize,
    pub layer_dims: Vec<usize>,
    pub acc: f64,
    pub bwt: f64,
    pub accuracy_matrix: Vec<Vec<f64>>,
    /// Overlap analysis for every task after the first (CODE-CL only).
    pub overlap: Vec<TaskOverlap>,
    /// Bank capacity per layer after each task (CODE-CL only).
    pub capacities: Vec<Vec<f64>>,
    pub task_results: Vec<TaskResult>,
    pub memory: Option<MemoryReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub task_seconds: Vec<f64>,
    pub total_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub out_dir: PathBuf,
    pub metrics: Metrics,
    pub timings: Timings,
}

/// Builds the task sequence a config describes.
pub fn build_tasks(config: &ExperimentConfig, data_dir: &Path) -> Result<TaskSequence> {
    match config.benchmark {
        Benchmark::PermutedMnist => {
            if !data_dir.is_dir() {
                return Err(Error::Data(format!(
                    "MNIST directory {} not found; pass --data-dir or set {DATA_DIR_ENV}",
                    data_dir.display()
                )));
            }
            let base = load_mnist_benchmark(data_dir, config.pixel_scaling)?;
            permuted_tasks(&base, config.tasks, config.seed)
        }
        Benchmark::Synthetic => {
            let s = config.synthetic_params()?;
            synthetic_subspace_tasks(s.dim, config.tasks, s.overlap, s.samples_per_task, config.seed)
        }
    }
}

/// Loads data, trains and writes every artifact into `out_dir`.
pub fn run_experiment(config: &ExperimentConfig, data_dir: &Path, out_dir: &Path) -> Result<ExperimentSummary> {
    config.validate()?;
    let tasks = build_tasks(config, data_dir)?;
    run_on_tasks(config, &tasks, out_dir)
}

/// Like [`run_experiment`] with an already built task sequence.
pub fn run_on_tasks(config: &ExperimentConfig, tasks: &TaskSequence, out_dir: &Path) -> Result<ExperimentSummary> {
    config.validate()?;
    let dims = config.layer_dims()?;
    if tasks.len() != config.tasks || tasks.dim() != dims[0] || tasks.classes() != *dims.last().unwrap() {
        return Err(Error::param("tasks", "task sequence does not match the config"));
    }
    let mut model = MlpModel::glorot(&dims, &mut ChaCha8Rng::seed_from_u64(config.seed))?;
    let mut log = JsonLines(Vec::new());
    let outcome = Trainer::new(config.schedule.clone(), &mut log).run_sequence(&mut model, tasks, config.method)?;
    let metrics = collect_metrics(config, &dims, &outcome)?;
    let timings = Timings {
        total_seconds: outcome.wall_times.iter().sum(),
        task_seconds: outcome.wall_times.clone(),
    };

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv = outcome.matrix.to_csv();
    if AccuracyMatrix::from_csv(&csv)? != outcome.matrix {
        return Err(Error::Invariant("accuracy matrix does not survive a CSV round trip".into()));
    }
    write_atomic(&out_dir.join(ACCURACY_FILE), csv.as_bytes())?;
    write_atomic(&out_dir.join(METRICS_FILE), serde_json::to_string_pretty(&metrics)?.as_bytes())?;
    write_atomic(&out_dir.join(CONFIG_FILE), config.to_json()?.as_bytes())?;
    write_atomic(&out_dir.join(LOG_FILE), &log.0)?;
    write_atomic(&out_dir.join(TIMINGS_FILE), serde_json::to_string_pretty(&timings)?.as_bytes())?;
    Checkpoint::from_model(&model, outcome.bank.as_ref()).save(&out_dir.join(MODEL_FILE))?;

    Ok(ExperimentSummary {
        out_dir: out_dir.to_path_buf(),
        metrics,
        timings,
    })
}

fn collect_metrics(config: &ExperimentConfig, dims: &[usize], outcome: &SequenceOutcome) -> Result<Metrics> {
    let overlap: Vec<TaskOverlap> = outcome
        .overlaps
        .iter()
        .enumerate()
        .map(|(i, layers)| TaskOverlap {
            task: i + 1,
            layers: layers.clone(),
        })
        .collect();
    if config.method == Method::Codecl && overlap.len() + 1 != config.tasks {
        return Err(Error::Invariant(format!(
            "{} overlap records for {} tasks",
            overlap.len(),
            config.tasks
        )));
    }
    Ok(Metrics {
        benchmark: config.benchmark,
        method: config.method,
        seed: config.seed,
        tasks: config.tasks,
        layer_dims: dims.to_vec(),
        acc: outcome.matrix.acc()?,
        bwt: outcome.matrix.bwt()?,
        accuracy_matrix: outcome.matrix.rows().to_vec(),
        overlap,
        capacities: outcome.capacities.clone(),
        task_results: outcome.task_results.clone(),
        memory: outcome
            .bank
            .as_ref()
            .map(|b| memory_report(b, config.schedule.free_dims, config.tasks)),
    })
}

/// Recomputes ACC and BWT from a run directory's CSV.
pub fn report(out_dir: &Path) -> Result<(AccuracyMatrix, f64, f64)> {
    let path = out_dir.join(ACCURACY_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m = AccuracyMatrix::from_csv(&text)?;
    let acc = m.acc()?;
    let bwt = m.bwt()?;
    Ok((m, acc, bwt))
}
