//! The continual-learning loop.
//!
//! Task 1 trains unconstrained and seeds a per-layer conceptor bank. Every
//! later task runs three steps: overlap analysis against the bank (attaching
//! a low-rank adapter on highly correlated layers), training with weight
//! gradients projected by `I - C`, and merging the post-training conceptor
//! into the bank with OR.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::conceptor::{Conceptor, FeatureBatch, OrthonormalBasis, DEFAULT_RANK_TOL};
use crate::data::{epoch_batches, sample_batch, Dataset, Split, TaskSequence};
use crate::error::{Error, Result};
use crate::harness::metrics::AccuracyMatrix;
use crate::network::MlpModel;

/// Minimum absolute validation-accuracy gain that counts as an improvement.
pub const PLATEAU_THRESHOLD: f64 = 1e-4;

const EVAL_CHUNK: usize = 1000;
const CAPACITY_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdapterInit {
    #[default]
    Zero,
    Gaussian {
        std: f64,
    },
}

/// Optimisation and conceptor hyperparameters for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Plateau scheduler; all three `None` means a fixed learning rate.
    #[serde(default)]
    pub patience: Option<usize>,
    #[serde(default)]
    pub decay_factor: Option<f64>,
    #[serde(default)]
    pub min_learning_rate: Option<f64>,
    pub conceptor_batch: usize,
    pub aperture: f64,
    pub epsilon: f64,
    pub free_dims: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub adapter_init: AdapterInit,
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
}

fn default_rank_tol() -> f64 {
    DEFAULT_RANK_TOL
}

impl TrainSchedule {
    /// Permuted-MNIST settings: no plateau scheduler, fixed 5 epochs.
    pub fn permuted_mnist() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 100,
            epochs: 5,
            patience: None,
            decay_factor: None,
            min_learning_rate: None,
            conceptor_batch: 300,
            aperture: 3.0,
            epsilon: 0.5,
            free_dims: 80,
            seed: 0,
            adapter_init: AdapterInit::Zero,
            rank_tol: DEFAULT_RANK_TOL,
        }
    }

    pub fn validate(&self, layer_input_dims: &[usize]) -> Result<()> {
        let positive = |field: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::param(field, format!("must be positive, got {v}")))
            }
        };
        positive("learning_rate", self.learning_rate)?;
        positive("aperture", self.aperture)?;
        for (field, v) in [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("conceptor_batch", self.conceptor_batch),
            ("free_dims", self.free_dims),
        ] {
            if v == 0 {
                return Err(Error::param(field, "must be positive"));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::param("epsilon", format!("must lie in (0, 1), got {}", self.epsilon)));
        }
        if !(self.rank_tol > 0.0 && self.rank_tol < 1.0) {
            return Err(Error::param("rank_tol", format!("must lie in (0, 1), got {}", self.rank_tol)));
        }
        if let Some(&smallest) = layer_input_dims.iter().min() {
            if self.free_dims > smallest {
                return Err(Error::param(
                    "free_dims",
                    format!("{} exceeds the smallest layer input dim {smallest}", self.free_dims),
                ));
            }
        }
        match (self.patience, self.decay_factor) {
            (None, None) => {}
            (Some(p), Some(f)) => {
                if p == 0 {
                    return Err(Error::param("patience", "must be positive"));
                }
                if !(f > 0.0 && f < 1.0) {
                    return Err(Error::param("decay_factor", format!("must lie in (0, 1), got {f}")));
                }
            }
            _ => {
                return Err(Error::param(
                    "patience",
                    "patience and decay_factor must be set together",
                ))
            }
        }
        if let Some(m) = self.min_learning_rate {
            positive("min_learning_rate", m)?;
        }
        if let AdapterInit::Gaussian { std } = self.adapter_init {
            positive("adapter_init.std", std)?;
        }
        Ok(())
    }
}

/// Reduce-on-plateau learning-rate control driven by validation accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    eta: f64,
    best: Option<f64>,
    stale_epochs: usize,
    patience: Option<usize>,
    decay_factor: Option<f64>,
    min_learning_rate: Option<f64>,
}

impl PlateauScheduler {
    pub fn new(schedule: &TrainSchedule) -> Self {
        Self {
            eta: schedule.learning_rate,
            best: None,
            stale_epochs: 0,
            patience: schedule.patience,
            decay_factor: schedule.decay_factor,
            min_learning_rate: schedule.min_learning_rate,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.eta
    }

    /// True once the learning rate has decayed below the minimum.
    pub fn should_stop(&self) -> bool {
        self.min_learning_rate.is_some_and(|m| self.eta < m)
    }

    /// Feeds one epoch's validation accuracy; returns the learning rate for the next epoch.
    pub fn observe(&mut self, val_accuracy: f64) -> f64 {
        let (Some(patience), Some(factor)) = (self.patience, self.decay_factor) else {
            return self.eta;
        };
        if !val_accuracy.is_finite() {
            return self.eta;
        }
        match self.best {
            Some(best) if val_accuracy <= best + PLATEAU_THRESHOLD => {
                self.stale_epochs += 1;
                if self.stale_epochs >= patience {
                    self.eta *= factor;
                    self.stale_epochs = 0;
                }
            }
            _ => {
                self.best = Some(val_accuracy);
                self.stale_epochs = 0;
            }
        }
        self.eta
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauOutcome {
    pub learning_rate: f64,
    pub stop: bool,
}

/// Replays a validation-accuracy history through the plateau rule.
pub fn lr_on_plateau(history: &[f64], schedule: &TrainSchedule) -> PlateauOutcome {
    let mut s = PlateauScheduler::new(schedule);
    for &v in history {
        s.observe(v);
    }
    PlateauOutcome {
        learning_rate: s.learning_rate(),
        stop: s.should_stop() || history.len() >= schedule.epochs,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correlation {
    /// Capacity ratio above epsilon: learn in the top-K shared directions.
    High,
    /// Train with gradient projection only.
    Low,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerOverlap {
    pub ratio: f64,
    pub and_capacity: f64,
    pub prev_capacity: f64,
    pub case: Correlation,
    /// Top-K eigenvectors of the AND conceptor, present iff `case == High`.
    pub basis: Option<OrthonormalBasis>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapDecision {
    pub layers: Vec<LayerOverlap>,
}

/// Summary of an overlap decision without the bases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerOverlapSummary {
    pub layer: usize,
    pub ratio: f64,
    pub and_capacity: f64,
    pub prev_capacity: f64,
    pub case: Correlation,
}

impl OverlapDecision {
    pub fn summary(&self) -> Vec<LayerOverlapSummary> {
        self.layers
            .iter()
            .enumerate()
            .map(|(layer, o)| LayerOverlapSummary {
                layer,
                ratio: o.ratio,
                and_capacity: o.and_capacity,
                prev_capacity: o.prev_capacity,
                case: o.case,
            })
            .collect()
    }
}

/// Adapter learned on one layer during one task, kept for memory accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterRecord {
    pub task: usize,
    pub layer: usize,
    pub basis: OrthonormalBasis,
    pub mix: DMatrix<f64>,
}

/// Per-layer merged conceptors plus the archive of per-task adapters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptorBank {
    conceptors: Vec<Conceptor>,
    archive: Vec<AdapterRecord>,
}

impl ConceptorBank {
    pub fn new(conceptors: Vec<Conceptor>) -> Self {
        Self {
            conceptors,
            archive: Vec::new(),
        }
    }

    /// Zero conceptors: nothing protected yet.
    pub fn empty(layer_input_dims: &[usize]) -> Self {
        Self::new(layer_input_dims.iter().map(|&n| Conceptor::zero(n)).collect())
    }

    pub fn conceptors(&self) -> &[Conceptor] {
        &self.conceptors
    }

    pub fn archive(&self) -> &[AdapterRecord] {
        &self.archive
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.conceptors.iter().map(Conceptor::capacity).collect()
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        self.conceptors.iter().map(Conceptor::dim).collect()
    }

    fn check_model(&self, model: &MlpModel) -> Result<()> {
        if self.layer_dims() != model.layer_input_dims() {
            return Err(Error::param(
                "bank",
                format!(
                    "conceptor dims {:?} do not match layer inputs {:?}",
                    self.layer_dims(),
                    model.layer_input_dims()
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Conceptor-based gradient projection with overlap adapters.
    Codecl,
    /// Plain sequential fine-tuning.
    Naive,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ProgressRecord {
    Epoch {
        task: usize,
        epoch: usize,
        train_loss: f64,
        val_accuracy: Option<f64>,
        learning_rate: f64,
    },
    Overlap {
        task: usize,
        layers: Vec<LayerOverlapSummary>,
    },
    TaskDone {
        task: usize,
        test_accuracies: Vec<f64>,
        capacities: Option<Vec<f64>>,
    },
}

pub trait ProgressSink {
    fn record(&mut self, record: &ProgressRecord) -> Result<()>;
}

/// Discards every record.
pub struct NullSink;

impl ProgressSink for NullSink {
    fn record(&mut self, _: &ProgressRecord) -> Result<()> {
        Ok(())
    }
}

impl ProgressSink for Vec<ProgressRecord> {
    fn record(&mut self, record: &ProgressRecord) -> Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

/// Writes records as line-delimited JSON.
pub struct JsonLines<W: std::io::Write>(pub W);

impl<W: std::io::Write> ProgressSink for JsonLines<W> {
    fn record(&mut self, record: &ProgressRecord) -> Result<()> {
        serde_json::to_writer(&mut self.0, record)?;
        self.0
            .write_all(b"\n")
            .map_err(|e| Error::io("<training log>", e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task: usize,
    pub epochs_run: usize,
    pub final_learning_rate: f64,
    pub train_losses: Vec<f64>,
    pub val_accuracies: Vec<Option<f64>>,
}

/// Everything a sequence run produces.
#[derive(Debug, Clone)]
pub struct SequenceOutcome {
    pub matrix: AccuracyMatrix,
    pub task_results: Vec<TaskResult>,
    /// One entry per task after the first (empty for the naive method).
    pub overlaps: Vec<Vec<LayerOverlapSummary>>,
    /// Bank capacities per layer after each task (empty for the naive method).
    pub capacities: Vec<Vec<f64>>,
    pub bank: Option<ConceptorBank>,
    pub wall_times: Vec<f64>,
}

/// Accuracy of `model` on one split, evaluated in chunks.
pub fn accuracy(model: &MlpModel, dataset: &Dataset, split: Split) -> Result<f64> {
    let indices = dataset.split(split);
    if indices.is_empty() {
        return Err(Error::Data(format!("{split:?} split is empty")));
    }
    let mut correct = 0usize;
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (x, y) = dataset.gather(chunk)?;
        let pred = model.predict(&x)?;
        correct += pred.iter().zip(&y).filter(|(p, t)| p == t).count();
    }
    Ok(correct as f64 / indices.len() as f64)
}

/// Drives one run. Owns the run's random stream so a fixed seed reproduces
/// batch order, conceptor samples and adapter initialisation.
pub struct Trainer<'a> {
    schedule: TrainSchedule,
    rng: ChaCha8Rng,
    sink: &'a mut dyn ProgressSink,
}

impl<'a> Trainer<'a> {
    pub fn new(schedule: TrainSchedule, sink: &'a mut dyn ProgressSink) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
        rng.set_stream(1);
        Self { schedule, rng, sink }
    }

    pub fn schedule(&self) -> &TrainSchedule {
        &self.schedule
    }

    /// Unconstrained training on the first task, then one conceptor per layer
    /// from a `conceptor_batch`-sample forward trace.
    pub fn train_first_task(&mut self, model: &mut MlpModel, dataset: &Dataset) -> Result<(ConceptorBank, TaskResult)> {
        self.schedule.validate(&model.layer_input_dims())?;
        let result = self.fit(model, dataset, 0, None)?;
        let conceptors = self.layer_conceptors(model, dataset)?;
        Ok((ConceptorBank::new(conceptors), result))
    }

    /// Draws the `conceptor_batch` inputs used for overlap analysis.
    pub fn overlap_sample(&mut self, dataset: &Dataset) -> Result<FeatureBatch> {
        let size = self.schedule.conceptor_batch.min(dataset.split(Split::Train).len());
        Ok(sample_batch(dataset, Split::Train, size, &mut self.rng)?.0)
    }

    /// Compares the new task's pre-training conceptors with the bank, layer by layer.
    pub fn analyze_overlap(
        &self,
        model: &MlpModel,
        bank: &ConceptorBank,
        sample: &FeatureBatch,
    ) -> Result<OverlapDecision> {
        analyze_overlap(model, bank, sample, &self.schedule)
    }

    /// Attaches adapters where the decision says so, trains with projected
    /// weight gradients, then folds the adapters into the weights.
    pub fn train_task(
        &mut self,
        model: &mut MlpModel,
        bank: &mut ConceptorBank,
        decision: &OverlapDecision,
        dataset: &Dataset,
        task: usize,
    ) -> Result<TaskResult> {
        bank.check_model(model)?;
        if decision.layers.len() != model.num_layers() {
            return Err(Error::param("decision", "one overlap entry per layer is required"));
        }
        for (l, overlap) in decision.layers.iter().enumerate() {
            if let (Correlation::High, Some(basis)) = (overlap.case, &overlap.basis) {
                let k = basis.rank();
                let mix = match self.schedule.adapter_init {
                    AdapterInit::Zero => DMatrix::zeros(k, k),
                    AdapterInit::Gaussian { std } => {
                        let normal = Normal::new(0.0, std).map_err(|e| Error::param("adapter_init.std", e.to_string()))?;
                        DMatrix::from_fn(k, k, |_, _| normal.sample(&mut self.rng))
                    }
                };
                model.layers_mut()[l].attach_adapter(basis.clone(), mix)?;
            }
        }
        let result = self.fit(model, dataset, task, Some(bank.conceptors()))?;
        for (layer, folded) in model.fold_adapters().into_iter().enumerate() {
            if let Some(a) = folded {
                bank.archive.push(AdapterRecord {
                    task,
                    layer,
                    basis: a.basis,
                    mix: a.mix,
                });
            }
        }
        Ok(result)
    }

    /// Merges post-training conceptors into the bank: `C_t = C_post OR C_{t-1}`.
    pub fn consolidate(&mut self, model: &MlpModel, bank: &mut ConceptorBank, dataset: &Dataset) -> Result<()> {
        bank.check_model(model)?;
        let post = self.layer_conceptors(model, dataset)?;
        for (layer, (merged, fresh)) in bank.conceptors.iter_mut().zip(post).enumerate() {
            let before = merged.capacity();
            *merged = fresh.or_with_tol(merged, self.schedule.rank_tol)?;
            if merged.capacity() < before - CAPACITY_SLACK {
                return Err(Error::Invariant(format!(
                    "layer {layer} bank capacity fell from {before} to {}",
                    merged.capacity()
                )));
            }
        }
        Ok(())
    }

    /// Trains on every task in order and fills one accuracy-matrix row per task.
    pub fn run_sequence(&mut self, model: &mut MlpModel, tasks: &TaskSequence, method: Method) -> Result<SequenceOutcome> {
        if tasks.is_empty() {
            return Err(Error::param("tasks", "need at least one task"));
        }
        if tasks.dim() != model.input_dim() || tasks.classes() != model.num_classes() {
            return Err(Error::param(
                "model",
                format!(
                    "model maps {} -> {} but tasks are {} -> {}",
                    model.input_dim(),
                    model.num_classes(),
                    tasks.dim(),
                    tasks.classes()
                ),
            ));
        }
        self.schedule.validate(&model.layer_input_dims())?;

        let mut matrix = AccuracyMatrix::with_tasks(tasks.len())?;
        let mut outcome_results = Vec::new();
        let mut overlaps = Vec::new();
        let mut capacities = Vec::new();
        let mut wall_times = Vec::new();
        let mut bank: Option<ConceptorBank> = None;

        for (t, dataset) in tasks.tasks().iter().enumerate() {
            let started = Instant::now();
            let result = match (method, bank.as_mut()) {
                (Method::Naive, _) => self.fit(model, dataset, t, None)?,
                (Method::Codecl, None) => {
                    let (first_bank, result) = self.train_first_task(model, dataset)?;
                    bank = Some(first_bank);
                    result
                }
                (Method::Codecl, Some(bank)) => {
                    let sample = self.overlap_sample(dataset)?;
                    let decision = self.analyze_overlap(model, bank, &sample)?;
                    let summary = decision.summary();
                    self.sink.record(&ProgressRecord::Overlap {
                        task: t,
                        layers: summary.clone(),
                    })?;
                    overlaps.push(summary);
                    let result = self.train_task(model, bank, &decision, dataset, t)?;
                    self.consolidate(model, bank, dataset)?;
                    result
                }
            };
            wall_times.push(started.elapsed().as_secs_f64());
            outcome_results.push(result);

            let row = tasks.tasks()[..=t]
                .iter()
                .map(|d| accuracy(model, d, Split::Test))
                .collect::<Result<Vec<_>>>()?;
            matrix.push_row(row)?;
            let caps = bank.as_ref().map(ConceptorBank::capacities);
            if let Some(c) = &caps {
                capacities.push(c.clone());
            }
            self.sink.record(&ProgressRecord::TaskDone {
                task: t,
                test_accuracies: matrix.row(t).to_vec(),
                capacities: caps,
            })?;
        }

        Ok(SequenceOutcome {
            matrix,
            task_results: outcome_results,
            overlaps,
            capacities,
            bank,
            wall_times,
        })
    }

    fn layer_conceptors(&mut self, model: &MlpModel, dataset: &Dataset) -> Result<Vec<Conceptor>> {
        let sample = self.overlap_sample(dataset)?;
        let trace = model.forward(&sample)?;
        trace
            .inputs
            .into_iter()
            .map(|x| Conceptor::from_batch(&FeatureBatch::new(x)?, self.schedule.aperture))
            .collect()
    }

    /// Minibatch SGD with optional gradient projection and plateau control.
    fn fit(
        &mut self,
        model: &mut MlpModel,
        dataset: &Dataset,
        task: usize,
        projection: Option<&[Conceptor]>,
    ) -> Result<TaskResult> {
        if dataset.split(Split::Train).is_empty() {
            return Err(Error::Data(format!("task {task} has an empty training split")));
        }
        let has_validation = !dataset.split(Split::Validation).is_empty();
        let mut plateau = PlateauScheduler::new(&self.schedule);
        let mut train_losses = Vec::new();
        let mut val_accuracies = Vec::new();
        let mut epochs_run = 0;
        for epoch in 0..self.schedule.epochs {
            if plateau.should_stop() {
                break;
            }
            let eta = plateau.learning_rate();
            let batches = epoch_batches(dataset, Split::Train, self.schedule.batch_size, &mut self.rng)?;
            let mut loss_sum = 0.0;
            for indices in &batches {
                let (x, y) = dataset.gather_batch(indices)?;
                let trace = model.forward(&x)?;
                let (loss, mut grads) = model.loss_and_backward(&trace, &y)?;
                if let Some(bank) = projection {
                    grads.project(bank)?;
                }
                model.sgd_step(&grads, eta)?;
                loss_sum += loss;
            }
            let train_loss = loss_sum / batches.len() as f64;
            let val = if has_validation {
                Some(accuracy(model, dataset, Split::Validation)?)
            } else {
                None
            };
            self.sink.record(&ProgressRecord::Epoch {
                task,
                epoch,
                train_loss,
                val_accuracy: val,
                learning_rate: eta,
            })?;
            train_losses.push(train_loss);
            val_accuracies.push(val);
            epochs_run = epoch + 1;
            if let Some(v) = val {
                plateau.observe(v);
            }
        }
        Ok(TaskResult {
            task,
            epochs_run,
            final_learning_rate: plateau.learning_rate(),
            train_losses,
            val_accuracies,
        })
    }
}

/// Per layer: `C_and = C_pre AND C_prev`, ratio `capacity(C_and) / capacity(C_prev)`,
/// and the top-K directions of `C_and` when the ratio exceeds epsilon.
pub fn analyze_overlap(
    model: &MlpModel,
    bank: &ConceptorBank,
    sample: &FeatureBatch,
    schedule: &TrainSchedule,
) -> Result<OverlapDecision> {
    bank.check_model(model)?;
    let trace = model.forward(sample)?;
    let mut layers = Vec::with_capacity(model.num_layers());
    for (x, prev) in trace.inputs.into_iter().zip(bank.conceptors()) {
        let pre = Conceptor::from_batch(&FeatureBatch::new(x)?, schedule.aperture)?;
        let and = pre.and_with_tol(prev, schedule.rank_tol)?;
        let prev_capacity = prev.capacity();
        let and_capacity = and.capacity();
        let ratio = if prev_capacity > 0.0 { and_capacity / prev_capacity } else { 0.0 };
        let (case, basis) = if ratio > schedule.epsilon {
            (Correlation::High, Some(and.top_k_directions(schedule.free_dims.min(and.dim()))?))
        } else {
            (Correlation::Low, None)
        };
        layers.push(LayerOverlap {
            ratio,
            and_capacity,
            prev_capacity,
            case,
            basis,
        });
    }
    Ok(OverlapDecision { layers })
}
