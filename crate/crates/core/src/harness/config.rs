//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::PixelScaling;
use crate::error::{Error, Result};
use crate::trainer::{Method, TrainSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    PermutedMnist,
    Synthetic,
}

/// Parameters of the synthetic subspace benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub overlap: f64,
    pub samples_per_task: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: Benchmark,
    pub method: Method,
    pub tasks: usize,
    /// Hidden layer widths; input and output widths come from the benchmark.
    pub hidden: Vec<usize>,
    pub seed: u64,
    /// MNIST input scaling; ignored by the synthetic benchmark.
    #[serde(default)]
    pub pixel_scaling: PixelScaling,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
    pub schedule: TrainSchedule,
}

impl ExperimentConfig {
    /// Ten permuted-MNIST tasks on a 784-100-100-10 network.
    pub fn permuted_mnist(method: Method, seed: u64) -> Self {
        Self {
            benchmark: Benchmark::PermutedMnist,
            method,
            tasks: 10,
            hidden: vec![100, 100],
            seed,
            pixel_scaling: PixelScaling::Unit,
            out_dir: None,
            data_dir: None,
            synthetic: None,
            schedule: TrainSchedule {
                seed,
                ..TrainSchedule::permuted_mnist()
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(text).map_err(|e| Error::param("config", e.to_string()))?;
        cfg.schedule.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Replaces the seed everywhere it is used.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.schedule.seed = seed;
    }

    pub fn input_dim(&self) -> Result<usize> {
        match self.benchmark {
            Benchmark::PermutedMnist => Ok(784),
            Benchmark::Synthetic => Ok(self.synthetic_params()?.dim),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self.benchmark {
            Benchmark::PermutedMnist => 10,
            Benchmark::Synthetic => 2,
        }
    }

    /// Full layer widths, input to output.
    pub fn layer_dims(&self) -> Result<Vec<usize>> {
        let mut dims = vec![self.input_dim()?];
        dims.extend(&self.hidden);
        dims.push(self.num_classes());
        Ok(dims)
    }

    pub fn synthetic_params(&self) -> Result<&SyntheticConfig> {
        self.synthetic
            .as_ref()
            .ok_or_else(|| Error::param("synthetic", "required when benchmark is \"synthetic\""))
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks == 0 {
            return Err(Error::param("tasks", "must be positive"));
        }
        if let Some(i) = self.hidden.iter().position(|&h| h == 0) {
            return Err(Error::param(format!("hidden[{i}]"), "layer width must be positive"));
        }
        if self.schedule.seed != self.seed {
            return Err(Error::param("schedule.seed", "must equal the top-level seed"));
        }
        if self.benchmark == Benchmark::Synthetic {
            let s = self.synthetic_params()?;
            if s.dim < 4 {
                return Err(Error::param("synthetic.dim", "must be at least 4"));
            }
            if !(0.0..=1.0).contains(&s.overlap) {
                return Err(Error::param("synthetic.overlap", "must lie in [0, 1]"));
            }
            if s.samples_per_task < 10 {
                return Err(Error::param("synthetic.samples_per_task", "must be at least 10"));
            }
            if self.tasks < 2 {
                return Err(Error::param("tasks", "the synthetic benchmark needs at least 2 tasks"));
            }
        }
        let dims = self.layer_dims()?;
        self.schedule
            .validate(&dims[..dims.len() - 1])
            .map_err(|e| match e {
                Error::Parameter { field, reason } => Error::Parameter {
                    field: format!("schedule.{field}"),
                    reason,
                },
                other => other,
            })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
