//! Float counts for the conceptor bank and the per-task adapters.

use serde::{Deserialize, Serialize};

use crate::trainer::ConceptorBank;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMemory {
    pub layer: usize,
    pub input_dim: usize,
    /// `n^2`
    pub conceptor_floats: usize,
    /// `nK + K^2`
    pub adapter_floats_per_task: usize,
    /// `T (nK + K^2)`
    pub adapter_floats_total: usize,
    /// Floats actually held in the adapter archive for this layer.
    pub archived_adapter_floats: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub tasks: usize,
    pub free_dims: usize,
    pub layers: Vec<LayerMemory>,
    pub conceptor_floats: usize,
    pub adapter_floats: usize,
    pub archived_adapter_floats: usize,
    /// `conceptor_floats + adapter_floats`
    pub total_floats: usize,
}

/// Worst-case memory for `tasks` tasks with `free_dims` adapter directions per layer.
pub fn memory_report(bank: &ConceptorBank, free_dims: usize, tasks: usize) -> MemoryReport {
    let k = free_dims;
    let layers: Vec<LayerMemory> = bank
        .layer_dims()
        .into_iter()
        .enumerate()
        .map(|(layer, n)| {
            let per_task = n * k + k * k;
            let archived = bank
                .archive()
                .iter()
                .filter(|r| r.layer == layer)
                .map(|r| r.basis.dim() * r.basis.rank() + r.mix.len())
                .sum();
            LayerMemory {
                layer,
                input_dim: n,
                conceptor_floats: n * n,
                adapter_floats_per_task: per_task,
                adapter_floats_total: tasks * per_task,
                archived_adapter_floats: archived,
            }
        })
        .collect();
    let conceptor_floats = layers.iter().map(|l| l.conceptor_floats).sum();
    let adapter_floats = layers.iter().map(|l| l.adapter_floats_total).sum();
    let archived_adapter_floats = layers.iter().map(|l| l.archived_adapter_floats).sum();
    MemoryReport {
        tasks,
        free_dims,
        layers,
        conceptor_floats,
        adapter_floats,
        archived_adapter_floats,
        total_floats: conceptor_floats + adapter_floats,
    }
}
