//! JSON model checkpoints.
//!
//! ```json
//! {
//!   "format": "codecl-mlp",
//!   "version": 1,
//!   "layers": [
//!     { "in_dim": 784, "out_dim": 100, "weight": [ /* out_dim * in_dim, row-major */ ],
//!       "adapter": null }
//!   ],
//!   "adapters": [
//!     { "task": 3, "layer": 1, "in_dim": 100, "free_dims": 80,
//!       "basis": [ /* in_dim * free_dims, row-major */ ],
//!       "mix": [ /* free_dims * free_dims, row-major */ ] }
//!   ]
//! }
//! ```
//!
//! `adapter` on a layer is an attached, not yet folded adapter with the same
//! fields as an archive entry minus `task` and `layer`. `adapters` is the
//! archive of folded adapters, kept for memory accounting only.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::conceptor::OrthonormalBasis;
use crate::error::{Error, Result};
use crate::harness::experiment::write_atomic;
use crate::network::{LinearLayer, MlpModel};
use crate::trainer::{AdapterRecord, ConceptorBank};

pub const FORMAT: &str = "codecl-mlp";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterData {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<usize>,
    pub in_dim: usize,
    pub free_dims: usize,
    pub basis: Vec<f64>,
    pub mix: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerData {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub adapter: Option<AdapterData>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub layers: Vec<LayerData>,
    #[serde(default)]
    pub adapters: Vec<AdapterData>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn from_row_major(rows: usize, cols: usize, data: &[f64], what: &str) -> Result<DMatrix<f64>> {
    if data.len() != rows * cols {
        return Err(Error::Data(format!(
            "{what} has {} values, expected {rows} x {cols}",
            data.len()
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!("{what} contains non-finite values")));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

fn adapter_data(basis: &OrthonormalBasis, mix: &DMatrix<f64>, task: Option<usize>, layer: Option<usize>) -> AdapterData {
    AdapterData {
        task,
        layer,
        in_dim: basis.dim(),
        free_dims: basis.rank(),
        basis: row_major(basis.matrix()),
        mix: row_major(mix),
    }
}

impl AdapterData {
    fn decode(&self, what: &str) -> Result<(OrthonormalBasis, DMatrix<f64>)> {
        let basis = from_row_major(self.in_dim, self.free_dims, &self.basis, what)?;
        let mix = from_row_major(self.free_dims, self.free_dims, &self.mix, what)?;
        Ok((OrthonormalBasis::new(basis)?, mix))
    }
}

impl Checkpoint {
    pub fn from_model(model: &MlpModel, bank: Option<&ConceptorBank>) -> Self {
        let layers = model
            .layers()
            .iter()
            .map(|l| LayerData {
                in_dim: l.in_dim(),
                out_dim: l.out_dim(),
                weight: row_major(l.weight()),
                adapter: l.adapter().map(|a| adapter_data(&a.basis, &a.mix, None, None)),
            })
            .collect();
        let adapters = bank
            .map(|b| {
                b.archive()
                    .iter()
                    .map(|r| adapter_data(&r.basis, &r.mix, Some(r.task), Some(r.layer)))
                    .collect()
            })
            .unwrap_or_default();
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            layers,
            adapters,
        }
    }

    pub fn to_model(&self) -> Result<MlpModel> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let mut layer = LinearLayer::new(from_row_major(l.out_dim, l.in_dim, &l.weight, &format!("layer {i} weight"))?);
                if let Some(a) = &l.adapter {
                    let (basis, mix) = a.decode(&format!("layer {i} adapter"))?;
                    layer.attach_adapter(basis, mix)?;
                }
                Ok(layer)
            })
            .collect::<Result<Vec<_>>>()?;
        MlpModel::new(layers)
    }

    /// Archived adapters as records.
    pub fn archive(&self) -> Result<Vec<AdapterRecord>> {
        self.adapters
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let (basis, mix) = a.decode(&format!("archived adapter {i}"))?;
                Ok(AdapterRecord {
                    task: a.task.ok_or_else(|| Error::Data(format!("archived adapter {i} has no task")))?,
                    layer: a.layer.ok_or_else(|| Error::Data(format!("archived adapter {i} has no layer")))?,
                    basis,
                    mix,
                })
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::random::gaussian_matrix;

    #[test]
    fn round_trip_with_adapter() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut model = MlpModel::glorot(&[5, 4, 3], &mut rng).unwrap();
        let q = crate::random::orthogonal_matrix(4, &mut rng);
        let basis = OrthonormalBasis::new(q.columns(0, 2).into_owned()).unwrap();
        model.layers_mut()[1]
            .attach_adapter(basis, gaussian_matrix(2, 2, &mut rng))
            .unwrap();
        let ckpt = Checkpoint::from_model(&model, None);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, ckpt);
        let back = loaded.to_model().unwrap();
        let x = gaussian_matrix(3, 5, &mut rng);
        assert_eq!(back.logits(&x).unwrap(), model.logits(&x).unwrap());
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = MlpModel::glorot(&[3, 2], &mut rng).unwrap();
        let mut ckpt = Checkpoint::from_model(&model, None);
        ckpt.layers[0].weight.pop();
        assert!(matches!(ckpt.to_model(), Err(Error::Data(_))));
        let mut ckpt = Checkpoint::from_model(&model, None);
        ckpt.version = 9;
        assert!(ckpt.to_model().is_err());
    }

    #[test]
    fn weights_are_row_major() {
        let model = MlpModel::new(vec![LinearLayer::new(DMatrix::from_row_slice(2, 3, &[1., 2., 3., 4., 5., 6.]))]).unwrap();
        let ckpt = Checkpoint::from_model(&model, None);
        assert_eq!(ckpt.layers[0].weight, vec![1., 2., 3., 4., 5., 6.]);
    }
}
