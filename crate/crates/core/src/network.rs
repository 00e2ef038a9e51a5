//! Bias-free multilayer perceptron with hand-written backpropagation.
//!
//! Weights are stored `out x in` and batches are row-major (`b x in`), so a
//! layer computes `Z = X W_eff^T`. Conceptors act on the input side, which
//! makes gradient projection a right-multiplication of `dW`.

use nalgebra::DMatrix;
use rand::Rng;

use crate::conceptor::{Conceptor, FeatureBatch, OrthonormalBasis};
use crate::error::{Error, Result};

/// Low-rank adapter confined to `span(basis)`: `W_eff = W + W U M U^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adapter {
    pub basis: OrthonormalBasis,
    pub mix: DMatrix<f64>,
}

impl Adapter {
    pub fn free_dims(&self) -> usize {
        self.basis.rank()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    weight: DMatrix<f64>,
    adapter: Option<Adapter>,
}

impl LinearLayer {
    pub fn new(weight: DMatrix<f64>) -> Self {
        Self { weight, adapter: None }
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self::new(DMatrix::zeros(out_dim, in_dim))
    }

    /// Uniform in `+-sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot<R: Rng + ?Sized>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        Self::new(DMatrix::from_fn(out_dim, in_dim, |_, _| rng.random_range(-limit..limit)))
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.weight
    }

    pub fn adapter(&self) -> Option<&Adapter> {
        self.adapter.as_ref()
    }

    pub fn adapter_mut(&mut self) -> Option<&mut Adapter> {
        self.adapter.as_mut()
    }

    pub fn effective_weight(&self) -> DMatrix<f64> {
        match &self.adapter {
            None => self.weight.clone(),
            Some(a) => {
                let u = a.basis.matrix();
                &self.weight + (&self.weight * u) * &a.mix * u.transpose()
            }
        }
    }

    /// Installs an adapter over `basis` with initial mixing matrix `mix`.
    /// Replaces any existing adapter.
    pub fn attach_adapter(&mut self, basis: OrthonormalBasis, mix: DMatrix<f64>) -> Result<()> {
        if basis.dim() != self.in_dim() {
            return Err(Error::param(
                "basis",
                format!("has {} rows but the layer input dim is {}", basis.dim(), self.in_dim()),
            ));
        }
        let k = basis.rank();
        if mix.nrows() != k || mix.ncols() != k {
            return Err(Error::param(
                "mix",
                format!("expected {k}x{k}, got {}x{}", mix.nrows(), mix.ncols()),
            ));
        }
        // Re-check orthonormality: bases can also arrive from checkpoints.
        let basis = OrthonormalBasis::new(basis.into_matrix())?;
        self.adapter = Some(Adapter { basis, mix });
        Ok(())
    }

    /// Folds the adapter into the base weights, `W <- W + W U M U^T`, and
    /// returns it. No-op without an adapter.
    pub fn fold_adapter(&mut self) -> Option<Adapter> {
        let eff = self.effective_weight();
        let adapter = self.adapter.take()?;
        self.weight = eff;
        Some(adapter)
    }
}

/// Stack of bias-free linear layers with ReLU between them; raw logits out.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<LinearLayer>,
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input to each layer; `inputs[0]` is the raw batch.
    pub inputs: Vec<DMatrix<f64>>,
    /// `inputs[l] * W_eff[l]^T` for every layer.
    pub pre_activations: Vec<DMatrix<f64>>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &DMatrix<f64> {
        self.pre_activations.last().expect("model has at least one layer")
    }
}

/// Per-layer gradients: `weights[l]` for `W`, `mixes[l]` for `M` when an adapter is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<DMatrix<f64>>,
    pub mixes: Vec<Option<DMatrix<f64>>>,
}

impl MlpModel {
    pub fn new(layers: Vec<LinearLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::param("layers", "model needs at least one layer"));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::param(
                    "layers",
                    format!(
                        "layer {l} outputs {} but layer {} expects {}",
                        pair[0].out_dim(),
                        l + 1,
                        pair[1].in_dim()
                    ),
                ));
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-initialised model with layer widths `dims = [in, h1, ..., out]`.
    pub fn glorot<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::param("dims", format!("need >= 2 positive widths, got {dims:?}")));
        }
        Self::new(dims.windows(2).map(|w| LinearLayer::glorot(w[1], w[0], rng)).collect())
    }

    pub fn layers(&self) -> &[LinearLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LinearLayer] {
        &mut self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Input dimension of every layer (the conceptor sizes).
    pub fn layer_input_dims(&self) -> Vec<usize> {
        self.layers.iter().map(LinearLayer::in_dim).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.adapter.as_ref().map_or(0, |a| a.mix.len()))
            .sum()
    }

    pub fn forward(&self, batch: &FeatureBatch) -> Result<ForwardTrace> {
        self.check_input(batch.cols())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut x = batch.matrix().clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = &x * layer.effective_weight().transpose();
            inputs.push(x);
            x = if l + 1 < self.layers.len() { relu(&z) } else { DMatrix::zeros(0, 0) };
            pre_activations.push(z);
        }
        Ok(ForwardTrace { inputs, pre_activations })
    }

    /// Logits only, without keeping intermediate activations.
    pub fn logits(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x.ncols())?;
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            h = &h * layer.effective_weight().transpose();
            if l + 1 < self.layers.len() {
                h.apply(|v| *v = v.max(0.0));
            }
        }
        Ok(h)
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        Ok(logits.row_iter().map(|row| argmax(row.iter().copied())).collect())
    }

    /// Mean softmax cross-entropy and its gradients w.r.t. every `W` and `M`.
    pub fn loss_and_backward(&self, trace: &ForwardTrace, labels: &[usize]) -> Result<(f64, GradientSet)> {
        let logits = trace.logits();
        let b = logits.nrows();
        let classes = logits.ncols();
        if labels.len() != b {
            return Err(Error::Data(format!("{} labels for a batch of {b}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Data(format!("label {bad} outside 0..{classes}")));
        }
        if trace.inputs.len() != self.layers.len() {
            return Err(Error::param("trace", "trace does not match the model depth"));
        }

        let (loss, mut dz) = softmax_cross_entropy(logits, labels);
        let depth = self.layers.len();
        let mut weights = vec![DMatrix::zeros(0, 0); depth];
        let mut mixes = vec![None; depth];
        for l in (0..depth).rev() {
            let layer = &self.layers[l];
            // G = dL/dW_eff
            let g = dz.tr_mul(&trace.inputs[l]);
            if l > 0 {
                let mut dx = &dz * layer.effective_weight();
                let pre = &trace.pre_activations[l - 1];
                dx.zip_apply(pre, |d, z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
                dz = dx;
            }
            match &layer.adapter {
                None => weights[l] = g,
                Some(a) => {
                    let u = a.basis.matrix();
                    let gu = &g * u;
                    let wu = &layer.weight * u;
                    mixes[l] = Some(wu.tr_mul(&gu));
                    weights[l] = &g + (&gu * a.mix.transpose()) * u.transpose();
                }
            }
        }
        Ok((loss, GradientSet { weights, mixes }))
    }

    /// `W <- W - eta dW` and `M <- M - eta dM` where present.
    pub fn sgd_step(&mut self, grads: &GradientSet, eta: f64) -> Result<()> {
        if grads.weights.len() != self.layers.len() {
            return Err(Error::param("grads", "gradient set does not match the model depth"));
        }
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let dw = &grads.weights[l];
            if dw.shape() != layer.weight.shape() {
                return Err(Error::param("grads", format!("layer {l} weight gradient has the wrong shape")));
            }
            layer.weight.zip_apply(dw, |w, g| *w -= eta * g);
            if let (Some(a), Some(dm)) = (layer.adapter.as_mut(), grads.mixes[l].as_ref()) {
                a.mix.zip_apply(dm, |m, g| *m -= eta * g);
            }
        }
        Ok(())
    }

    pub fn fold_adapters(&mut self) -> Vec<Option<Adapter>> {
        self.layers.iter_mut().map(LinearLayer::fold_adapter).collect()
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::param(
                "batch",
                format!("feature dim {cols} does not match model input {}", self.input_dim()),
            ));
        }
        Ok(())
    }
}

impl GradientSet {
    /// Right-multiplies every weight gradient by `I - C` of the matching layer.
    pub fn project(&mut self, bank: &[Conceptor]) -> Result<()> {
        if bank.len() != self.weights.len() {
            return Err(Error::param(
                "bank",
                format!("{} conceptors for {} layers", bank.len(), self.weights.len()),
            ));
        }
        for (l, (dw, c)) in self.weights.iter_mut().zip(bank).enumerate() {
            if c.dim() != dw.ncols() {
                return Err(Error::param(
                    "bank",
                    format!("layer {l}: conceptor dim {} vs input dim {}", c.dim(), dw.ncols()),
                ));
            }
            let dw_c = &*dw * c.matrix();
            *dw -= dw_c;
        }
        Ok(())
    }
}

/// Functional form of [`GradientSet::project`].
pub fn project_gradients(grads: &GradientSet, bank: &[Conceptor]) -> Result<GradientSet> {
    let mut out = grads.clone();
    out.project(bank)?;
    Ok(out)
}

fn relu(z: &DMatrix<f64>) -> DMatrix<f64> {
    z.map(|v| v.max(0.0))
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Mean cross-entropy and `dL/dlogits = (softmax - onehot) / b`.
fn softmax_cross_entropy(logits: &DMatrix<f64>, labels: &[usize]) -> (f64, DMatrix<f64>) {
    let b = logits.nrows();
    let mut grad = DMatrix::zeros(b, logits.ncols());
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.max();
        let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[y];
        for (j, z) in row.iter().enumerate() {
            grad[(i, j)] = (z - lse).exp() / b as f64;
        }
        grad[(i, y)] -= 1.0 / b as f64;
    }
    (total / b as f64, grad)
}
