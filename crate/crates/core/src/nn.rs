//! Dense feed-forward networks: forward evaluation, losses and reverse-mode
//! gradients.
//!
//! A layer maps `h ↦ σ(W h + b)` where `W` is stored row-major with one row
//! per output unit. The network `f` splits as `f = L ∘ f'`, where `L` is the
//! final layer and `f'` everything before it; [`Dnn::hidden_features`]
//! evaluates `f'`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("matrix entry {bad} is not finite")));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from nested rows; every row must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged matrix rows"));
        }
        Matrix::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Largest absolute entry (0 for an empty matrix).
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative, with the ReLU subgradient at 0 taken as 0.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One dense layer; `weights` is `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::invalid(format!(
                "bias length {} does not match {} output units",
                bias.len(),
                weights.rows()
            )));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("bias entries must be finite"));
        }
        Ok(Layer {
            weights,
            bias,
            activation,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    /// Pre-activations `W h + b`.
    pub fn pre_activation(&self, h: &[f64]) -> Vec<f64> {
        (0..self.outputs())
            .map(|j| {
                let row = self.weights.row(j);
                row.iter().zip(h).map(|(w, x)| w * x).sum::<f64>() + self.bias[j]
            })
            .collect()
    }

    pub fn apply(&self, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.inputs() {
            return Err(Error::invalid(format!(
                "layer expects {} inputs, got {}",
                self.inputs(),
                h.len()
            )));
        }
        let mut z = self.pre_activation(h);
        for v in &mut z {
            *v = self.activation.apply(*v);
        }
        Ok(z)
    }
}

/// Ordered stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Dnn {
    layers: Vec<Layer>,
}

impl Dnn {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a network needs at least one layer"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[1].inputs() != pair[0].outputs() {
                return Err(Error::invalid(format!(
                    "layer {} expects {} inputs but layer {k} emits {}",
                    k + 1,
                    pair[1].inputs(),
                    pair[0].outputs()
                )));
            }
        }
        Ok(Dnn { layers })
    }

    /// Random network with the given unit counts (`dims[0]` is the input
    /// dimension). Hidden layers use ReLU; the output layer uses `output`.
    /// Weights are Glorot-uniform, biases zero.
    pub fn random<R: Rng + ?Sized>(dims: &[usize], output: Activation, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid(format!("bad layer dims {dims:?}")));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for k in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[k], dims[k + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..=limit))
                .collect();
            let act = if k + 2 == dims.len() {
                output
            } else {
                Activation::Relu
            };
            layers.push(Layer::new(
                Matrix::from_vec(fan_out, fan_in, data)?,
                vec![0.0; fan_out],
                act,
            )?);
        }
        Dnn::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.final_layer().outputs()
    }

    pub fn final_layer(&self) -> &Layer {
        self.layers.last().expect("non-empty by construction")
    }

    /// Replaces the final layer's parameters, keeping its activation.
    pub fn set_final_parameters(&mut self, weights: Matrix, bias: Vec<f64>) -> Result<()> {
        let last = self.layers.last_mut().expect("non-empty by construction");
        if weights.rows() != last.outputs() || weights.cols() != last.inputs() {
            return Err(Error::invalid("final-layer weight shape mismatch"));
        }
        if bias.len() != last.outputs() {
            return Err(Error::invalid("final-layer bias length mismatch"));
        }
        last.weights = weights;
        last.bias = bias;
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut h = x.to_vec();
        for layer in &self.layers {
            h = layer.apply(&h)?;
        }
        Ok(h)
    }

    /// Inputs to the final layer for each datapoint. For a single-layer
    /// network this is the data itself.
    pub fn hidden_features(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let body = &self.layers[..self.layers.len() - 1];
        xs.iter()
            .map(|x| {
                if x.len() != self.input_dim() {
                    return Err(Error::invalid(format!(
                        "input has {} features, network expects {}",
                        x.len(),
                        self.input_dim()
                    )));
                }
                let mut h = x.clone();
                for layer in body {
                    h = layer.apply(&h)?;
                }
                Ok(h)
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum()
    }

    /// All parameters flattened layer by layer (weights then bias).
    pub fn flat_parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn load_flat_parameters(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                flat.len()
            )));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("parameter update", "non-finite parameter"));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.as_slice().len();
            l.weights.as_mut_slice().copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Serializes to the JSON snapshot format (see README).
    pub fn to_json(&self) -> String {
        let snap = Snapshot {
            format: SNAPSHOT_FORMAT.to_string(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerSnapshot {
                    inputs: l.inputs(),
                    outputs: l.outputs(),
                    activation: l.activation,
                    weights: l.weights.as_slice().to_vec(),
                    bias: l.bias.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&snap).expect("snapshot is always serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let snap: Snapshot =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("network snapshot: {e}")))?;
        if snap.format != SNAPSHOT_FORMAT {
            return Err(Error::Format(format!(
                "unknown snapshot format {:?}",
                snap.format
            )));
        }
        let layers = snap
            .layers
            .into_iter()
            .map(|l| {
                Layer::new(
                    Matrix::from_vec(l.outputs, l.inputs, l.weights)?,
                    l.bias,
                    l.activation,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Dnn::new(layers)
    }
}

const SNAPSHOT_FORMAT: &str = "gdsolver-dnn/1";

#[derive(Serialize, Deserialize)]
struct Snapshot {
    format: String,
    layers: Vec<LayerSnapshot>,
}

#[derive(Serialize, Deserialize)]
struct LayerSnapshot {
    inputs: usize,
    outputs: usize,
    activation: Activation,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    L1,
    SoftmaxCrossEntropy,
}

/// Supervision for a single datapoint.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Real(&'a [f64]),
    Class(usize),
}

fn check_target(pred: &[f64], target: Target<'_>, kind: LossKind) -> Result<()> {
    match (kind, target) {
        (LossKind::Mse | LossKind::L1, Target::Real(y)) if y.len() == pred.len() => Ok(()),
        (LossKind::SoftmaxCrossEntropy, Target::Class(c)) if c < pred.len() => Ok(()),
        _ => Err(Error::invalid(format!(
            "target {target:?} incompatible with {kind:?} on {} outputs",
            pred.len()
        ))),
    }
}

fn log_softmax_at(pred: &[f64], label: usize) -> f64 {
    let max = pred.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = pred.iter().map(|p| (p - max).exp()).sum::<f64>().ln() + max;
    pred[label] - lse
}

/// MSE is the mean of squared errors, L1 the sum of absolute errors, and
/// cross-entropy `-log softmax(pred)[label]`.
pub fn loss(pred: &[f64], target: Target<'_>, kind: LossKind) -> Result<f64> {
    check_target(pred, target, kind)?;
    Ok(match (kind, target) {
        (LossKind::Mse, Target::Real(y)) => {
            pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64
        }
        (LossKind::L1, Target::Real(y)) => pred.iter().zip(y).map(|(p, t)| (p - t).abs()).sum(),
        (LossKind::SoftmaxCrossEntropy, Target::Class(c)) => -log_softmax_at(pred, c),
        _ => unreachable!("checked above"),
    })
}

/// dLoss/dPred for one datapoint.
fn loss_gradient(pred: &[f64], target: Target<'_>, kind: LossKind) -> Vec<f64> {
    match (kind, target) {
        (LossKind::Mse, Target::Real(y)) => {
            let scale = 2.0 / pred.len() as f64;
            pred.iter().zip(y).map(|(p, t)| scale * (p - t)).collect()
        }
        (LossKind::L1, Target::Real(y)) => pred
            .iter()
            .zip(y)
            .map(|(p, t)| {
                let d = p - t;
                if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })
            .collect(),
        (LossKind::SoftmaxCrossEntropy, Target::Class(c)) => {
            let max = pred.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = pred.iter().map(|p| (p - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            exps.iter()
                .enumerate()
                .map(|(j, e)| e / sum - if j == c { 1.0 } else { 0.0 })
                .collect()
        }
        _ => unreachable!("validated by check_target"),
    }
}

/// Per-layer gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Gradients {
    fn zeros_like(dnn: &Dnn) -> Self {
        Gradients {
            layers: dnn
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: Matrix::zeros(l.outputs(), l.inputs()),
                    bias: vec![0.0; l.outputs()],
                })
                .collect(),
        }
    }

    /// Flattened in the same order as [`Dnn::flat_parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }
}

/// Mean-over-batch gradient of the loss with respect to every weight and
/// bias.
pub fn backward(dnn: &Dnn, batch: &[(&[f64], Target<'_>)], kind: LossKind) -> Result<Gradients> {
    if batch.is_empty() {
        return Err(Error::invalid("backward needs a non-empty batch"));
    }
    let mut grads = Gradients::zeros_like(dnn);
    let nl = dnn.layers.len();
    let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(nl);
    let mut pres: Vec<Vec<f64>> = Vec::with_capacity(nl);

    for &(x, target) in batch {
        if x.len() != dnn.input_dim() {
            return Err(Error::invalid(format!(
                "input has {} features, network expects {}",
                x.len(),
                dnn.input_dim()
            )));
        }
        inputs.clear();
        pres.clear();
        let mut h = x.to_vec();
        for layer in &dnn.layers {
            let z = layer.pre_activation(&h);
            let next: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            inputs.push(std::mem::replace(&mut h, next));
            pres.push(z);
        }
        check_target(&h, target, kind)?;
        let mut delta = loss_gradient(&h, target, kind);

        for k in (0..nl).rev() {
            let layer = &dnn.layers[k];
            for (d, &z) in delta.iter_mut().zip(&pres[k]) {
                *d *= layer.activation.derivative(z);
            }
            let g = &mut grads.layers[k];
            let input = &inputs[k];
            let cols = layer.inputs();
            let gw = g.weights.as_mut_slice();
            for (j, &dj) in delta.iter().enumerate() {
                if dj == 0.0 {
                    continue;
                }
                g.bias[j] += dj;
                for (gi, &xi) in gw[j * cols..(j + 1) * cols].iter_mut().zip(input) {
                    *gi += dj * xi;
                }
            }
            if k > 0 {
                let mut prev = vec![0.0; cols];
                for (j, &dj) in delta.iter().enumerate() {
                    if dj == 0.0 {
                        continue;
                    }
                    for (p, &w) in prev.iter_mut().zip(layer.weights.row(j)) {
                        *p += w * dj;
                    }
                }
                delta = prev;
            }
        }
    }

    let scale = 1.0 / batch.len() as f64;
    for g in &mut grads.layers {
        for v in g.weights.as_mut_slice().iter_mut().chain(g.bias.iter_mut()) {
            *v *= scale;
            if !v.is_finite() {
                return Err(Error::numerical("backward", "non-finite gradient component"));
            }
        }
    }
    Ok(grads)
}

/// Index of the largest output; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (j, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = j;
        }
    }
    best
}
