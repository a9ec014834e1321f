//! Fully connected regression network: ReLU hidden layers, identity output,
//! mean Huber loss and full-batch Adam.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::optim::{AdamState, OptimError};

pub const DEFAULT_HIDDEN: [usize; 4] = [64, 32, 16, 8];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NeuralError {
    #[error("input has {got} features, network expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{rows} input rows but {targets} targets")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("layer {layer}: {reason}")]
    BadLayer { layer: usize, reason: String },
    #[error("network has no layers")]
    Empty,
    #[error("non-finite activation in layer {0}")]
    NonFiniteActivation(usize),
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize, history: Vec<f64> },
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("parameter vector has {got} entries, network has {expected}")]
    ParamCount { expected: usize, got: usize },
    #[error("no training rows")]
    NoData,
    #[error(transparent)]
    Optim(#[from] OptimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    // subgradient 0 at z = 0
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

/// `h = g(W h_prev + b)`, with `W` stored as `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: DMatrix<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkFile", into = "NetworkFile")]
pub struct DenseNetwork {
    layers: Vec<DenseLayer>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    architecture: Vec<usize>,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    activation: Activation,
    /// Row-major, one row per output unit.
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl From<DenseNetwork> for NetworkFile {
    fn from(net: DenseNetwork) -> NetworkFile {
        NetworkFile {
            architecture: net.architecture(),
            layers: net
                .layers
                .into_iter()
                .map(|l| LayerFile {
                    activation: l.activation,
                    weights: l.weights.row_iter().map(|r| r.iter().copied().collect()).collect(),
                    bias: l.bias,
                })
                .collect(),
        }
    }
}

impl TryFrom<NetworkFile> for DenseNetwork {
    type Error = NeuralError;

    fn try_from(file: NetworkFile) -> Result<DenseNetwork, NeuralError> {
        let mut layers = Vec::with_capacity(file.layers.len());
        for (i, l) in file.layers.into_iter().enumerate() {
            let rows = l.weights.len();
            let cols = l.weights.first().map_or(0, Vec::len);
            if rows == 0 || cols == 0 || l.weights.iter().any(|r| r.len() != cols) {
                return Err(NeuralError::BadLayer { layer: i, reason: "ragged or empty weight matrix".into() });
            }
            let flat: Vec<f64> = l.weights.into_iter().flatten().collect();
            layers.push(DenseLayer {
                weights: DMatrix::from_row_slice(rows, cols, &flat),
                bias: l.bias,
                activation: l.activation,
            });
        }
        let net = DenseNetwork::from_layers(layers)?;
        if net.architecture() != file.architecture {
            return Err(NeuralError::BadLayer {
                layer: 0,
                reason: format!("architecture {:?} does not match layers {:?}", file.architecture, net.architecture()),
            });
        }
        Ok(net)
    }
}

impl DenseNetwork {
    /// He-uniform initialization (`U(±√(6/fan_in))`), zero biases, ReLU on
    /// every hidden layer and a single identity output.
    pub fn new(input_dim: usize, hidden: &[usize], seed: u64) -> Result<DenseNetwork, NeuralError> {
        if input_dim == 0 || hidden.contains(&0) {
            return Err(NeuralError::BadConfig("layer widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let limit = (6.0 / w[0] as f64).sqrt();
                let weights = DMatrix::from_fn(w[1], w[0], |_, _| rng.random_range(-limit..limit));
                let activation = if i + 2 == widths.len() { Activation::Identity } else { Activation::Relu };
                DenseLayer { weights, bias: vec![0.0; w[1]], activation }
            })
            .collect();
        Ok(DenseNetwork { layers })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<DenseNetwork, NeuralError> {
        if layers.is_empty() {
            return Err(NeuralError::Empty);
        }
        for (i, l) in layers.iter().enumerate() {
            let bad = |reason: &str| Err(NeuralError::BadLayer { layer: i, reason: reason.into() });
            if l.outputs() == 0 || l.inputs() == 0 {
                return bad("empty weight matrix");
            }
            if l.bias.len() != l.outputs() {
                return bad("bias length differs from output width");
            }
            if i > 0 && layers[i - 1].outputs() != l.inputs() {
                return bad("input width differs from previous layer's output");
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return bad("non-finite parameter");
            }
        }
        let last = layers.last().unwrap();
        if last.outputs() != 1 || last.activation != Activation::Identity {
            return Err(NeuralError::BadLayer {
                layer: layers.len() - 1,
                reason: "output layer must be a single identity unit".into(),
            });
        }
        Ok(DenseNetwork { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    /// Widths from input to output, e.g. `[d, 64, 32, 16, 8, 1]`.
    pub fn architecture(&self) -> Vec<usize> {
        let mut a = vec![self.input_dim()];
        a.extend(self.layers.iter().map(DenseLayer::outputs));
        a
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Layer by layer, weights row-major then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            for r in l.weights.row_iter() {
                p.extend(r.iter());
            }
            p.extend(&l.bias);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<(), NeuralError> {
        if p.len() != self.n_params() {
            return Err(NeuralError::ParamCount { expected: self.n_params(), got: p.len() });
        }
        let mut k = 0;
        for l in &mut self.layers {
            let (rows, cols) = l.weights.shape();
            for i in 0..rows {
                for j in 0..cols {
                    l.weights[(i, j)] = p[k];
                    k += 1;
                }
            }
            for b in &mut l.bias {
                *b = p[k];
                k += 1;
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64, NeuralError> {
        let m = DMatrix::from_row_slice(1, x.len(), x);
        Ok(self.forward_batch(&m)?[0])
    }

    /// One prediction per row of `x`.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Result<Vec<f64>, NeuralError> {
        let (_, acts) = self.propagate(x)?;
        Ok(acts.last().unwrap().iter().copied().collect())
    }

    /// Pre-activations and activations (`acts[0]` is the input) for each layer.
    fn propagate(&self, x: &DMatrix<f64>) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>), NeuralError> {
        if x.ncols() != self.input_dim() {
            return Err(NeuralError::DimensionMismatch { expected: self.input_dim(), got: x.ncols() });
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = acts.last().unwrap() * l.weights.transpose();
            for mut row in z.row_iter_mut() {
                for (v, b) in row.iter_mut().zip(&l.bias) {
                    *v += b;
                }
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(NeuralError::NonFiniteActivation(i));
            }
            let h = z.map(|v| l.activation.apply(v));
            pre.push(z);
            acts.push(h);
        }
        Ok((pre, acts))
    }
}

fn huber(e: f64, delta: f64) -> f64 {
    if e.abs() <= delta {
        0.5 * e * e
    } else {
        delta * (e.abs() - 0.5 * delta)
    }
}

/// ∂huber/∂e: the residual, clipped to ±δ.
fn huber_slope(e: f64, delta: f64) -> f64 {
    e.clamp(-delta, delta)
}

/// Mean Huber loss of residuals `y − ŷ`.
pub fn huber_loss(y: &[f64], y_hat: &[f64], delta: f64) -> Result<f64, NeuralError> {
    if y.len() != y_hat.len() {
        return Err(NeuralError::LengthMismatch { rows: y_hat.len(), targets: y.len() });
    }
    if y.is_empty() {
        return Err(NeuralError::NoData);
    }
    let total: f64 = y.iter().zip(y_hat).map(|(a, b)| huber(a - b, delta)).sum();
    Ok(total / y.len() as f64)
}

/// Mean Huber loss and its gradient, laid out like [`DenseNetwork::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    pub grad: Vec<f64>,
}

pub fn backward(net: &DenseNetwork, x: &DMatrix<f64>, y: &[f64], delta: f64) -> Result<Gradients, NeuralError> {
    if x.nrows() != y.len() {
        return Err(NeuralError::LengthMismatch { rows: x.nrows(), targets: y.len() });
    }
    if y.is_empty() {
        return Err(NeuralError::NoData);
    }
    let (pre, acts) = net.propagate(x)?;
    let out = acts.last().unwrap();
    let n = y.len() as f64;
    let loss = y.iter().zip(out.iter()).map(|(t, p)| huber(t - p, delta)).sum::<f64>() / n;

    // dL/dŷ = −ψ(y − ŷ)/n
    let mut upstream = DMatrix::from_fn(y.len(), 1, |i, _| -huber_slope(y[i] - out[(i, 0)], delta) / n);
    let mut per_layer = Vec::with_capacity(net.layers.len());
    for (i, l) in net.layers.iter().enumerate().rev() {
        let dz = upstream.zip_map(&pre[i], |u, z| u * l.activation.derivative(z));
        let dw = dz.transpose() * &acts[i];
        let db: Vec<f64> = dz.column_iter().map(|c| c.sum()).collect();
        if i > 0 {
            upstream = &dz * &l.weights;
        }
        per_layer.push((dw, db));
    }
    per_layer.reverse();
    let mut grad = Vec::with_capacity(net.n_params());
    for (dw, db) in per_layer {
        for r in dw.row_iter() {
            grad.extend(r.iter());
        }
        grad.extend(db);
    }
    Ok(Gradients { loss, grad })
}

/// Stop once the loss improved by less than `tol` (relative) over `window` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Plateau {
    pub window: usize,
    pub tol: f64,
}

impl Default for Plateau {
    fn default() -> Self {
        Plateau { window: 20, tol: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub huber_delta: f64,
    pub seed: u64,
    pub plateau: Option<Plateau>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: DEFAULT_HIDDEN.to_vec(),
            learning_rate: 0.001,
            epochs: 200,
            huber_delta: 0.1,
            seed: 0,
            plateau: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NeuralError::BadConfig(format!("learning rate {}", self.learning_rate)));
        }
        if !(self.huber_delta > 0.0 && self.huber_delta.is_finite()) {
            return Err(NeuralError::BadConfig(format!("huber delta {}", self.huber_delta)));
        }
        if let Some(p) = self.plateau {
            if p.window == 0 || !(p.tol >= 0.0) {
                return Err(NeuralError::BadConfig("plateau window must be ≥ 1 and tol ≥ 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedDnn {
    pub net: DenseNetwork,
    /// `history[0]` is the loss at initialization; one entry per completed epoch follows.
    pub history: Vec<f64>,
}

pub fn train_dnn(x: &DMatrix<f64>, y: &[f64], cfg: &TrainConfig) -> Result<TrainedDnn, NeuralError> {
    cfg.validate()?;
    if x.nrows() != y.len() {
        return Err(NeuralError::LengthMismatch { rows: x.nrows(), targets: y.len() });
    }
    let mut net = DenseNetwork::new(x.ncols(), &cfg.hidden, cfg.seed)?;
    let mut params = net.params();
    let mut adam = AdamState::new(params.len(), cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..cfg.epochs {
        let g = match backward(&net, x, y, cfg.huber_delta) {
            Ok(g) if g.loss.is_finite() => g,
            _ => return Err(NeuralError::NonFiniteLoss { epoch, history }),
        };
        history.push(g.loss);
        if let Some(p) = cfg.plateau {
            if history.len() > p.window {
                let old = history[history.len() - 1 - p.window];
                let improvement = (old - g.loss) / old.abs().max(f64::MIN_POSITIVE);
                if improvement < p.tol {
                    log::debug!("plateau at epoch {epoch}, loss {}", g.loss);
                    return Ok(TrainedDnn { net, history });
                }
            }
        }
        if adam.step(&mut params, &g.grad).is_err() {
            return Err(NeuralError::NonFiniteLoss { epoch, history });
        }
        net.set_params(&params)?;
    }
    let final_loss = net
        .forward_batch(x)
        .ok()
        .and_then(|p| huber_loss(y, &p, cfg.huber_delta).ok())
        .filter(|l| l.is_finite());
    match final_loss {
        Some(l) => history.push(l),
        None => return Err(NeuralError::NonFiniteLoss { epoch: cfg.epochs, history }),
    }
    Ok(TrainedDnn { net, history })
}
