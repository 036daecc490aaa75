//! Fully connected feed-forward regressor with one linear output neuron.
//!
//! Weights of a layer are stored row-major with shape `inputs × outputs`, so
//! `weights[i * outputs + j]` connects input `i` to unit `j`. Training
//! minimizes the mean squared error over mini-batches; all reductions run in
//! a fixed order, so a given seed reproduces bit-identical models.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::dataset::PreparedDataset;
use crate::error::{Error, Result};

/// Number of regressor inputs (V, I, displacement).
pub const INPUTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Optimizer {
    SgdMomentum {
        momentum: f64,
    },
    AdaptiveMoments {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::AdaptiveMoments {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Holds out the trailing `validation_fraction` of a seeded shuffle and
/// stops after `patience` epochs without validation improvement, restoring
/// the best weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStopping {
    pub validation_fraction: f64,
    pub patience: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub layer_sizes: Vec<usize>,
    /// Hidden-layer activation; the output neuron is linear.
    pub activation: Activation,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub early_stopping: Option<EarlyStopping>,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            layer_sizes: vec![INPUTS, 32, 32, 1],
            activation: Activation::Tanh,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 200,
            seed: 7,
            optimizer: Optimizer::default(),
            early_stopping: None,
        }
    }
}

fn check_layer_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 3 {
        return Err(Error::InvalidModel(format!(
            "need input, at least one hidden and an output layer, got {sizes:?}"
        )));
    }
    if sizes[0] != INPUTS || sizes[sizes.len() - 1] != 1 {
        return Err(Error::InvalidModel(format!(
            "layer sizes must start with {INPUTS} and end with 1, got {sizes:?}"
        )));
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidModel("empty layer".into()));
    }
    Ok(())
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        check_layer_sizes(&self.layer_sizes)?;
        if !(self.learning_rate >= 0.0) || self.batch_size == 0 {
            return Err(Error::InvalidParameter(
                "learning_rate must be >= 0 and batch_size > 0".into(),
            ));
        }
        if let Some(es) = self.early_stopping {
            if !(es.validation_fraction > 0.0 && es.validation_fraction < 1.0) {
                return Err(Error::InvalidParameter(
                    "validation_fraction must lie in (0, 1)".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub epochs_run: usize,
    pub final_train_loss: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    activation: Activation,
    layers: Vec<LayerParams>,
    #[serde(default)]
    pub metadata: TrainingMetadata,
}

/// Gradient of the loss, shaped like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerParams>,
}

impl Gradients {
    fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| LayerParams {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    fn clear(&mut self) {
        for l in &mut self.layers {
            l.weights.fill(0.0);
            l.biases.fill(0.0);
        }
    }

    /// All entries, layer by layer, weights before biases.
    pub fn flatten(&self) -> Vec<f64> {
        flatten(&self.layers)
    }
}

fn flatten(layers: &[LayerParams]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
        .collect()
}

/// Per-layer activation buffers reused across examples.
struct Workspace {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(sizes: &[usize]) -> Self {
        Self {
            acts: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            deltas: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

impl MlpModel {
    /// Uniform weights in `±1/√fan_in`, zero biases.
    pub fn init(cfg: &MlpConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let layers = cfg
            .layer_sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let dist = Uniform::new(-bound, bound).expect("bound is positive");
                LayerParams {
                    weights: (0..w[0] * w[1]).map(|_| dist.sample(&mut rng)).collect(),
                    biases: vec![0.0; w[1]],
                }
            })
            .collect();
        Ok(Self {
            layer_sizes: cfg.layer_sizes.clone(),
            activation: cfg.activation,
            layers,
            metadata: TrainingMetadata {
                seed: cfg.seed,
                ..Default::default()
            },
        })
    }

    pub fn from_layers(layer_sizes: Vec<usize>, activation: Activation, layers: Vec<LayerParams>) -> Result<Self> {
        let model = Self {
            layer_sizes,
            activation,
            layers,
            metadata: TrainingMetadata::default(),
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        check_layer_sizes(&self.layer_sizes)?;
        if self.layers.len() + 1 != self.layer_sizes.len() {
            return Err(Error::InvalidModel(format!(
                "{} layer parameter sets for {} layer sizes",
                self.layers.len(),
                self.layer_sizes.len()
            )));
        }
        for (k, (l, w)) in self.layers.iter().zip(self.layer_sizes.windows(2)).enumerate() {
            if l.weights.len() != w[0] * w[1] || l.biases.len() != w[1] {
                return Err(Error::InvalidModel(format!(
                    "layer {k}: expected {}x{} weights and {} biases, found {} and {}",
                    w[0],
                    w[1],
                    w[1],
                    l.weights.len(),
                    l.biases.len()
                )));
            }
            if l.weights.iter().chain(&l.biases).any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel(format!("layer {k}: non-finite parameter")));
            }
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    /// `(inputs, outputs)` of every weight matrix.
    pub fn weight_shapes(&self) -> Vec<(usize, usize)> {
        self.layer_sizes.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// All parameters in the order used by [`Gradients::flatten`].
    pub fn parameters(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::LengthMismatch(self.parameter_count(), values.len()));
        }
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            for p in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                *p = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    fn forward_into(&self, x: &[f64; INPUTS], ws: &mut Workspace) -> f64 {
        ws.acts[0].copy_from_slice(x);
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let (prev, next) = ws.acts.split_at_mut(k + 1);
            let input = &prev[k];
            let out = &mut next[0];
            let n_out = out.len();
            out.copy_from_slice(&layer.biases);
            for (i, &a) in input.iter().enumerate() {
                let row = &layer.weights[i * n_out..(i + 1) * n_out];
                for (o, &w) in out.iter_mut().zip(row) {
                    *o += a * w;
                }
            }
            if k != last {
                for o in out.iter_mut() {
                    *o = self.activation.apply(*o);
                }
            }
        }
        ws.acts[self.layers.len()][0]
    }

    /// Adds `scale · ∂(ŷ−y)²/∂θ` for the example most recently passed through
    /// `forward_into`.
    fn accumulate_into(&self, residual: f64, scale: f64, ws: &mut Workspace, grads: &mut Gradients) {
        let n_layers = self.layers.len();
        ws.deltas[n_layers][0] = 2.0 * residual * scale;
        for k in (0..n_layers).rev() {
            let layer = &self.layers[k];
            let g = &mut grads.layers[k];
            let n_out = layer.biases.len();
            let (lower, upper) = ws.deltas.split_at_mut(k + 1);
            let delta = &upper[0];
            let input = &ws.acts[k];

            for (gb, &d) in g.biases.iter_mut().zip(delta.iter()) {
                *gb += d;
            }
            for (i, &a) in input.iter().enumerate() {
                let row = &mut g.weights[i * n_out..(i + 1) * n_out];
                for (gw, &d) in row.iter_mut().zip(delta.iter()) {
                    *gw += a * d;
                }
            }
            if k > 0 {
                let prev_delta = &mut lower[k];
                for (i, pd) in prev_delta.iter_mut().enumerate() {
                    let row = &layer.weights[i * n_out..(i + 1) * n_out];
                    let back: f64 = row.iter().zip(delta.iter()).map(|(w, d)| w * d).sum();
                    *pd = back * self.activation.derivative(input[i]);
                }
            }
        }
    }

    pub fn forward(&self, x: &[f64; INPUTS]) -> Result<f64> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("input {x:?}")));
        }
        let mut ws = Workspace::new(&self.layer_sizes);
        Ok(self.forward_into(x, &mut ws))
    }

    pub fn forward_batch(&self, xs: &[[f64; INPUTS]]) -> Result<Vec<f64>> {
        let mut ws = Workspace::new(&self.layer_sizes);
        xs.iter()
            .map(|x| {
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("input {x:?}")));
                }
                Ok(self.forward_into(x, &mut ws))
            })
            .collect()
    }

    /// Mean squared error over `batch`.
    pub fn loss(&self, batch: &[([f64; INPUTS], f64)]) -> f64 {
        let mut ws = Workspace::new(&self.layer_sizes);
        let sse: f64 = batch
            .iter()
            .map(|(x, y)| (self.forward_into(x, &mut ws) - y).powi(2))
            .sum();
        sse / batch.len() as f64
    }

    /// Gradient of the batch-mean squared error.
    pub fn backward(&self, batch: &[([f64; INPUTS], f64)]) -> Result<Gradients> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut ws = Workspace::new(&self.layer_sizes);
        let mut grads = Gradients::zeros_like(self);
        let scale = 1.0 / batch.len() as f64;
        for (x, y) in batch {
            let pred = self.forward_into(x, &mut ws);
            if !pred.is_finite() {
                return Err(Error::NonFinite("activation".into()));
            }
            self.accumulate_into(pred - y, scale, &mut ws, &mut grads);
        }
        Ok(grads)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).expect("model serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        model.validate()?;
        Ok(model)
    }
}

enum OptimizerState {
    Sgd { momentum: f64, velocity: Gradients },
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        m: Gradients,
        v: Gradients,
        t: i32,
    },
}

impl OptimizerState {
    fn new(opt: Optimizer, model: &MlpModel) -> Self {
        match opt {
            Optimizer::SgdMomentum { momentum } => OptimizerState::Sgd {
                momentum,
                velocity: Gradients::zeros_like(model),
            },
            Optimizer::AdaptiveMoments { beta1, beta2, epsilon } => OptimizerState::Adam {
                beta1,
                beta2,
                epsilon,
                m: Gradients::zeros_like(model),
                v: Gradients::zeros_like(model),
                t: 0,
            },
        }
    }

    fn step(&mut self, model: &mut MlpModel, grads: &Gradients, lr: f64) {
        match self {
            OptimizerState::Sgd { momentum, velocity } => {
                for ((layer, g), vel) in model.layers.iter_mut().zip(&grads.layers).zip(&mut velocity.layers) {
                    let params = layer.weights.iter_mut().chain(layer.biases.iter_mut());
                    let gs = g.weights.iter().chain(&g.biases);
                    let vs = vel.weights.iter_mut().chain(vel.biases.iter_mut());
                    for ((p, &g), v) in params.zip(gs).zip(vs) {
                        *v = *momentum * *v - lr * g;
                        *p += *v;
                    }
                }
            }
            OptimizerState::Adam { beta1, beta2, epsilon, m, v, t } => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for (((layer, g), ml), vl) in model
                    .layers
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(&mut m.layers)
                    .zip(&mut v.layers)
                {
                    let params = layer.weights.iter_mut().chain(layer.biases.iter_mut());
                    let gs = g.weights.iter().chain(&g.biases);
                    let ms = ml.weights.iter_mut().chain(ml.biases.iter_mut());
                    let vs = vl.weights.iter_mut().chain(vl.biases.iter_mut());
                    for (((p, &g), m), v) in params.zip(gs).zip(ms).zip(vs) {
                        *m = *beta1 * *m + (1.0 - *beta1) * g;
                        *v = *beta2 * *v + (1.0 - *beta2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + *epsilon);
                    }
                }
            }
        }
    }
}

/// Trained model with the mean training loss of every epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub loss_history: Vec<f64>,
}

/// Mini-batch training on a private copy of `model`. Batches are drawn from
/// a fresh seeded shuffle every epoch; the epoch loss is the mean squared
/// error accumulated over that epoch's batches before each update.
pub fn train(model: &MlpModel, data: &PreparedDataset, cfg: &MlpConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..data.len()).collect();

    let validation: Vec<usize> = match cfg.early_stopping {
        Some(es) => {
            order.shuffle(&mut rng);
            let n_val = ((data.len() as f64 * es.validation_fraction).round() as usize)
                .clamp(1, data.len().saturating_sub(1).max(1));
            order.split_off(order.len() - n_val)
        }
        None => Vec::new(),
    };
    if order.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut opt = OptimizerState::new(cfg.optimizer, &model);
    let mut ws = Workspace::new(&model.layer_sizes);
    let mut grads = Gradients::zeros_like(&model);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Vec<LayerParams>)> = None;
    let mut stale = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sse = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.clear();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let e = &data.examples[i];
                let residual = model.forward_into(&e.x, &mut ws) - e.y;
                sse += residual * residual;
                model.accumulate_into(residual, scale, &mut ws, &mut grads);
            }
            opt.step(&mut model, &grads, cfg.learning_rate);
        }
        let epoch_loss = sse / order.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Diverged { epoch: epoch + 1 });
        }
        history.push(epoch_loss);

        if let Some(es) = cfg.early_stopping {
            let val: Vec<_> = validation
                .iter()
                .map(|&i| (data.examples[i].x, data.examples[i].y))
                .collect();
            let val_loss = model.loss(&val);
            if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
                best = Some((val_loss, model.layers.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= es.patience {
                    break;
                }
            }
        }
    }

    if let Some((_, layers)) = best {
        model.layers = layers;
    }
    model.metadata = TrainingMetadata {
        epochs_run: history.len(),
        final_train_loss: history.last().copied(),
        seed: cfg.seed,
    };
    Ok(TrainOutcome {
        model,
        loss_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_model(sizes: &[usize]) -> MlpModel {
        let layers = sizes
            .windows(2)
            .map(|w| LayerParams {
                weights: vec![0.0; w[0] * w[1]],
                biases: vec![0.0; w[1]],
            })
            .collect();
        MlpModel::from_layers(sizes.to_vec(), Activation::Tanh, layers).unwrap()
    }

    #[test]
    fn rejects_bad_layer_sizes() {
        for sizes in [vec![3, 1], vec![2, 4, 1], vec![3, 4, 2], vec![3, 0, 1]] {
            let cfg = MlpConfig {
                layer_sizes: sizes,
                ..Default::default()
            };
            assert!(MlpModel::init(&cfg).is_err());
        }
    }

    #[test]
    fn init_shapes_and_determinism() {
        let cfg = MlpConfig::default();
        let a = MlpModel::init(&cfg).unwrap();
        let b = MlpModel::init(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.weight_shapes(), vec![(3, 32), (32, 32), (32, 1)]);
        assert!(a.layers().iter().all(|l| l.biases.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let m = zero_model(&[3, 5, 1]);
        assert_eq!(m.forward(&[0.3, -2.0, 7.0]).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_forward() {
        // 3 -> 2 -> 1, tanh hidden layer
        let layers = vec![
            LayerParams {
                weights: vec![0.5, -1.0, 0.25, 0.0, 0.0, 2.0],
                biases: vec![0.1, -0.2],
            },
            LayerParams {
                weights: vec![1.5, -0.5],
                biases: vec![0.3],
            },
        ];
        let m = MlpModel::from_layers(vec![3, 2, 1], Activation::Tanh, layers).unwrap();
        let x = [1.0, 2.0, 0.5];
        let h0 = (0.1 + 0.5 * 1.0 + 0.25 * 2.0 + 0.0 * 0.5_f64).tanh();
        let h1 = (-0.2 - 1.0 * 1.0 + 0.0 * 2.0 + 2.0 * 0.5_f64).tanh();
        let expected = 0.3 + 1.5 * h0 - 0.5 * h1;
        assert!((m.forward(&x).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn forward_rejects_non_finite() {
        let m = zero_model(&[3, 2, 1]);
        assert!(m.forward(&[f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn zero_model_zero_target_is_stationary() {
        let m = zero_model(&[3, 4, 4, 1]);
        let batch = vec![([0.1, 0.2, 0.3], 0.0), ([0.9, -0.4, 0.0], 0.0)];
        let g = m.backward(&batch).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn learning_rate_zero_keeps_weights() {
        let cfg = MlpConfig {
            layer_sizes: vec![3, 8, 1],
            learning_rate: 0.0,
            epochs: 5,
            batch_size: 4,
            ..Default::default()
        };
        let model = MlpModel::init(&cfg).unwrap();
        let data = PreparedDataset::new(
            (0..20)
                .map(|i| crate::dataset::Example {
                    x: [i as f64 / 20.0, 0.5, 0.1],
                    y: 0.3 * i as f64 / 20.0,
                    provenance: crate::dataset::Provenance::Original,
                })
                .collect(),
        );
        let out = train(&model, &data, &cfg).unwrap();
        assert_eq!(out.model.layers(), model.layers());
        let first = out.loss_history[0];
        assert!(out.loss_history.iter().all(|l| (l - first).abs() <= 1e-12 * first));
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = MlpConfig {
            layer_sizes: vec![3, 8, 1],
            activation: Activation::Relu,
            learning_rate: 1e6,
            optimizer: Optimizer::SgdMomentum { momentum: 0.9 },
            epochs: 50,
            batch_size: 2,
            ..Default::default()
        };
        let model = MlpModel::init(&cfg).unwrap();
        let data = PreparedDataset::new(
            (0..10)
                .map(|i| crate::dataset::Example {
                    x: [i as f64, 1.0, 2.0],
                    y: 10.0 * i as f64,
                    provenance: crate::dataset::Provenance::Original,
                })
                .collect(),
        );
        assert!(matches!(train(&model, &data, &cfg), Err(Error::Diverged { .. })));
    }
}
