//! Network assembly and the full forward/backward pass over sparse layers.

mod activation;
mod loss;

pub use activation::{all_relu, all_relu_grad, relu, relu_grad, Activation};
pub use loss::{loss_and_output_grad, sigmoid, softmax_rows, LossKind};

use rand::Rng as _;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::seeds::{self, Rng};
use crate::sparse::{spmm_forward, SparseWeights, Support};
use crate::{sparse, topology};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitScheme {
    Normal,
    Xavier,
    HeUniform,
}

impl InitScheme {
    pub fn name(self) -> &'static str {
        match self {
            InitScheme::Normal => "normal",
            InitScheme::Xavier => "xavier",
            InitScheme::HeUniform => "he_uniform",
        }
    }

    /// Draws one weight for a connection in a `fan_in × fan_out` layer.
    pub fn sample(self, rng: &mut Rng, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            InitScheme::Normal => {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                0.01 * z
            }
            InitScheme::Xavier => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                rng.random_range(-a..a)
            }
            InitScheme::HeUniform => {
                let a = (6.0 / fan_in as f64).sqrt();
                rng.random_range(-a..a)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    /// Layer widths `[n_1 … n_L]`; `n_1` is the feature count and `n_L`
    /// the class count.
    pub layer_sizes: Vec<usize>,
    /// Erdős–Rényi density parameter ε.
    pub epsilon: f64,
    pub activation: Activation,
    pub dropout_rate: f64,
    pub init_scheme: InitScheme,
    pub loss: LossKind,
    /// Seed for weight initialization.
    pub seed: u64,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let l = self.layer_sizes.len();
        if l < 3 {
            return Err(Error::Config(format!("need at least 3 layers, got {l}")));
        }
        if self.layer_sizes.iter().any(|&n| n == 0) {
            return Err(Error::Config("layer sizes must be >= 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be > 0".into()));
        }
        if let Activation::AllRelu { alpha } = self.activation {
            if !(alpha > 0.0 && alpha <= 1.0) {
                return Err(Error::Config(format!("alpha must be in (0, 1], got {alpha}")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn total_layers(&self) -> usize {
        self.layer_sizes.len()
    }

    pub fn features(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }
}

/// Per-layer gradients aligned to a topology version.
#[derive(Clone, Debug)]
pub struct GradientUpdate<T> {
    pub layer_grads: Vec<Vec<T>>,
    pub bias_grads: Vec<Vec<T>>,
    /// Topology version the gradients are aligned to.
    pub timestamp: u64,
    pub sample_count: usize,
}

/// Squared L2 norm of all existing-weight and bias gradients; the
/// first-order proxy for the loss decrease of one step.
pub fn gradient_flow<T: Real>(update: &GradientUpdate<T>) -> f64 {
    let mut total = 0.0;
    for layer in update.layer_grads.iter().chain(update.bias_grads.iter()) {
        for g in layer {
            let g = g.to_f64();
            total += g * g;
        }
    }
    total
}

/// Everything the backward pass needs from one training-mode forward pass.
pub struct ForwardTrace<T> {
    topology_version: u64,
    input: DenseMatrix<T>,
    /// Pre-activations per weight layer; the last entry holds the logits.
    pre_acts: Vec<DenseMatrix<T>>,
    /// Post-activation (and post-dropout) values per hidden layer.
    acts: Vec<DenseMatrix<T>>,
    /// Dropout scale factors per hidden layer (`None` outside train mode
    /// or when the rate is zero).
    masks: Vec<Option<Vec<T>>>,
    output: DenseMatrix<T>,
}

impl<T: Real> ForwardTrace<T> {
    /// Output probabilities after the loss's link function.
    pub fn output(&self) -> &DenseMatrix<T> {
        &self.output
    }

    pub fn logits(&self) -> &DenseMatrix<T> {
        self.pre_acts.last().unwrap()
    }
}

/// An ordered stack of sparse layers with dense biases.
#[derive(Clone, Debug)]
pub struct SparseNetwork<T> {
    layers: Vec<SparseWeights<T>>,
    biases: Vec<Vec<T>>,
    config: NetworkConfig,
    topology_version: u64,
}

impl<T: Real> SparseNetwork<T> {
    /// Initializes every layer as an Erdős–Rényi sparse graph using the
    /// config seed. Biases start at zero.
    pub fn init(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seeds::init_rng(config.seed);
        let mut layers = Vec::with_capacity(config.layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(config.layer_sizes.len() - 1);
        for pair in config.layer_sizes.windows(2) {
            let (n_in, n_out) = (pair[0], pair[1]);
            layers.push(topology::er_init(
                n_in,
                n_out,
                config.epsilon,
                config.init_scheme,
                &mut rng,
            ));
            biases.push(vec![T::zero(); n_out]);
        }
        Ok(SparseNetwork { layers, biases, config, topology_version: 0 })
    }

    /// Builds a network from explicit layers and biases, validating shapes.
    pub fn from_parts(config: NetworkConfig, layers: Vec<SparseWeights<T>>, biases: Vec<Vec<T>>) -> Result<Self> {
        config.validate()?;
        let l = config.layer_sizes.len();
        if layers.len() != l - 1 || biases.len() != l - 1 {
            return Err(Error::Config(format!(
                "expected {} layers and biases, got {} and {}",
                l - 1,
                layers.len(),
                biases.len()
            )));
        }
        for (k, w) in layers.iter().enumerate() {
            if w.rows() != config.layer_sizes[k] || w.cols() != config.layer_sizes[k + 1] {
                return Err(Error::Config(format!(
                    "layer {k} shape {}x{} does not match sizes {}x{}",
                    w.rows(),
                    w.cols(),
                    config.layer_sizes[k],
                    config.layer_sizes[k + 1]
                )));
            }
            w.validate()?;
            if biases[k].len() != w.cols() {
                return Err(Error::Config(format!("bias {k} length mismatch")));
            }
        }
        Ok(SparseNetwork { layers, biases, config, topology_version: 0 })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[SparseWeights<T>] {
        &self.layers
    }

    pub fn biases(&self) -> &[Vec<T>] {
        &self.biases
    }

    pub fn topology_version(&self) -> u64 {
        self.topology_version
    }

    pub fn layer_nnz(&self) -> Vec<usize> {
        self.layers.iter().map(|w| w.nnz()).collect()
    }

    pub fn total_nnz(&self) -> usize {
        self.layers.iter().map(|w| w.nnz()).sum()
    }

    pub fn supports(&self) -> Vec<Support> {
        self.layers.iter().map(|w| w.support()).collect()
    }

    pub(crate) fn layer_values_mut(&mut self, idx: usize) -> &mut [T] {
        self.layers[idx].values_mut()
    }

    pub(crate) fn bias_mut(&mut self, idx: usize) -> &mut [T] {
        &mut self.biases[idx]
    }

    /// Swaps in a structurally edited layer. Callers bump the topology
    /// version once per logical edit via [`SparseNetwork::bump_version`].
    pub(crate) fn install_layer(&mut self, idx: usize, w: SparseWeights<T>) {
        debug_assert_eq!(w.rows(), self.layers[idx].rows());
        debug_assert_eq!(w.cols(), self.layers[idx].cols());
        self.layers[idx] = w;
    }

    pub(crate) fn bump_version(&mut self) {
        self.topology_version += 1;
    }

    /// Converts the whole network to another precision, keeping structure.
    pub fn cast<U: Real>(&self) -> SparseNetwork<U> {
        SparseNetwork {
            layers: self.layers.iter().map(|w| w.cast()).collect(),
            biases: self
                .biases
                .iter()
                .map(|b| b.iter().map(|v| U::from_f64(v.to_f64())).collect())
                .collect(),
            config: self.config.clone(),
            topology_version: self.topology_version,
        }
    }

    /// Runs the network over a batch. Train mode applies inverted dropout
    /// to hidden activations (requires an RNG when the rate is nonzero);
    /// eval mode applies no mask and no scale.
    pub fn forward(&self, batch: &DenseMatrix<T>, mode: Mode, mut rng: Option<&mut Rng>) -> Result<ForwardTrace<T>> {
        if batch.cols() != self.config.features() {
            return Err(Error::shape(
                "forward",
                format!("batch width {}", self.config.features()),
                format!("{}", batch.cols()),
            ));
        }
        let total = self.config.total_layers();
        let dropout = self.config.dropout_rate;
        let use_dropout = mode == Mode::Train && dropout > 0.0;
        if use_dropout && rng.is_none() {
            return Err(Error::Argument("train-mode forward with dropout requires an RNG".into()));
        }
        let mut pre_acts = Vec::with_capacity(total - 1);
        let mut acts: Vec<DenseMatrix<T>> = Vec::with_capacity(total - 2);
        let mut masks: Vec<Option<Vec<T>>> = Vec::with_capacity(total - 2);
        for k in 0..self.layers.len() {
            let below = if k == 0 { batch } else { &acts[k - 1] };
            let z = spmm_forward(below, &self.layers[k], &self.biases[k])?;
            if k < self.layers.len() - 1 {
                // hidden layer, absolute index k + 2
                let mut a = z.clone();
                let layer_index = k + 2;
                a.map_in_place(|x| self.config.activation.apply(x, layer_index, total));
                let mask = if use_dropout {
                    let keep = 1.0 - dropout;
                    let scale = T::from_f64(1.0 / keep);
                    let rng = rng.as_mut().unwrap();
                    let mut m = vec![T::zero(); a.rows() * a.cols()];
                    for slot in &mut m {
                        if rng.random::<f64>() < keep {
                            *slot = scale;
                        }
                    }
                    for (v, &f) in a.as_mut_slice().iter_mut().zip(&m) {
                        *v = *v * f;
                    }
                    Some(m)
                } else {
                    None
                };
                masks.push(mask);
                acts.push(a);
            }
            pre_acts.push(z);
        }
        let mut output = pre_acts.last().unwrap().clone();
        self.config.loss.link(&mut output);
        Ok(ForwardTrace {
            topology_version: self.topology_version,
            input: batch.clone(),
            pre_acts,
            acts,
            masks,
            output,
        })
    }

    /// Eval-mode output probabilities.
    pub fn predict(&self, batch: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        Ok(self.forward(batch, Mode::Eval, None)?.output)
    }

    /// Backpropagates through the trace, producing support-aligned
    /// gradients averaged over the batch, with the weight-decay term
    /// `λ·w` folded into each stored weight's gradient.
    pub fn backward(&self, trace: &ForwardTrace<T>, labels: &[u32], lambda: T) -> Result<GradientUpdate<T>> {
        if trace.topology_version != self.topology_version {
            return Err(Error::Stale {
                what: "forward trace",
                found: trace.topology_version,
                current: self.topology_version,
            });
        }
        let n_weight_layers = self.layers.len();
        let total = self.config.total_layers();
        let mut layer_grads = vec![Vec::new(); n_weight_layers];
        let mut bias_grads = vec![Vec::new(); n_weight_layers];

        // Per-sample ∂L_b/∂z at the output; layer kernels average over B.
        let mut delta = self.config.loss.output_delta(&trace.output, labels)?;
        for k in (0..n_weight_layers).rev() {
            let below = if k == 0 { &trace.input } else { &trace.acts[k - 1] };
            let (mut gv, gb, gi) = sparse::backward_support_gradient(below, &delta, &self.layers[k])?;
            if lambda != T::zero() {
                for (g, &w) in gv.iter_mut().zip(self.layers[k].values()) {
                    *g = *g + lambda * w;
                }
            }
            layer_grads[k] = gv;
            bias_grads[k] = gb;
            if k > 0 {
                delta = gi;
                if let Some(mask) = &trace.masks[k - 1] {
                    for (d, &f) in delta.as_mut_slice().iter_mut().zip(mask) {
                        *d = *d * f;
                    }
                }
                let layer_index = k + 1; // absolute index of hidden layer below
                let z = &trace.pre_acts[k - 1];
                for (d, &zv) in delta.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    *d = *d * self.config.activation.grad(zv, layer_index, total);
                }
            }
        }
        Ok(GradientUpdate {
            layer_grads,
            bias_grads,
            timestamp: self.topology_version,
            sample_count: trace.input.rows(),
        })
    }

    /// Eval-mode loss and accuracy over a full feature matrix, batched.
    pub fn evaluate(&self, features: &DenseMatrix<T>, labels: &[u32], batch_size: usize) -> Result<(f64, f64)> {
        if features.rows() == 0 {
            return Err(Error::Data("cannot evaluate on an empty set".into()));
        }
        let n = features.rows();
        let bs = batch_size.max(1);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut start = 0;
        while start < n {
            let end = (start + bs).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let batch = features.gather_rows(&idx);
            let out = self.predict(&batch)?;
            let batch_labels = &labels[start..end];
            loss_sum += self.config.loss.loss(&out, batch_labels)? * (end - start) as f64;
            correct += count_correct(&out, batch_labels);
            start = end;
        }
        Ok((loss_sum / n as f64, correct as f64 / n as f64))
    }
}

/// Argmax-vs-label hits; ties resolve to the lowest class index.
pub fn count_correct<T: Real>(outputs: &DenseMatrix<T>, labels: &[u32]) -> usize {
    let mut correct = 0;
    for (r, &y) in labels.iter().enumerate() {
        let row = outputs.row(r);
        let mut best = 0usize;
        for (c, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = c;
            }
        }
        if best == y as usize {
            correct += 1;
        }
    }
    correct
}
