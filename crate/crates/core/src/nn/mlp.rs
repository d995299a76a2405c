//! Fully-connected classifier with exact manual backpropagation.
//!
//! Hidden layers are ReLU, the output layer is identity logits; predictions
//! go through a max-subtracted softmax. The cross-entropy gradient is fused
//! with the softmax so no `log(0)` can appear. Everything is `f64`: the
//! update-direction solver downstream divides by small norms and needs the
//! headroom.

use rand::{Rng, RngExt};

use crate::error::{Error, Result};
use crate::nn::{Example, ParamVector};

/// A dense feed-forward classifier.
///
/// Weights are row-major `(out_dim, in_dim)` per layer. Parameters flatten
/// into a [`ParamVector`] in layer order, weights before biases, and the
/// round trip is exact.
#[derive(Debug, Clone)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    /// One row-major `(out, in)` matrix per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl MlpModel {
    /// Build a model with Xavier-uniform weights and zero biases.
    ///
    /// `layer_sizes` is `[input_dim, hidden..., num_classes]` and needs at
    /// least two entries, all positive.
    pub fn new<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::invalid_input(
                "layer_sizes needs an input and an output dimension",
            ));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::invalid_input("layer sizes must be positive"));
        }
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    /// Build a model with all parameters zero (uniform predictions).
    pub fn zeroed(layer_sizes: &[usize]) -> Result<Self> {
        use rand::SeedableRng;
        let model = Self::new(layer_sizes, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))?;
        let zeros = ParamVector::zeros(model.param_count());
        model.with_params(&zeros)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    /// Total parameter count: Σ (in × out + out) over layers.
    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|p| p[0] * p[1] + p[1])
            .sum()
    }

    /// Flatten all parameters: per layer, weights (row-major) then biases.
    pub fn flatten(&self) -> ParamVector {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        ParamVector::new(out)
    }

    /// Rebuild a model of this architecture from a flat parameter vector.
    pub fn with_params(&self, params: &ParamVector) -> Result<Self> {
        if params.len() != self.param_count() {
            return Err(Error::invalid_input(format!(
                "parameter vector has length {}, model has {} parameters",
                params.len(),
                self.param_count()
            )));
        }
        let mut model = self.clone();
        let mut off = 0;
        let flat = params.as_slice();
        for (w, b) in model.weights.iter_mut().zip(model.biases.iter_mut()) {
            let w_len = w.len();
            w.copy_from_slice(&flat[off..off + w_len]);
            off += w_len;
            let b_len = b.len();
            b.copy_from_slice(&flat[off..off + b_len]);
            off += b_len;
        }
        Ok(model)
    }

    /// Raw output-layer activations for one input.
    pub fn logits(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.input_dim() {
            return Err(Error::invalid_input(format!(
                "feature length {} != input dim {}",
                features.len(),
                self.input_dim()
            )));
        }
        let n_layers = self.num_layers();
        let mut act = features.to_vec();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let out_dim = self.layer_sizes[l + 1];
            let in_dim = self.layer_sizes[l];
            let mut next = Vec::with_capacity(out_dim);
            for o in 0..out_dim {
                let row = &w[o * in_dim..(o + 1) * in_dim];
                let mut z = b[o];
                for (wi, ai) in row.iter().zip(&act) {
                    z += wi * ai;
                }
                // identity on the output layer, ReLU on hidden layers
                if l < n_layers - 1 {
                    z = z.max(0.0);
                }
                next.push(z);
            }
            act = next;
        }
        Ok(act)
    }

    /// Class probabilities for one input (softmax over logits).
    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(features)?))
    }

    /// Mean negative log-likelihood of the true labels over a batch.
    pub fn loss(&self, batch: &[Example]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid_input("loss: empty batch"));
        }
        let mut total = 0.0;
        for ex in batch {
            self.check_example(ex)?;
            let z = self.logits(&ex.features)?;
            total += log_sum_exp(&z) - z[ex.label];
        }
        Ok(total / batch.len() as f64)
    }

    /// Mean cross-entropy loss and its exact gradient, flattened.
    pub fn loss_and_grad(&self, batch: &[Example]) -> Result<(f64, ParamVector)> {
        if batch.is_empty() {
            return Err(Error::invalid_input("loss_and_grad: empty batch"));
        }
        let mut grad = vec![0.0; self.param_count()];
        let loss = self.backprop_into(batch, &mut grad)?;
        Ok((loss, ParamVector::new(grad)))
    }

    /// Per-example loss gradients; element `i` equals
    /// `loss_and_grad(&[examples[i]])`'s gradient.
    pub fn per_example_grads(&self, examples: &[Example]) -> Result<Vec<ParamVector>> {
        if examples.is_empty() {
            return Err(Error::invalid_input("per_example_grads: empty batch"));
        }
        let mut out = Vec::with_capacity(examples.len());
        for ex in examples {
            let mut grad = vec![0.0; self.param_count()];
            self.backprop_into(std::slice::from_ref(ex), &mut grad)?;
            out.push(ParamVector::new(grad));
        }
        Ok(out)
    }

    /// New model with `params - lr * direction`; `self` is unchanged.
    pub fn apply_step(&self, direction: &ParamVector, lr: f64) -> Result<MlpModel> {
        if direction.len() != self.param_count() {
            return Err(Error::invalid_input(format!(
                "direction has length {}, model has {} parameters",
                direction.len(),
                self.param_count()
            )));
        }
        let mut model = self.clone();
        let flat = direction.as_slice();
        let mut off = 0;
        for (w, b) in model.weights.iter_mut().zip(model.biases.iter_mut()) {
            for v in w.iter_mut() {
                *v -= lr * flat[off];
                off += 1;
            }
            for v in b.iter_mut() {
                *v -= lr * flat[off];
                off += 1;
            }
        }
        Ok(model)
    }

    /// Classification margin: true-class probability minus the best
    /// wrong-class probability. Positive iff the prediction is correct with
    /// a strict argmax; always in `[-1, 1]`.
    pub fn margin(&self, example: &Example) -> Result<f64> {
        self.check_example(example)?;
        let probs = self.forward(&example.features)?;
        let p_true = probs[example.label];
        let best_other = probs
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != example.label)
            .map(|(_, &p)| p)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(p_true - best_other)
    }

    fn check_example(&self, ex: &Example) -> Result<()> {
        if ex.features.len() != self.input_dim() {
            return Err(Error::invalid_input(format!(
                "example {} has {} features, model expects {}",
                ex.id,
                ex.features.len(),
                self.input_dim()
            )));
        }
        if ex.label >= self.num_classes() {
            return Err(Error::invalid_input(format!(
                "example {} has label {}, model has {} classes",
                ex.id,
                ex.label,
                self.num_classes()
            )));
        }
        Ok(())
    }

    /// Accumulate the mean-loss gradient over `batch` into `grad`
    /// (layer-ordered flat layout) and return the mean loss.
    fn backprop_into(&self, batch: &[Example], grad: &mut [f64]) -> Result<f64> {
        debug_assert_eq!(grad.len(), self.param_count());
        let n_layers = self.num_layers();
        let inv_batch = 1.0 / batch.len() as f64;

        // Flat offsets of each layer's weight block; biases follow directly.
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += self.layer_sizes[l] * self.layer_sizes[l + 1] + self.layer_sizes[l + 1];
        }

        let mut total_loss = 0.0;
        for ex in batch {
            self.check_example(ex)?;

            // Forward, keeping every layer's activation.
            let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
            acts.push(ex.features.clone());
            for l in 0..n_layers {
                let in_dim = self.layer_sizes[l];
                let out_dim = self.layer_sizes[l + 1];
                let w = &self.weights[l];
                let prev = &acts[l];
                let mut next = Vec::with_capacity(out_dim);
                for o in 0..out_dim {
                    let row = &w[o * in_dim..(o + 1) * in_dim];
                    let mut z = self.biases[l][o];
                    for (wi, ai) in row.iter().zip(prev) {
                        z += wi * ai;
                    }
                    if l < n_layers - 1 {
                        z = z.max(0.0);
                    }
                    next.push(z);
                }
                acts.push(next);
            }

            let logits = &acts[n_layers];
            total_loss += log_sum_exp(logits) - logits[ex.label];

            // delta at the logits: (softmax - onehot) / batch
            let probs = softmax(logits);
            let mut delta: Vec<f64> = probs.iter().map(|p| p * inv_batch).collect();
            delta[ex.label] -= inv_batch;

            // Walk layers backwards, accumulating dW and db.
            for l in (0..n_layers).rev() {
                let in_dim = self.layer_sizes[l];
                let out_dim = self.layer_sizes[l + 1];
                let base = offsets[l];
                let prev = &acts[l];

                for o in 0..out_dim {
                    let d = delta[o];
                    if d != 0.0 {
                        let wrow = &mut grad[base + o * in_dim..base + (o + 1) * in_dim];
                        for (g, a) in wrow.iter_mut().zip(prev) {
                            *g += d * a;
                        }
                    }
                    grad[base + out_dim * in_dim + o] += d;
                }

                if l > 0 {
                    let w = &self.weights[l];
                    let mut prev_delta = vec![0.0; in_dim];
                    for o in 0..out_dim {
                        let d = delta[o];
                        if d != 0.0 {
                            let row = &w[o * in_dim..(o + 1) * in_dim];
                            for (pd, wi) in prev_delta.iter_mut().zip(row) {
                                *pd += d * wi;
                            }
                        }
                    }
                    // ReLU gate: activation 0 means the unit was clamped.
                    for (pd, &a) in prev_delta.iter_mut().zip(prev) {
                        if a <= 0.0 {
                            *pd = 0.0;
                        }
                    }
                    delta = prev_delta;
                }
            }
        }
        Ok(total_loss * inv_batch)
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}
