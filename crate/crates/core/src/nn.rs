//! Fully-connected networks with manual forward/backward passes, the
//! cross-entropy loss, and the Adam optimizer.
//!
//! Parameter flattening order is fixed and shared by every consumer: layers
//! in order, each layer contributing its weight matrix in row-major
//! `(out_dim x in_dim)` layout followed by its bias vector. Gradient vectors
//! use the same order, which is what makes inner products between two
//! clients' encoder gradients well-defined.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    ReLU,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::ReLU => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed in terms of the layer output.
    #[inline]
    fn grad_from_output(self, a: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One dense layer: `a = activation(W x + b)` with `W` of shape
/// `(out_dim x in_dim)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    #[inline]
    pub fn param_count(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }
}

/// A feed-forward network of dense layers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpNetwork {
    layers: Vec<Layer>,
    layer_dims: Vec<usize>,
}

/// Per-layer activations recorded by a forward pass; `acts[0]` is the input
/// batch and `acts[k + 1]` is layer `k`'s output.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    acts: Vec<DenseMatrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &DenseMatrix {
        self.acts.last().expect("cache always has the input")
    }
}

impl MlpNetwork {
    /// Builds a network with the given layer sizes, hidden layers activated
    /// by `hidden`, and an `Identity` output layer. Weights are
    /// Xavier-uniform, biases zero.
    pub fn xavier(dims: &[usize], hidden: Activation, rng: &mut impl Rng) -> Result<Self> {
        Self::build(dims, hidden, |fan_in, fan_out| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            rng.random_range(-a..a)
        })
    }

    /// Builds a network with all parameters zero. Used for personalized
    /// heads so that early task gradients point along the task structure
    /// instead of along a random initialization.
    pub fn zeros(dims: &[usize], hidden: Activation) -> Result<Self> {
        Self::build(dims, hidden, |_, _| 0.0)
    }

    fn build(
        dims: &[usize],
        hidden: Activation,
        mut init: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config("network needs at least two dims".into()));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("layer dims must be positive".into()));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for k in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[k], dims[k + 1]);
            let weight =
                DenseMatrix::from_fn(fan_out, fan_in, |_, _| init(fan_in, fan_out));
            let activation = if k + 2 == dims.len() {
                Activation::Identity
            } else {
                hidden
            };
            layers.push(Layer {
                weight,
                bias: vec![0.0; fan_out],
                activation,
            });
        }
        Ok(Self {
            layers,
            layer_dims: dims.to_vec(),
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Flattens all parameters in the documented order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            flat.extend_from_slice(layer.weight.data());
            flat.extend_from_slice(&layer.bias);
        }
        flat
    }

    /// Inverse of [`flatten`]; the vector length must match exactly.
    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Dimension(format!(
                "unflatten: expected {} params, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut off = 0;
        for layer in &mut self.layers {
            let w = layer.weight.data_mut();
            w.copy_from_slice(&flat[off..off + w.len()]);
            off += w.len();
            let b = layer.bias.len();
            layer.bias.copy_from_slice(&flat[off..off + b]);
            off += b;
        }
        Ok(())
    }

    /// Forward pass over a batch (one sample per row).
    pub fn forward_batch(&self, x: &DenseMatrix) -> Result<(DenseMatrix, ForwardCache)> {
        if x.cols() != self.input_dim() {
            return Err(Error::Config(format!(
                "forward: input dim {} vs network input {}",
                x.cols(),
                self.input_dim()
            )));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for layer in &self.layers {
            // z = a_prev * W^T, then bias + activation
            let mut z = acts.last().unwrap().matmul(&layer.weight, false, true)?;
            let out_dim = layer.out_dim();
            for r in 0..z.rows() {
                let row = z.row_mut(r);
                for c in 0..out_dim {
                    row[c] = layer.activation.apply(row[c] + layer.bias[c]);
                }
            }
            acts.push(z);
        }
        let out = acts.last().unwrap().clone();
        Ok((out, ForwardCache { acts }))
    }

    /// Forward pass for a single sample.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let x = DenseMatrix::from_vec(1, input.len(), input.to_vec())?;
        let (out, cache) = self.forward_batch(&x)?;
        Ok((out.row(0).to_vec(), cache))
    }

    /// Output without keeping a cache (evaluation only).
    pub fn eval_batch(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(self.forward_batch(x)?.0)
    }

    /// Backward pass over a batch.
    ///
    /// `output_grad` holds one row per sample with the loss gradient at the
    /// network output (already scaled by whatever normalization the loss
    /// uses). Returns the flat parameter gradient and the gradient with
    /// respect to the input batch.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        output_grad: &DenseMatrix,
    ) -> Result<(Vec<f64>, DenseMatrix)> {
        if cache.acts.len() != self.layers.len() + 1 {
            return Err(Error::Numerical(
                "backward: cache does not match this network".into(),
            ));
        }
        let out = cache.acts.last().unwrap();
        if output_grad.rows() != out.rows() || output_grad.cols() != out.cols() {
            return Err(Error::Numerical(format!(
                "backward: output grad {}x{} vs cached output {}x{}",
                output_grad.rows(),
                output_grad.cols(),
                out.rows(),
                out.cols()
            )));
        }
        for (k, layer) in self.layers.iter().enumerate() {
            if cache.acts[k].cols() != layer.in_dim() {
                return Err(Error::Numerical(
                    "backward: cache does not match this network".into(),
                ));
            }
        }

        let mut flat = vec![0.0; self.param_count()];
        // Offsets of each layer's weight block in the flat vector.
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for layer in &self.layers {
            offsets.push(off);
            off += layer.param_count();
        }

        let mut d_act = output_grad.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            // dz = d_act ⊙ act'(a)
            let a = &cache.acts[k + 1];
            let mut dz = d_act;
            for r in 0..dz.rows() {
                let ar = a.row(r);
                let dr = dz.row_mut(r);
                for c in 0..ar.len() {
                    dr[c] *= layer.activation.grad_from_output(ar[c]);
                }
            }
            // dW = dz^T * a_prev ; db = column sums of dz
            let dw = dz.matmul(&cache.acts[k], true, false)?;
            let woff = offsets[k];
            let wlen = dw.data().len();
            flat[woff..woff + wlen].copy_from_slice(dw.data());
            let boff = woff + wlen;
            for r in 0..dz.rows() {
                let row = dz.row(r);
                for c in 0..row.len() {
                    flat[boff + c] += row[c];
                }
            }
            // d_prev = dz * W
            d_act = dz.matmul(&layer.weight, false, false)?;
        }
        Ok((flat, d_act))
    }

    /// Backward pass for a single sample.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<Vec<f64>> {
        let g = DenseMatrix::from_vec(1, output_grad.len(), output_grad.to_vec())?;
        Ok(self.backward_batch(cache, &g)?.0)
    }
}

/// Numerically stable cross-entropy for one logit vector.
///
/// Returns the loss and the gradient with respect to the logits
/// (`softmax(logits) - one_hot(label)`).
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    debug_assert!(label < logits.len());
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    let loss = z.ln() - (logits[label] - max);
    let mut grad: Vec<f64> = exp.iter().map(|e| e / z).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

/// Batch-mean cross-entropy.
///
/// Returns the mean loss and the gradient of the mean loss with respect to
/// every logit (each row already divided by the batch size).
pub fn cross_entropy_batch(logits: &DenseMatrix, labels: &[u8]) -> Result<(f64, DenseMatrix)> {
    if logits.rows() != labels.len() {
        return Err(Error::Dimension(format!(
            "cross_entropy_batch: {} rows vs {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    let b = logits.rows() as f64;
    let mut grad = DenseMatrix::zeros(logits.rows(), logits.cols());
    let mut total = 0.0;
    for r in 0..logits.rows() {
        let (loss, g) = cross_entropy(logits.row(r), labels[r] as usize);
        total += loss;
        let row = grad.row_mut(r);
        for (c, gc) in g.iter().enumerate() {
            row[c] = gc / b;
        }
    }
    Ok((total / b, grad))
}

/// Adam optimizer state for one flat parameter vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected Adam update in place.
    pub fn apply(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != self.first_moment.len() {
            return Err(Error::Config(format!(
                "adam: state len {} vs params {} / grads {}",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            let m = &mut self.first_moment[i];
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            let v = &mut self.second_moment[i];
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// One client's model: the shared encoder plus the private head stacked on
/// top of it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientModel {
    pub encoder: MlpNetwork,
    pub head: MlpNetwork,
}

impl ClientModel {
    pub fn new(encoder: MlpNetwork, head: MlpNetwork) -> Result<Self> {
        if encoder.output_dim() != head.input_dim() {
            return Err(Error::Config(format!(
                "encoder output {} vs head input {}",
                encoder.output_dim(),
                head.input_dim()
            )));
        }
        Ok(Self { encoder, head })
    }

    /// Batch-mean loss without gradients.
    pub fn loss(&self, x: &DenseMatrix, labels: &[u8]) -> Result<f64> {
        let h = self.encoder.eval_batch(x)?;
        let logits = self.head.eval_batch(&h)?;
        Ok(cross_entropy_batch(&logits, labels)?.0)
    }

    /// Batch-mean loss plus the flat gradient with respect to the encoder
    /// parameters only.
    pub fn encoder_gradient(&self, x: &DenseMatrix, labels: &[u8]) -> Result<(f64, Vec<f64>)> {
        let (h, enc_cache) = self.encoder.forward_batch(x)?;
        let (logits, head_cache) = self.head.forward_batch(&h)?;
        let (loss, dlogits) = cross_entropy_batch(&logits, labels)?;
        let (_, dh) = self.head.backward_batch(&head_cache, &dlogits)?;
        let (enc_grad, _) = self.encoder.backward_batch(&enc_cache, &dh)?;
        Ok((loss, enc_grad))
    }

    /// Batch-mean loss plus the flat gradient with respect to the head
    /// parameters only (the encoder is treated as frozen).
    pub fn head_gradient(&self, x: &DenseMatrix, labels: &[u8]) -> Result<(f64, Vec<f64>)> {
        let h = self.encoder.eval_batch(x)?;
        let (logits, head_cache) = self.head.forward_batch(&h)?;
        let (loss, dlogits) = cross_entropy_batch(&logits, labels)?;
        let (head_grad, _) = self.head.backward_batch(&head_cache, &dlogits)?;
        Ok((loss, head_grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const LN_2: f64 = 0.693_147_180_559_945_3;

    fn identity_single_layer(dim: usize, activation: Activation) -> MlpNetwork {
        let mut net = MlpNetwork::zeros(&[dim, dim], activation).unwrap();
        // zeros() builds an Identity output layer; overwrite for the test.
        net.layers[0].weight = DenseMatrix::identity(dim);
        net.layers[0].activation = activation;
        net
    }

    #[test]
    fn forward_identity_layer_passes_input_through() {
        let net = identity_single_layer(2, Activation::Identity);
        let (out, _) = net.forward(&[1.0, 2.0]).unwrap();
        assert_eq!(out, vec![1.0, 2.0]);
    }

    #[test]
    fn forward_relu_clamps_negative() {
        let net = identity_single_layer(2, Activation::ReLU);
        let (out, _) = net.forward(&[-1.0, 2.0]).unwrap();
        assert_eq!(out, vec![0.0, 2.0]);
    }

    /// Independent straight-line evaluator used as the forward-pass oracle.
    fn naive_forward(net: &MlpNetwork, input: &[f64]) -> Vec<f64> {
        let mut a = input.to_vec();
        for layer in net.layers() {
            let mut next = vec![0.0; layer.out_dim()];
            for (o, n) in next.iter_mut().enumerate() {
                let mut s = layer.bias[o];
                for (i, &x) in a.iter().enumerate() {
                    s += layer.weight.get(o, i) * x;
                }
                *n = layer.activation.apply(s);
            }
            a = next;
        }
        a
    }

    #[test]
    fn forward_matches_independent_evaluator() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = MlpNetwork::xavier(&[5, 8, 3], Activation::ReLU, &mut rng).unwrap();
        let input: Vec<f64> = (0..5).map(|i| (i as f64) * 0.3 - 0.7).collect();
        let (out, _) = net.forward(&input).unwrap();
        let expect = naive_forward(&net, &input);
        for (a, b) in out.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let net = identity_single_layer(2, Activation::Identity);
        assert!(net.forward(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng1 = ChaCha8Rng::seed_from_u64(11);
        let mut rng2 = ChaCha8Rng::seed_from_u64(11);
        let n1 = MlpNetwork::xavier(&[4, 6, 2], Activation::ReLU, &mut rng1).unwrap();
        let n2 = MlpNetwork::xavier(&[4, 6, 2], Activation::ReLU, &mut rng2).unwrap();
        let x = vec![0.1, -0.2, 0.3, -0.4];
        let (o1, _) = n1.forward(&x).unwrap();
        let (o2, _) = n2.forward(&x).unwrap();
        assert_eq!(o1, o2);
    }

    #[test]
    fn backward_identity_layer_is_outer_product() {
        // Single identity layer y = Wx + b with W = I: dW = g ⊗ x, db = g.
        let net = identity_single_layer(2, Activation::Identity);
        let x = [3.0, -1.0];
        let (_, cache) = net.forward(&x).unwrap();
        let g = [0.5, 2.0];
        let grad = net.backward(&cache, &g).unwrap();
        // flat = [w00 w01 w10 w11 b0 b1]
        assert_eq!(grad, vec![1.5, -0.5, 6.0, -2.0, 0.5, 2.0]);
    }

    #[test]
    fn backward_zero_output_grad_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = MlpNetwork::xavier(&[3, 4, 2], Activation::ReLU, &mut rng).unwrap();
        let (_, cache) = net.forward(&[0.4, 0.5, -0.6]).unwrap();
        let grad = net.backward(&cache, &[0.0, 0.0]).unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_rejects_mismatched_cache() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = MlpNetwork::xavier(&[3, 4, 2], Activation::ReLU, &mut rng).unwrap();
        let other = MlpNetwork::xavier(&[3, 5, 2], Activation::ReLU, &mut rng).unwrap();
        let (_, cache) = net.forward(&[0.4, 0.5, -0.6]).unwrap();
        assert!(other.backward_batch(&cache, &DenseMatrix::zeros(1, 2)).is_err());
    }

    /// Central finite-difference oracle over the full model loss.
    pub(crate) fn finite_diff_check(seed: u64, dims: &[usize]) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = MlpNetwork::xavier(dims, Activation::ReLU, &mut rng).unwrap();
        let b = 3;
        let x = DenseMatrix::from_fn(b, dims[0], |_, _| rng.random_range(-1.0..1.0));
        let labels: Vec<u8> = (0..b).map(|_| rng.random_range(0..2) as u8).collect();

        let loss_of = |net: &MlpNetwork, x: &DenseMatrix, labels: &[u8]| -> f64 {
            let (logits, _) = net.forward_batch(x).unwrap();
            cross_entropy_batch(&logits, labels).unwrap().0
        };

        let (logits, cache) = net.forward_batch(&x).unwrap();
        let (_, dlogits) = cross_entropy_batch(&logits, &labels).unwrap();
        let (analytic, _) = net.backward_batch(&cache, &dlogits).unwrap();

        let mut flat = net.flatten();
        let h = 1e-5;
        let mut worst = 0.0_f64;
        for i in 0..flat.len() {
            let orig = flat[i];
            flat[i] = orig + h;
            net.unflatten(&flat).unwrap();
            let lp = loss_of(&net, &x, &labels);
            flat[i] = orig - h;
            net.unflatten(&flat).unwrap();
            let lm = loss_of(&net, &x, &labels);
            flat[i] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((analytic[i] - numeric).abs() / denom);
        }
        net.unflatten(&flat).unwrap();
        worst
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..5 {
            let worst = finite_diff_check(seed, &[4, 8, 5, 2]);
            assert!(worst < 1e-4, "seed {seed}: worst rel err {worst}");
        }
    }

    #[test]
    fn cross_entropy_symmetric_logits() {
        let (loss, grad) = cross_entropy(&[0.0, 0.0], 0);
        assert!((loss - LN_2).abs() < 1e-15);
        assert!((grad[0] + 0.5).abs() < 1e-15);
        assert!((grad[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_saturated_correct() {
        let (loss, grad) = cross_entropy(&[100.0, 0.0], 0);
        assert!(loss >= 0.0 && loss < 1e-40);
        assert!(grad[0].abs() < 1e-40 && grad[1].abs() < 1e-40);
    }

    #[test]
    fn cross_entropy_matches_high_precision_oracle() {
        // Frozen from a 50-digit decimal evaluation of
        // -log softmax([1.2, -0.3])[1].
        let (loss, grad) = cross_entropy(&[1.2, -0.3], 1);
        assert!((loss - 1.701_413_277_982_752_4).abs() < 1e-15);
        assert!((grad[0] - 0.817_574_476_193_643_7).abs() < 1e-15);
        assert!((grad[1] + 0.817_574_476_193_643_7).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_nonnegative_and_stable() {
        for &(a, b) in &[(1e4, -1e4), (-1e4, 1e4), (0.0, 0.0), (700.0, 690.0)] {
            for label in 0..2 {
                let (loss, grad) = cross_entropy(&[a, b], label);
                assert!(loss.is_finite() && loss >= 0.0);
                assert!(grad.iter().all(|g| g.is_finite()));
            }
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut state = AdamState::new(1);
        let mut p = vec![0.0];
        state.apply(&mut p, &[1.0], 0.1).unwrap();
        // bias-corrected first step is -lr * g/(|g| + eps') up to epsilon
        assert!((p[0] + 0.1).abs() < 1e-8);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut state = AdamState::new(3);
        let mut p = vec![1.0, -2.0, 0.5];
        state.apply(&mut p, &[0.0, 0.0, 0.0], 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_three_steps_match_hand_trace() {
        // Frozen from a 50-digit decimal trace of Adam on f(x) = x^2
        // starting at x = 1 with lr = 0.1 and default moments.
        let expect = [0.900_000_000_5, 0.800_412_228_691_792_1, 0.701_586_272_946_029_5];
        let mut state = AdamState::new(1);
        let mut p = vec![1.0];
        for e in expect {
            let g = 2.0 * p[0];
            state.apply(&mut p, &[g], 0.1).unwrap();
            assert!((p[0] - e).abs() < 1e-12, "{} vs {e}", p[0]);
        }
    }

    #[test]
    fn adam_rejects_length_mismatch() {
        let mut state = AdamState::new(2);
        let mut p = vec![0.0; 3];
        assert!(state.apply(&mut p, &[0.0; 3], 0.1).is_err());
    }

    #[test]
    fn flatten_round_trip_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let net = MlpNetwork::xavier(&[6, 5, 4, 2], Activation::ReLU, &mut rng).unwrap();
        let flat = net.flatten();
        let mut other = MlpNetwork::zeros(&[6, 5, 4, 2], Activation::ReLU).unwrap();
        other.unflatten(&flat).unwrap();
        assert_eq!(flat, other.flatten());
    }

    #[test]
    fn client_model_head_gradient_leaves_encoder_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let encoder = MlpNetwork::xavier(&[4, 8, 6], Activation::ReLU, &mut rng).unwrap();
        let head = MlpNetwork::xavier(&[6, 2], Activation::ReLU, &mut rng).unwrap();
        let model = ClientModel::new(encoder, head).unwrap();
        let x = DenseMatrix::from_fn(5, 4, |_, _| rng.random_range(-1.0..1.0));
        let labels = vec![0, 1, 0, 1, 1];
        let (_, hg) = model.head_gradient(&x, &labels).unwrap();
        assert_eq!(hg.len(), model.head.param_count());
        let (_, eg) = model.encoder_gradient(&x, &labels).unwrap();
        assert_eq!(eg.len(), model.encoder.param_count());
    }
}
