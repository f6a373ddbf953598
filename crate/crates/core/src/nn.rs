//! Dense feed-forward networks trained one sample at a time.
//!
//! Everything is `f32`. Parameters are laid out canonically as layer 0..N,
//! and within a layer the weight matrix row-major (one row per output
//! neuron) followed by the bias vector. Flattening, Adam updates and the
//! wire format all share that order.
//!
//! Initialization draws from Glorot-uniform using `ChaCha8Rng` seeded with
//! `seed_from_u64`, so a `(shape, seed)` pair always produces the same bits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("invalid network shape: {0}")]
    InvalidShape(String),
    #[error("input has {got} features, network expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("input contains a non-finite value")]
    NonFiniteInput,
    #[error("output gradient has {got} entries, network emits {expected}")]
    OutputGradDim { expected: usize, got: usize },
    #[error("forward cache does not belong to the current parameters")]
    StaleCache,
    #[error("parameter vector has {got} entries, network has {expected}")]
    ParamCount { expected: usize, got: usize },
    #[error("gradient/optimizer shape does not match the network")]
    ShapeMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Softmax,
    Identity,
}

/// One entry of a shape specification: output width plus activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub const fn new(width: usize, activation: Activation) -> Self {
        Self { width, activation }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs x inputs`, row-major.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
    pub activation: Activation,
}

impl DenseLayer {
    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
    input_dim: usize,
    rng_seed: u64,
    // Bumped on every parameter mutation so stale forward caches are caught.
    generation: u64,
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.input_dim == other.input_dim
            && self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.inputs == b.inputs
                    && a.outputs == b.outputs
                    && a.activation == b.activation
                    && bits_eq(&a.weights, &b.weights)
                    && bits_eq(&a.bias, &b.bias)
            })
    }
}

fn bits_eq(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Layer inputs and outputs recorded by [`DenseNet::forward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    generation: u64,
    /// `activations[0]` is the network input, `activations[k + 1]` the output of layer k.
    activations: Vec<Vec<f32>>,
}

impl ForwardPass {
    pub fn output(&self) -> &[f32] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Per-layer gradients, shape-congruent with the net that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGradient>,
}

impl GradientSet {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    /// Gradients in canonical flatten order.
    pub fn flatten(&self) -> Vec<f32> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|g| *g == 0.0))
    }

    fn congruent_with(&self, net: &DenseNet) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weights.len() == l.weights.len() && g.bias.len() == l.bias.len())
    }
}

impl DenseNet {
    /// Builds a net with Glorot-uniform weights and zero biases.
    pub fn new(input_dim: usize, shape: &[LayerSpec], seed: u64) -> Result<Self, NnError> {
        validate_shape(input_dim, shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(shape.len());
        let mut fan_in = input_dim;
        for spec in shape {
            let fan_out = spec.width;
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
            let weights = (0..fan_in * fan_out)
                .map(|_| (rng.random::<f32>() * 2.0 - 1.0) * limit)
                .collect();
            layers.push(DenseLayer {
                inputs: fan_in,
                outputs: fan_out,
                weights,
                bias: vec![0.0; fan_out],
                activation: spec.activation,
            });
            fan_in = fan_out;
        }
        Ok(Self {
            layers,
            input_dim,
            rng_seed: seed,
            generation: 0,
        })
    }

    /// Same shape as [`DenseNet::new`] but with every parameter zero.
    pub fn zeroed(input_dim: usize, shape: &[LayerSpec]) -> Result<Self, NnError> {
        let mut net = Self::new(input_dim, shape, 0)?;
        for l in &mut net.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Mutable access to one layer. Invalidates outstanding forward caches.
    pub fn layer_mut(&mut self, index: usize) -> &mut DenseLayer {
        self.generation += 1;
        &mut self.layers[index]
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|p| p.is_finite()))
    }

    pub fn forward(&self, x: &[f32]) -> Result<ForwardPass, NnError> {
        if x.len() != self.input_dim {
            return Err(NnError::InputDim {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteInput);
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        for layer in &self.layers {
            let input = activations.last().expect("input pushed above");
            let mut z = layer.bias.clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                *zo += dot(row, input);
            }
            apply_activation(layer.activation, &mut z);
            activations.push(z);
        }
        Ok(ForwardPass {
            generation: self.generation,
            activations,
        })
    }

    /// Convenience wrapper returning only the output vector.
    pub fn predict(&self, x: &[f32]) -> Result<Vec<f32>, NnError> {
        Ok(self.forward(x)?.activations.pop().unwrap_or_default())
    }

    /// Back-propagates `output_grad` (d loss / d output). For a softmax head
    /// the gradient is taken with respect to the probabilities; the softmax
    /// Jacobian is applied here.
    pub fn backward(&self, pass: &ForwardPass, output_grad: &[f32]) -> Result<GradientSet, NnError> {
        if pass.generation != self.generation || pass.activations.len() != self.layers.len() + 1 {
            return Err(NnError::StaleCache);
        }
        if output_grad.len() != self.output_dim() {
            return Err(NnError::OutputGradDim {
                expected: self.output_dim(),
                got: output_grad.len(),
            });
        }
        let mut grads = GradientSet::zeros_like(self);
        let mut upstream = output_grad.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let input = &pass.activations[k];
            let output = &pass.activations[k + 1];
            let delta = activation_backward(layer.activation, output, &upstream);

            let g = &mut grads.layers[k];
            for (o, d) in delta.iter().enumerate() {
                g.bias[o] = *d;
                if *d != 0.0 {
                    let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (gw, xi) in row.iter_mut().zip(input) {
                        *gw = d * xi;
                    }
                }
            }

            if k > 0 {
                let mut next = vec![0.0f32; layer.inputs];
                for (o, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (n, w) in next.iter_mut().zip(row) {
                        *n += d * w;
                    }
                }
                upstream = next;
            }
        }
        Ok(grads)
    }

    pub fn flatten_params(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Overwrites every parameter from a canonical-order vector.
    pub fn unflatten_params(&mut self, params: &[f32]) -> Result<(), NnError> {
        if params.len() != self.param_count() {
            return Err(NnError::ParamCount {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[offset..offset + nw]);
            offset += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
        }
        self.generation += 1;
        Ok(())
    }
}

fn validate_shape(input_dim: usize, shape: &[LayerSpec]) -> Result<(), NnError> {
    if input_dim == 0 {
        return Err(NnError::InvalidShape("input width must be positive".into()));
    }
    if shape.is_empty() {
        return Err(NnError::InvalidShape("at least one layer required".into()));
    }
    for (k, spec) in shape.iter().enumerate() {
        if spec.width == 0 {
            return Err(NnError::InvalidShape(format!("layer {k} has zero width")));
        }
        if spec.activation == Activation::Softmax && k + 1 != shape.len() {
            return Err(NnError::InvalidShape(format!(
                "softmax only allowed on the final layer (found on layer {k})"
            )));
        }
    }
    Ok(())
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn apply_activation(act: Activation, z: &mut [f32]) {
    match act {
        Activation::Identity => {}
        Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
        Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
        Activation::Softmax => softmax_in_place(z),
    }
}

pub fn softmax_in_place(z: &mut [f32]) {
    let max = z.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

/// d loss / d pre-activation given the layer output and d loss / d output.
fn activation_backward(act: Activation, output: &[f32], upstream: &[f32]) -> Vec<f32> {
    match act {
        Activation::Identity => upstream.to_vec(),
        Activation::Tanh => output
            .iter()
            .zip(upstream)
            .map(|(y, g)| g * (1.0 - y * y))
            .collect(),
        Activation::Relu => output
            .iter()
            .zip(upstream)
            .map(|(y, g)| if *y > 0.0 { *g } else { 0.0 })
            .collect(),
        Activation::Softmax => {
            let weighted: f32 = output.iter().zip(upstream).map(|(p, g)| p * g).sum();
            output
                .iter()
                .zip(upstream)
                .map(|(p, g)| p * (g - weighted))
                .collect()
        }
    }
}

#[inline]
fn flush(x: f32) -> f32 {
    if x.abs() < f32::MIN_POSITIVE {
        0.0
    } else {
        x
    }
}

/// Adam optimizer state for a single network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step_count: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl AdamState {
    pub const DEFAULT_LEARNING_RATE: f32 = 1e-5;

    pub fn new(net: &DenseNet, learning_rate: f32) -> Self {
        Self::with_params(net.param_count(), learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_params(n: usize, learning_rate: f32, beta1: f32, beta2: f32, epsilon: f32) -> Self {
        Self {
            step_count: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
            learning_rate,
            beta1,
            beta2,
            epsilon,
        }
    }

    /// One bias-corrected Adam update, walking parameters in flatten order.
    ///
    /// An all-zero gradient only advances `step_count`; moments and
    /// parameters are left untouched. Moments that decay into the subnormal
    /// range are flushed to zero: they contribute nothing representable to a
    /// live parameter and make every later update several times slower.
    pub fn step(&mut self, net: &mut DenseNet, grads: &GradientSet) -> Result<(), NnError> {
        if self.m.len() != net.param_count() || self.v.len() != self.m.len() || !grads.congruent_with(net) {
            return Err(NnError::ShapeMismatch);
        }
        self.step_count += 1;
        if grads.is_zero() {
            return Ok(());
        }
        let t = self.step_count.min(i32::MAX as u64) as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        let mut offset = 0;
        net.generation += 1;
        for (layer, g) in net.layers.iter_mut().zip(&grads.layers) {
            for (params, grad) in [(&mut layer.weights, &g.weights), (&mut layer.bias, &g.bias)] {
                let n = params.len();
                let m = &mut self.m[offset..offset + n];
                let v = &mut self.v[offset..offset + n];
                for (((p, gi), mi), vi) in params.iter_mut().zip(grad).zip(m).zip(v) {
                    *mi = flush(b1 * *mi + (1.0 - b1) * gi);
                    *vi = flush(b2 * *vi + (1.0 - b2) * gi * gi);
                    let m_hat = *mi / bc1;
                    let v_hat = *vi / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                }
                offset += n;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape_5_256_256_3() -> Vec<LayerSpec> {
        vec![
            LayerSpec::new(256, Activation::Tanh),
            LayerSpec::new(256, Activation::Tanh),
            LayerSpec::new(3, Activation::Softmax),
        ]
    }

    #[test]
    fn softmax_head_sums_to_one() {
        let net = DenseNet::new(5, &[LayerSpec::new(3, Activation::Softmax)], 9).unwrap();
        let out = net.predict(&[0.0; 5]).unwrap();
        assert!((out.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn biases_start_at_zero() {
        let net = DenseNet::new(5, &shape_5_256_256_3(), 1234).unwrap();
        assert!(net.layers().iter().all(|l| l.bias.iter().all(|b| b.to_bits() == 0)));
    }

    #[test]
    fn same_seed_same_bits() {
        let a = DenseNet::new(5, &shape_5_256_256_3(), 7).unwrap();
        let b = DenseNet::new(5, &shape_5_256_256_3(), 7).unwrap();
        let fa: Vec<u32> = a.flatten_params().iter().map(|p| p.to_bits()).collect();
        let fb: Vec<u32> = b.flatten_params().iter().map(|p| p.to_bits()).collect();
        assert_eq!(fa, fb);
        let c = DenseNet::new(5, &shape_5_256_256_3(), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn glorot_bounds_hold() {
        let net = DenseNet::new(5, &shape_5_256_256_3(), 3).unwrap();
        for l in net.layers() {
            let limit = (6.0 / (l.inputs + l.outputs) as f64).sqrt() as f32;
            assert!(l.weights.iter().all(|w| w.abs() <= limit));
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(DenseNet::new(0, &[LayerSpec::new(1, Activation::Identity)], 0).is_err());
        assert!(DenseNet::new(3, &[], 0).is_err());
        assert!(DenseNet::new(3, &[LayerSpec::new(0, Activation::Tanh)], 0).is_err());
        let bad = [LayerSpec::new(4, Activation::Softmax), LayerSpec::new(2, Activation::Identity)];
        assert!(matches!(DenseNet::new(3, &bad, 0), Err(NnError::InvalidShape(_))));
    }

    #[test]
    fn zero_net_softmax_is_uniform() {
        let net = DenseNet::zeroed(5, &shape_5_256_256_3()).unwrap();
        let out = net.predict(&[0.3, -1.0, 2.0, 0.5, 0.1]).unwrap();
        for p in out {
            assert!((p - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn relu_clips_negative_preactivation() {
        let mut net = DenseNet::zeroed(1, &[LayerSpec::new(1, Activation::Relu)]).unwrap();
        net.layer_mut(0).weights[0] = -1.0;
        assert_eq!(net.predict(&[2.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let net = DenseNet::new(5, &shape_5_256_256_3(), 1).unwrap();
        assert!(matches!(net.forward(&[0.0; 4]), Err(NnError::InputDim { .. })));
        assert_eq!(
            net.forward(&[0.0, f32::NAN, 0.0, 0.0, 0.0]).unwrap_err(),
            NnError::NonFiniteInput
        );
    }

    #[test]
    fn adam_flushes_subnormal_moments() {
        let mut net = DenseNet::zeroed(1, &[LayerSpec::new(1, Activation::Identity)]).unwrap();
        let mut opt = AdamState::new(&net, 1e-3);
        opt.m = vec![f32::MIN_POSITIVE, 1.0];
        opt.v = vec![f32::MIN_POSITIVE, 1.0];
        let pass = net.forward(&[0.0]).unwrap();
        // d/dw = 0 (x = 0), d/db = 1e-3.
        let g = net.backward(&pass, &[1e-3]).unwrap();
        opt.step(&mut net, &g).unwrap();
        assert_eq!(opt.m[0], 0.0);
        assert_eq!(opt.v[0], 0.0);
        assert!(opt.m[1].is_normal() && opt.v[1].is_normal());
        assert!(opt.m.iter().chain(&opt.v).all(|x| !x.is_subnormal()));
    }

    #[test]
    fn zero_output_grad_gives_zero_grads() {
        let net = DenseNet::new(5, &shape_5_256_256_3(), 1).unwrap();
        let pass = net.forward(&[0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let g = net.backward(&pass, &[0.0; 3]).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn scalar_identity_hand_chain_rule() {
        let mut net = DenseNet::zeroed(1, &[LayerSpec::new(1, Activation::Identity)]).unwrap();
        net.unflatten_params(&[0.7, -0.2]).unwrap();
        let pass = net.forward(&[2.0]).unwrap();
        let g = net.backward(&pass, &[1.0]).unwrap();
        assert_eq!(g.layers[0].weights, vec![2.0]);
        assert_eq!(g.layers[0].bias, vec![1.0]);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = DenseNet::new(2, &[LayerSpec::new(2, Activation::Tanh)], 1).unwrap();
        let pass = net.forward(&[1.0, 2.0]).unwrap();
        let p = net.flatten_params();
        net.unflatten_params(&p).unwrap();
        assert_eq!(net.backward(&pass, &[1.0, 1.0]).unwrap_err(), NnError::StaleCache);
        let other = DenseNet::new(2, &[LayerSpec::new(2, Activation::Tanh); 2], 1).unwrap();
        let pass2 = other.forward(&[1.0, 2.0]).unwrap();
        assert_eq!(net.backward(&pass2, &[1.0, 1.0]).unwrap_err(), NnError::StaleCache);
    }

    #[test]
    fn flatten_layout_is_weights_then_bias() {
        let mut net = DenseNet::zeroed(1, &[LayerSpec::new(1, Activation::Identity)]).unwrap();
        net.layer_mut(0).weights[0] = 0.5;
        net.layer_mut(0).bias[0] = -1.5;
        assert_eq!(net.flatten_params(), vec![0.5, -1.5]);
    }

    #[test]
    fn actor_param_count_5_256_256_3() {
        let net = DenseNet::new(5, &shape_5_256_256_3(), 0).unwrap();
        assert_eq!(net.param_count(), 5 * 256 + 256 + 256 * 256 + 256 + 256 * 3 + 3);
        assert_eq!(net.param_count(), 68_099);
    }

    #[test]
    fn unflatten_length_mismatch() {
        let mut net = DenseNet::new(2, &[LayerSpec::new(2, Activation::Tanh)], 1).unwrap();
        assert!(matches!(net.unflatten_params(&[0.0; 5]), Err(NnError::ParamCount { .. })));
    }

    #[test]
    fn adam_zero_grad_leaves_params() {
        let mut net = DenseNet::new(5, &shape_5_256_256_3(), 1).unwrap();
        let before = net.clone();
        let mut opt = AdamState::new(&net, 1e-3);
        let g = GradientSet::zeros_like(&net);
        opt.step(&mut net, &g).unwrap();
        assert_eq!(opt.step_count, 1);
        assert_eq!(net, before);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut net = DenseNet::new(3, &[LayerSpec::new(2, Activation::Identity)], 4).unwrap();
        let before = net.flatten_params();
        let mut opt = AdamState::new(&net, 1e-3);
        let mut g = GradientSet::zeros_like(&net);
        for l in &mut g.layers {
            l.weights.iter_mut().for_each(|x| *x = 0.25);
            l.bias.iter_mut().for_each(|x| *x = 0.25);
        }
        opt.step(&mut net, &g).unwrap();
        for (a, b) in net.flatten_params().iter().zip(&before) {
            let expected = -1e-3 * 0.25 / (0.25 + 1e-8);
            assert!(((a - b) - expected).abs() < 1e-7, "{} vs {}", a - b, expected);
        }
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut net = DenseNet::new(3, &[LayerSpec::new(2, Activation::Identity)], 4).unwrap();
        let other = DenseNet::new(3, &[LayerSpec::new(3, Activation::Identity)], 4).unwrap();
        let mut opt = AdamState::new(&net, 1e-3);
        assert_eq!(
            opt.step(&mut net, &GradientSet::zeros_like(&other)).unwrap_err(),
            NnError::ShapeMismatch
        );
    }
}
