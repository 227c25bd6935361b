//! Fully connected feed-forward network trained with plain SGD on a
//! mean-square error.
//!
//! The loss only looks at one output coordinate per sample (the action that
//! was taken); every other output receives zero gradient.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::{Error, FormatError, Rng};

/// Hidden-layer nonlinearity. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => libm::tanh(x),
        }
    }

    /// Derivative expressed through the pre-activation `z` and activation `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }

    fn code(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 10,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidConfig("learning_rate must be in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive"));
        }
        Ok(())
    }
}

/// One affine layer. `weights` is row-major with shape `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    inputs: usize,
    outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    fn affine(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.biases)
                .map(|(row, b)| row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b),
        );
    }

    fn parameter_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

/// Feed-forward network with identical activation on every hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    layers: Vec<Dense>,
    activation: Activation,
}

/// Per-sample activations recorded during a forward pass.
struct Trace {
    /// `pre[l]` is the pre-activation of layer `l`.
    pre: Vec<Vec<f64>>,
    /// `post[0]` is the input, `post[l + 1]` the output of layer `l`.
    post: Vec<Vec<f64>>,
}

impl MlpNetwork {
    /// Build a network whose weights are drawn uniformly from
    /// `±sqrt(6 / (fan_in + fan_out))`; biases start at zero.
    pub fn new(layer_sizes: &[usize], activation: Activation, rng: &mut Rng) -> Result<Self, Error> {
        let mut net = Self::zeros(layer_sizes, activation)?;
        for layer in &mut net.layers {
            let limit = libm::sqrt(6.0 / (layer.inputs + layer.outputs) as f64);
            for w in &mut layer.weights {
                *w = rng.gen_range(-limit..=limit);
            }
        }
        Ok(net)
    }

    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self, Error> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidConfig(
                "a network needs at least an input and an output layer",
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::InvalidConfig("layer sizes must be positive"));
        }
        let layers = layer_sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Ok(Self { layers, activation })
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.layers.len() + 1);
        sizes.push(self.layers[0].inputs);
        sizes.extend(self.layers.iter().map(|l| l.outputs));
        sizes
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_len(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, Error> {
        self.check_input(input)?;
        let last = self.layers.len() - 1;
        let mut current = input.to_vec();
        let mut next = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.affine(&current, &mut next);
            if l != last {
                for v in &mut next {
                    *v = self.activation.apply(*v);
                }
            }
            core::mem::swap(&mut current, &mut next);
        }
        Ok(current)
    }

    fn check_input(&self, input: &[f64]) -> Result<(), Error> {
        if input.len() != self.input_len() {
            return Err(Error::DimensionMismatch {
                expected: self.input_len(),
                found: input.len(),
            });
        }
        Ok(())
    }

    fn trace(&self, input: &[f64]) -> Trace {
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len() + 1);
        post.push(input.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.affine(&post[l], &mut z);
            let a = if l == last {
                z.clone()
            } else {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            };
            pre.push(z);
            post.push(a);
        }
        Trace { pre, post }
    }

    fn check_batch<X: AsRef<[f64]>>(&self, inputs: &[X], targets: &[f64], actions: &[usize]) -> Result<(), Error> {
        if inputs.is_empty() {
            return Err(Error::DimensionMismatch { expected: 1, found: 0 });
        }
        for len in [targets.len(), actions.len()] {
            if len != inputs.len() {
                return Err(Error::DimensionMismatch {
                    expected: inputs.len(),
                    found: len,
                });
            }
        }
        for x in inputs {
            self.check_input(x.as_ref())?;
        }
        if let Some(&a) = actions.iter().find(|&&a| a >= self.output_len()) {
            return Err(Error::DimensionMismatch {
                expected: self.output_len(),
                found: a + 1,
            });
        }
        Ok(())
    }

    /// Mean over the batch of `(Q(x, a) - target)^2`.
    pub fn loss<X: AsRef<[f64]>>(&self, inputs: &[X], targets: &[f64], actions: &[usize]) -> Result<f64, Error> {
        self.check_batch(inputs, targets, actions)?;
        let mut total = 0.0;
        for ((x, &y), &a) in inputs.iter().zip(targets).zip(actions) {
            let q = self.forward(x.as_ref())?[a];
            total += (q - y) * (q - y);
        }
        Ok(total / inputs.len() as f64)
    }

    /// Loss and its gradient with respect to [`MlpNetwork::parameters`].
    pub fn gradient<X: AsRef<[f64]>>(
        &self,
        inputs: &[X],
        targets: &[f64],
        actions: &[usize],
    ) -> Result<(f64, Vec<f64>), Error> {
        self.check_batch(inputs, targets, actions)?;
        let mut grads: Vec<Dense> = self.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect();
        let batch = inputs.len() as f64;
        let last = self.layers.len() - 1;
        let mut loss = 0.0;

        for ((x, &y), &a) in inputs.iter().zip(targets).zip(actions) {
            let trace = self.trace(x.as_ref());
            let q = trace.post[last + 1][a];
            loss += (q - y) * (q - y);

            let mut delta = vec![0.0; self.output_len()];
            delta[a] = 2.0 * (q - y) / batch;
            for l in (0..=last).rev() {
                let layer = &self.layers[l];
                let grad = &mut grads[l];
                let input = &trace.post[l];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    grad.biases[o] += d;
                    let row = &mut grad.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (g, &xi) in row.iter_mut().zip(input) {
                        *g += d * xi;
                    }
                }
                if l == 0 {
                    break;
                }
                let mut prev = vec![0.0; layer.inputs];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (p, &w) in prev.iter_mut().zip(row) {
                        *p += w * d;
                    }
                }
                for ((p, &z), &act) in prev.iter_mut().zip(&trace.pre[l - 1]).zip(&trace.post[l]) {
                    *p *= self.activation.derivative(z, act);
                }
                delta = prev;
            }
        }

        let mut flat = Vec::with_capacity(self.parameter_count());
        for g in &grads {
            flat.extend_from_slice(&g.weights);
            flat.extend_from_slice(&g.biases);
        }
        Ok((loss / batch, flat))
    }

    /// One SGD step on the batch. Returns the loss measured before the step.
    ///
    /// Nothing is updated when the loss or any gradient entry is non-finite.
    pub fn train_batch<X: AsRef<[f64]>>(
        &mut self,
        inputs: &[X],
        targets: &[f64],
        actions: &[usize],
        cfg: &TrainingConfig,
    ) -> Result<f64, Error> {
        if inputs.len() != cfg.batch_size {
            return Err(Error::DimensionMismatch {
                expected: cfg.batch_size,
                found: inputs.len(),
            });
        }
        let (loss, grad) = self.gradient(inputs, targets, actions)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss);
        }
        let mut g = grad.iter();
        for layer in &mut self.layers {
            for p in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *p -= cfg.learning_rate * g.next().expect("gradient length matches parameters");
            }
        }
        Ok(loss)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Dense::parameter_count).sum()
    }

    /// All parameters, layer by layer: weights (row-major) then biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<(), Error> {
        if params.len() != self.parameter_count() {
            return Err(Error::DimensionMismatch {
                expected: self.parameter_count(),
                found: params.len(),
            });
        }
        let mut it = params.iter();
        for layer in &mut self.layers {
            for p in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *p = *it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|p| p.is_finite()))
    }

    /// Copy of the network to be used as a target network.
    pub fn clone_into_target(&self) -> MlpNetwork {
        self.clone()
    }

    /// Overwrite this network's parameters with `source`'s, reusing buffers.
    pub fn copy_from(&mut self, source: &MlpNetwork) {
        self.clone_from(source);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        checkpoint::encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        checkpoint::decode(bytes, checkpoint::VERSION)
    }
}

/// Binary network checkpoint, all integers and floats little-endian:
///
/// ```text
/// "QGN1"              magic
/// u32                 version
/// u32                 hidden activation (0 = relu, 1 = tanh)
/// u32                 number of layer sizes k
/// u32 * k             layer sizes
/// per layer: f64 * (out * in) weights (row-major), f64 * out biases
/// ```
pub mod checkpoint {
    use super::*;

    pub const MAGIC: &[u8; 4] = b"QGN1";
    pub const VERSION: u32 = 1;

    pub fn encode(net: &MlpNetwork) -> Vec<u8> {
        let sizes = net.layer_sizes();
        let mut out = Vec::with_capacity(16 + 4 * sizes.len() + 8 * net.parameter_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&net.activation.code().to_le_bytes());
        out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
        for s in sizes {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        for p in net.parameters() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    struct Reader<'a> {
        bytes: &'a [u8],
    }

    impl<'a> Reader<'a> {
        fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
            if self.bytes.len() < n {
                return Err(FormatError::Truncated);
            }
            let (head, tail) = self.bytes.split_at(n);
            self.bytes = tail;
            Ok(head)
        }

        fn u32(&mut self) -> Result<u32, FormatError> {
            Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
        }

        fn f64(&mut self) -> Result<f64, FormatError> {
            Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
        }
    }

    /// Decode a checkpoint, accepting only `expected_version`.
    pub fn decode(bytes: &[u8], expected_version: u32) -> Result<MlpNetwork, FormatError> {
        let mut r = Reader { bytes };
        if r.take(4).map_err(|_| FormatError::BadMagic)? != MAGIC {
            return Err(FormatError::BadMagic);
        }
        let found = r.u32()?;
        if found != expected_version {
            return Err(FormatError::UnsupportedVersion {
                expected: expected_version,
                found,
            });
        }
        let activation = Activation::from_code(r.u32()?).ok_or(FormatError::InvalidHeader("unknown activation"))?;
        let count = r.u32()? as usize;
        if count < 2 {
            return Err(FormatError::InvalidHeader("fewer than two layer sizes"));
        }
        if count > r.bytes.len() / 4 {
            return Err(FormatError::Truncated);
        }
        let mut sizes = Vec::with_capacity(count);
        for _ in 0..count {
            sizes.push(r.u32()? as usize);
        }
        let mut net =
            MlpNetwork::zeros(&sizes, activation).map_err(|_| FormatError::InvalidHeader("zero-sized layer"))?;
        let params = net.parameter_count();
        if params > r.bytes.len() / 8 {
            return Err(FormatError::Truncated);
        }
        for layer in &mut net.layers {
            for p in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *p = r.f64()?;
            }
        }
        if !r.bytes.is_empty() {
            return Err(FormatError::TrailingBytes(r.bytes.len()));
        }
        Ok(net)
    }
}
