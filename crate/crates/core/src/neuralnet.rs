//! Small dense feed-forward network with backpropagation and Adam.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
}

impl Architecture {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        Self { input, hidden: hidden.to_vec(), output }
    }

    fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input];
        s.extend(&self.hidden);
        s.push(self.output);
        s
    }
}

/// One affine layer; `weights` is row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    fn affine(&self, x: &[f64], z: &mut Vec<f64>) {
        z.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            z.push(self.biases[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
        }
    }
}

/// Parameters of a ReLU network with a linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub architecture: Architecture,
    pub layers: Vec<Layer>,
}

/// Gradient of the loss with respect to every parameter, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self { layers: net.layers.iter().map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.biases.len()])).collect() }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.iter_mut().zip(ow).for_each(|(a, c)| *a += c);
            b.iter_mut().zip(ob).for_each(|(a, c)| *a += c);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (w, b) in &mut self.layers {
            w.iter_mut().chain(b.iter_mut()).for_each(|v| *v *= s);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|(w, b)| w.iter().chain(b).copied()).collect()
    }
}

/// Intermediate values kept by [`Mlp::forward_trace`] for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    network: Mlp,
}

impl Mlp {
    /// Uniform initialisation in `±1/√fan_in` for every weight and bias.
    pub fn new<R: Rng + ?Sized>(architecture: Architecture, rng: &mut R) -> Result<Self> {
        let sizes = architecture.sizes();
        if sizes.contains(&0) {
            return Err(Error::InvalidParameter(format!("zero-width layer in {sizes:?}")));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-bound..bound)).collect::<Vec<_>>();
                Layer {
                    inputs: w[0],
                    outputs: w[1],
                    weights: draw(w[0] * w[1]),
                    biases: draw(w[1]),
                    activation: if i == last { Activation::Linear } else { Activation::Relu },
                }
            })
            .collect();
        Ok(Self { architecture, layers })
    }

    /// All parameters zero.
    pub fn zeros(architecture: Architecture) -> Self {
        let sizes = architecture.sizes();
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer {
                inputs: w[0],
                outputs: w[1],
                weights: vec![0.0; w[0] * w[1]],
                biases: vec![0.0; w[1]],
                activation: if i == last { Activation::Linear } else { Activation::Relu },
            })
            .collect();
        Self { architecture, layers }
    }

    pub fn input_dim(&self) -> usize {
        self.architecture.input
    }

    pub fn output_dim(&self) -> usize {
        self.architecture.output
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn parameters(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases).copied()).collect()
    }

    pub fn set_parameters(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.parameter_count() {
            return Err(Error::Contract(format!("{} parameters for a {}-parameter network", p.len(), self.parameter_count())));
        }
        let mut it = p.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.biases.iter_mut()).for_each(|v| *v = it.next().unwrap_or_default());
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    /// Checks that the layer shapes chain and match the architecture.
    pub fn validate(&self) -> Result<()> {
        let sizes = self.architecture.sizes();
        if self.layers.len() + 1 != sizes.len() {
            return Err(Error::Contract("layer count does not match the architecture".into()));
        }
        for (l, w) in self.layers.iter().zip(sizes.windows(2)) {
            if l.inputs != w[0] || l.outputs != w[1] || l.weights.len() != w[0] * w[1] || l.biases.len() != w[1] {
                return Err(Error::Contract(format!("layer shape {}x{} does not chain", l.outputs, l.inputs)));
            }
        }
        if !self.is_finite() {
            return Err(Error::Numerical("non-finite network parameter".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Contract(format!("input of length {} for a {}-input network", x.len(), self.input_dim())));
        }
        let mut a = x.to_vec();
        let mut z = Vec::new();
        for l in &self.layers {
            l.affine(&a, &mut z);
            a.clear();
            a.extend(z.iter().map(|&v| l.activation.apply(v)));
        }
        Ok(a)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        if x.len() != self.input_dim() {
            return Err(Error::Contract(format!("input of length {} for a {}-input network", x.len(), self.input_dim())));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.to_vec();
        for l in &self.layers {
            let mut z = Vec::new();
            l.affine(&a, &mut z);
            let next = z.iter().map(|&v| l.activation.apply(v)).collect();
            inputs.push(std::mem::replace(&mut a, next));
            pre.push(z);
        }
        Ok(Trace { inputs, pre, output: a })
    }

    /// Reverse-mode gradients given `∂loss/∂output`.
    pub fn backward(&self, trace: &Trace, grad_output: &[f64]) -> Result<Gradients> {
        if grad_output.len() != self.output_dim() {
            return Err(Error::Contract("upstream gradient does not match the output size".into()));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta: Vec<f64> = grad_output.to_vec();
        for (i, l) in self.layers.iter().enumerate().rev() {
            for (d, &z) in delta.iter_mut().zip(&trace.pre[i]) {
                *d *= l.activation.derivative(z);
            }
            let x = &trace.inputs[i];
            let (gw, gb) = &mut grads.layers[i];
            for o in 0..l.outputs {
                gb[o] = delta[o];
                let row = &mut gw[o * l.inputs..(o + 1) * l.inputs];
                row.iter_mut().zip(x).for_each(|(g, v)| *g = delta[o] * v);
            }
            if i > 0 {
                let mut up = vec![0.0; l.inputs];
                for o in 0..l.outputs {
                    let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                    up.iter_mut().zip(row).for_each(|(u, w)| *u += w * delta[o]);
                }
                delta = up;
            }
        }
        Ok(grads)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Checkpoint { version: CHECKPOINT_VERSION, network: self.clone() })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint version {}", c.version)));
        }
        c.network.validate()?;
        Ok(c.network)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Contract(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

/// Mean of squared differences.
pub fn mse_loss(predicted: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths(predicted, target)?;
    Ok(predicted.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / predicted.len() as f64)
}

/// `∂ mse / ∂ predicted`.
pub fn mse_gradient(predicted: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    check_lengths(predicted, target)?;
    let n = predicted.len() as f64;
    Ok(predicted.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam moments for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(net: &Mlp, config: AdamConfig) -> Self {
        let n = net.parameter_count();
        Self { config, step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    /// One bias-corrected update of `net` along `grads`.
    pub fn update(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        let g = grads.flatten();
        if g.len() != self.m.len() || g.len() != net.parameter_count() {
            return Err(Error::Contract("gradient shape does not match the optimizer".into()));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite gradient".into()));
        }
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        self.step += 1;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let mut i = 0;
        for l in &mut net.layers {
            for p in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g[i];
                self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = self.m[i] / c1;
                let v_hat = self.v[i] / c2;
                *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
                i += 1;
            }
        }
        if !net.is_finite() {
            return Err(Error::Numerical("non-finite parameter after update".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(Architecture::new(5, &[4, 3], 2));
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap(), vec![0.0, 0.0]);
        assert!(net.forward(&[1.0]).is_err());
    }

    #[test]
    fn identity_linear_layer() {
        let mut net = Mlp::zeros(Architecture::new(3, &[], 3));
        for i in 0..3 {
            net.layers[0].weights[i * 3 + i] = 1.0;
        }
        assert_eq!(net.forward(&[1.5, -2.0, 0.25]).unwrap(), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn relu_blocks_negative_paths() {
        let mut net = Mlp::zeros(Architecture::new(1, &[1], 1));
        net.layers[0].weights[0] = -1.0;
        net.layers[1].weights[0] = 5.0;
        assert_eq!(net.forward(&[2.0]).unwrap(), vec![0.0]);
        let trace = net.forward_trace(&[2.0]).unwrap();
        let g = net.backward(&trace, &[1.0]).unwrap();
        assert_eq!(g.layers[0].0, vec![0.0]);
        assert_eq!(g.layers[0].1, vec![0.0]);
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.0, 0.0], &[2.0, 0.0]).unwrap(), 2.0);
        assert_eq!(mse_loss(&[1.0, 4.0, 2.0], &[0.0, 1.0, 2.5]).unwrap(), mse_loss(&[2.0, 1.0, 4.0], &[2.5, 0.0, 1.0]).unwrap());
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = Mlp::new(Architecture::new(4, &[6, 5], 3), &mut rng()).unwrap();
        let t = net.forward_trace(&[0.1, 0.2, -0.3, 0.4]).unwrap();
        let g = net.backward(&t, &[0.0; 3]).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adam_leaves_weights_alone_without_gradient() {
        let mut net = Mlp::new(Architecture::new(3, &[4], 2), &mut rng()).unwrap();
        let before = net.parameters();
        let mut opt = Adam::new(&net, AdamConfig::default());
        for _ in 0..5 {
            let zero = Gradients::zeros_like(&net);
            opt.update(&mut net, &zero).unwrap();
        }
        for (a, b) in net.parameters().iter().zip(&before) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_descends_on_a_parabola() {
        // single linear unit with zero input: the bias is the only live parameter, f(b) = b²
        let mut net = Mlp::zeros(Architecture::new(1, &[], 1));
        net.layers[0].biases[0] = 0.5;
        let mut opt = Adam::new(&net, AdamConfig { learning_rate: 1e-3, ..Default::default() });
        let mut prev = 0.5f64;
        for _ in 0..100 {
            let t = net.forward_trace(&[0.0]).unwrap();
            let g = net.backward(&t, &[2.0 * t.output[0]]).unwrap();
            opt.update(&mut net, &g).unwrap();
            let b = net.layers[0].biases[0];
            assert!(b.abs() < prev.abs());
            prev = b;
        }
    }

    #[test]
    fn adam_is_deterministic() {
        let net0 = Mlp::new(Architecture::new(3, &[4], 2), &mut rng()).unwrap();
        let run = || {
            let mut net = net0.clone();
            let mut opt = Adam::new(&net, AdamConfig::default());
            let t = net.forward_trace(&[0.3, -0.2, 0.9]).unwrap();
            let g = net.backward(&t, &mse_gradient(&t.output, &[1.0, -1.0]).unwrap()).unwrap();
            opt.update(&mut net, &g).unwrap();
            net
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn clones_are_independent() {
        let mut net = Mlp::new(Architecture::new(3, &[4], 2), &mut rng()).unwrap();
        let copy = net.clone();
        assert_eq!(copy, net);
        let x = [0.1, 0.5, -0.7];
        assert_eq!(copy.forward(&x).unwrap(), net.forward(&x).unwrap());
        net.layers[0].weights[0] += 1.0;
        assert_ne!(copy, net);
        assert_eq!(copy.forward(&x).unwrap(), Mlp::from_json(&copy.to_json().unwrap()).unwrap().forward(&x).unwrap());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let net = Mlp::new(Architecture::new(24, &[24, 24], 16), &mut rng()).unwrap();
        let back = Mlp::from_json(&net.to_json().unwrap()).unwrap();
        let bits = |n: &Mlp| n.parameters().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&net));
        assert_eq!(back.layers.iter().map(|l| l.activation).collect::<Vec<_>>(), net.layers.iter().map(|l| l.activation).collect::<Vec<_>>());
    }
}
