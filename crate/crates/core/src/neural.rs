//! A small dense network with exact gradients with respect to parameters and
//! inputs, an Adam optimiser and early-stopped training.
//!
//! Layers are stored row-major as `inputs x outputs`, so
//! `weights[i * outputs + j]` connects input `i` to output `j`. Every layer except the last is
//! followed by a ReLU; the last is followed by the output head.

use alloc::vec;
use alloc::vec::Vec;

use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::N_FEATURES;
use crate::math::sigmoid;
use crate::{Error, Result};

/// Hidden and output widths of the behaviour networks.
pub const STANDARD_SIZES: [usize; 4] = [N_FEATURES, 24, 12, 1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Sigmoid,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    /// Binary cross-entropy on a sigmoid head.
    Bce,
    /// Squared error on a linear head.
    Mse,
}

impl Loss {
    pub fn head(self) -> Head {
        match self {
            Self::Bce => Head::Sigmoid,
            Self::Mse => Head::Linear,
        }
    }

    /// Loss and its derivative with respect to the final pre-activation `z`.
    fn value_and_slope(self, z: f64, target: f64) -> (f64, f64) {
        match self {
            Loss::Bce => {
                // softplus(z) - t z, evaluated without overflow.
                let softplus = if z > 0.0 {
                    z + libm::log1p(libm::exp(-z))
                } else {
                    libm::log1p(libm::exp(z))
                };
                (softplus - target * z, sigmoid(z) - target)
            }
            Loss::Mse => {
                let d = z - target;
                (d * d, 2.0 * d)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&self.bias);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.weights[i * self.outputs..(i + 1) * self.outputs];
            for (o, w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
    }
}

/// Multilayer perceptron with ReLU hidden layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub head: Head,
}

/// Parameter and input gradients of a scalar loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    /// Flat, in [`Mlp::params`] order.
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

struct Trace {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<f64>>,
}

impl Mlp {
    /// Uniform initialisation in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for
    /// weights and biases.
    pub fn new(sizes: &[usize], head: Head, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / libm::sqrt(w[0] as f64);
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                let mut layer = Dense::zeros(w[0], w[1]);
                layer.weights.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
                layer.bias.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
                layer
            })
            .collect();
        Self { layers, head }
    }

    pub fn standard(head: Head, seed: u64) -> Self {
        Self::new(&STANDARD_SIZES, head, seed)
    }

    pub fn zeros(sizes: &[usize], head: Head) -> Self {
        Self { layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(), head }
    }

    /// A standard-shaped network whose final pre-activation is exactly the
    /// affine function `weights . x + bias`. Each input is split into its
    /// positive and negative parts by the first layer and recombined by the
    /// second, so the ReLUs never clip the affine value.
    pub fn affine(weights: &[f64; N_FEATURES], bias: f64, head: Head) -> Self {
        let mut net = Self::zeros(&STANDARD_SIZES, head);
        let (l1, rest) = net.layers.split_at_mut(1);
        let (l2, l3) = rest.split_at_mut(1);
        let (l1, l2, l3) = (&mut l1[0], &mut l2[0], &mut l3[0]);
        for i in 0..N_FEATURES {
            l1.weights[i * 24 + 2 * i] = 1.0;
            l1.weights[i * 24 + 2 * i + 1] = -1.0;
        }
        for (i, &w) in weights.iter().enumerate() {
            l2.weights[(2 * i) * 12] = w;
            l2.weights[(2 * i + 1) * 12] = -w;
            l2.weights[(2 * i) * 12 + 1] = -w;
            l2.weights[(2 * i + 1) * 12 + 1] = w;
        }
        l2.bias[0] = bias;
        l2.bias[1] = -bias;
        l3.weights[0] = 1.0;
        l3.weights[1] = -1.0;
        net
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    /// Layer shapes as `(inputs, outputs)`.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.inputs, l.outputs)).collect()
    }

    /// Checks that consecutive layers chain, buffers match their declared
    /// shapes, the network ends in one output and every parameter is finite.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("network has no layers".into()));
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::Shape(alloc::format!("layer {k} buffers do not match shape")));
            }
            if let Some(next) = self.layers.get(k + 1) {
                if next.inputs != l.outputs {
                    return Err(Error::Shape(alloc::format!("layer {k} does not chain")));
                }
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("network parameters"));
            }
        }
        if self.layers.last().map(|l| l.outputs) != Some(1) {
            return Err(Error::Shape("network must have a single output".into()));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.n_params(), "parameter count");
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[at..at + nb]);
            at += nb;
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(alloc::format!(
                "expected {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input"));
        }
        Ok(())
    }

    /// Final pre-activation.
    fn logit(&self, x: &[f64]) -> f64 {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if k < last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            core::mem::swap(&mut cur, &mut next);
        }
        cur[0]
    }

    fn head_value(&self, z: f64) -> f64 {
        match self.head {
            Head::Sigmoid => sigmoid(z),
            Head::Linear => z,
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.head_value(self.logit(x)))
    }

    /// Forward pass without input validation, for hot loops over inputs the
    /// caller has already validated.
    pub fn forward_unchecked(&self, x: &[f64]) -> f64 {
        self.head_value(self.logit(x))
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.apply(&cur, &mut z);
            let next = if k < last { z.iter().map(|v| v.max(0.0)).collect() } else { z.clone() };
            inputs.push(cur);
            pre.push(z);
            cur = next;
        }
        Trace { inputs, pre }
    }

    /// Backpropagates `d_logit` (derivative of the objective by the final
    /// pre-activation). Returns flat parameter gradients and input gradient.
    fn backward(&self, trace: &Trace, d_logit: f64) -> (Vec<f64>, Vec<f64>) {
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut delta = vec![d_logit];
        let last = self.layers.len() - 1;
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            if k < last {
                for (d, z) in delta.iter_mut().zip(&trace.pre[k]) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &trace.inputs[k];
            let mut g = vec![0.0; layer.weights.len() + layer.bias.len()];
            let mut d_in = vec![0.0; layer.inputs];
            for i in 0..layer.inputs {
                let row = &layer.weights[i * layer.outputs..(i + 1) * layer.outputs];
                let mut acc = 0.0;
                for j in 0..layer.outputs {
                    g[i * layer.outputs + j] = input[i] * delta[j];
                    acc += row[j] * delta[j];
                }
                d_in[i] = acc;
            }
            g[layer.weights.len()..].copy_from_slice(&delta);
            grads.push(g);
            delta = d_in;
        }
        grads.reverse();
        (grads.concat(), delta)
    }

    /// Head output and its gradient with respect to the input.
    pub fn output_and_input_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        Ok(self.output_and_input_grad_unchecked(x))
    }

    pub fn output_and_input_grad_unchecked(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let trace = self.trace(x);
        let z = trace.pre.last().expect("at least one layer")[0];
        let (y, slope) = match self.head {
            Head::Sigmoid => {
                let s = sigmoid(z);
                (s, s * (1.0 - s))
            }
            Head::Linear => (z, 1.0),
        };
        let (_, input) = self.backward(&trace, slope);
        (y, input)
    }

    /// Loss at one example with exact parameter and input gradients.
    pub fn gradients(&self, x: &[f64], loss: Loss, target: f64) -> Result<Gradients> {
        self.check_input(x)?;
        if loss.head() != self.head {
            return Err(Error::LossHead(match loss {
                Loss::Bce => "binary cross-entropy needs a sigmoid head",
                Loss::Mse => "squared error needs a linear head",
            }));
        }
        if loss == Loss::Bce && target != 0.0 && target != 1.0 {
            return Err(Error::OutOfRange { what: "BCE target", value: target });
        }
        if !target.is_finite() {
            return Err(Error::NonFinite("training target"));
        }
        let trace = self.trace(x);
        let z = trace.pre.last().expect("at least one layer")[0];
        let (value, slope) = loss.value_and_slope(z, target);
        let (params, input) = self.backward(&trace, slope);
        Ok(Gradients { loss: value, params, input })
    }

    /// Mean loss over examples.
    pub fn mean_loss(&self, examples: &[Example], loss: Loss) -> f64 {
        examples.iter().map(|e| loss.value_and_slope(self.logit(&e.input), e.target).0).sum::<f64>()
            / examples.len() as f64
    }
}

/// Adam with bias correction over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self { learning_rate, beta1, beta2, epsilon, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, f64::from(self.t));
        let c2 = 1.0 - libm::pow(self.beta2, f64::from(self.t));
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(&mut self.v)) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.learning_rate * m_hat / (libm::sqrt(v_hat) + self.epsilon);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub input: Vec<f64>,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            batch_size: 64,
            max_epochs: 300,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::OutOfRange { what: "learning rate", value: self.learning_rate });
        }
        if self.patience == 0 {
            return Err(Error::OutOfRange { what: "patience", value: 0.0 });
        }
        if self.batch_size == 0 {
            return Err(Error::OutOfRange { what: "batch size", value: 0.0 });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean training loss after each epoch.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Epoch (0-based) of the restored checkpoint.
    pub best_epoch: usize,
    pub steps: usize,
}

/// Trains with Adam on shuffled mini-batches and returns the checkpoint with
/// the lowest validation loss. Stops after `patience` epochs without
/// improvement.
pub fn train(
    model: Mlp,
    train_set: &[Example],
    val_set: &[Example],
    loss: Loss,
    config: &TrainConfig,
) -> Result<(Mlp, TrainHistory)> {
    train_observed(model, train_set, val_set, loss, config, |_, _| {})
}

/// [`train`] with a callback after every optimiser step, receiving the epoch
/// and the updated model.
pub fn train_observed(
    mut model: Mlp,
    train_set: &[Example],
    val_set: &[Example],
    loss: Loss,
    config: &TrainConfig,
    mut observer: impl FnMut(usize, &Mlp),
) -> Result<(Mlp, TrainHistory)> {
    config.validate()?;
    model.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if val_set.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    if loss.head() != model.head {
        return Err(Error::LossHead("loss does not match network head"));
    }
    for e in train_set.iter().chain(val_set) {
        model.check_input(&e.input)?;
        if loss == Loss::Bce && e.target != 0.0 && e.target != 1.0 {
            return Err(Error::OutOfRange { what: "BCE target", value: e.target });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut params = model.params();
    let mut adam =
        Adam::new(params.len(), config.learning_rate, config.beta1, config.beta2, config.epsilon);
    let mut history = TrainHistory::default();
    let mut best = (f64::INFINITY, model.clone());
    let mut since_best = 0;

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut grad = vec![0.0; params.len()];
            let mut batch_loss = 0.0;
            for &i in batch {
                let e = &train_set[i];
                let g = model.gradients(&e.input, loss, e.target)?;
                batch_loss += g.loss;
                grad.iter_mut().zip(&g.params).for_each(|(a, b)| *a += b);
            }
            if batch_loss.is_nan() {
                return Err(Error::Diverged { epoch });
            }
            let scale = 1.0 / batch.len() as f64;
            for (g, p) in grad.iter_mut().zip(&params) {
                *g = *g * scale + config.weight_decay * p;
            }
            adam.step(&mut params, &grad);
            model.set_params(&params);
            history.steps += 1;
            observer(epoch, &model);
        }
        let train_loss = model.mean_loss(train_set, loss);
        let val_loss = model.mean_loss(val_set, loss);
        if train_loss.is_nan() || val_loss.is_nan() {
            return Err(Error::Diverged { epoch });
        }
        history.train_loss.push(train_loss);
        history.val_loss.push(val_loss);
        if val_loss < best.0 {
            best = (val_loss, model.clone());
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    Ok((best.1, history))
}
