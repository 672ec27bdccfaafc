//! Sequential networks over `depth × height × width` samples.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    dropout_mask, maxpool_backward, maxpool_forward, softmax, Activation, ConvLayer, DenseLayer,
    Mode, PROB_FLOOR,
};
use super::tensor::ensure_finite;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(depth: usize, height: usize, width: usize) -> Self {
        Shape {
            depth,
            height,
            width,
        }
    }

    pub fn flat(n: usize) -> Self {
        Shape::new(n, 1, 1)
    }

    pub fn len(&self) -> usize {
        self.depth * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    /// Fixed per-input affine map `(x − mean) · scale`; not trained.
    Standardize {
        mean: Vec<f64>,
        scale: Vec<f64>,
    },
    Conv(ConvLayer),
    Relu,
    MaxPool,
    Dropout {
        keep_prob: f64,
    },
    /// Flattens its input. A softmax activation is only allowed on the last
    /// layer and is applied by the loss and by [`Network::probabilities`].
    Dense(DenseLayer),
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Standardize { .. } => "standardize",
            Layer::Conv(_) => "conv",
            Layer::Relu => "relu",
            Layer::MaxPool => "maxpool",
            Layer::Dropout { .. } => "dropout",
            Layer::Dense(_) => "dense",
        }
    }

    pub fn output_shape(&self, s: Shape) -> Result<Shape> {
        match self {
            Layer::Standardize { mean, scale } => {
                if mean.len() != s.len() || scale.len() != s.len() {
                    return Err(Error::shape(
                        "standardize statistics do not match the input",
                    ));
                }
                Ok(s)
            }
            Layer::Conv(c) => {
                if c.in_depth != s.depth {
                    return Err(Error::shape(format!(
                        "conv expects depth {}, got {}",
                        c.in_depth, s.depth
                    )));
                }
                let (h, w) = c.output_hw(s.height, s.width)?;
                Ok(Shape::new(c.depth, h, w))
            }
            Layer::Relu | Layer::Dropout { .. } => Ok(s),
            Layer::MaxPool => {
                if !s.height.is_multiple_of(2) || !s.width.is_multiple_of(2) {
                    return Err(Error::shape(format!(
                        "max pooling needs even sizes, got {}×{}",
                        s.height, s.width
                    )));
                }
                Ok(Shape::new(s.depth, s.height / 2, s.width / 2))
            }
            Layer::Dense(d) => {
                if d.inputs != s.len() {
                    return Err(Error::shape(format!(
                        "dense expects {} inputs, got {}",
                        d.inputs,
                        s.len()
                    )));
                }
                Ok(Shape::flat(d.outputs))
            }
        }
    }
}

/// Activations of one forward pass, kept for the backward pass.
pub struct Trace {
    pub batch: usize,
    /// `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
    pub acts: Vec<Vec<f64>>,
    aux: Vec<Aux>,
}

enum Aux {
    None,
    Argmax(Vec<u32>),
    Mask(Vec<f64>),
}

pub struct Gradients {
    /// Mean cross-entropy.
    pub loss: f64,
    /// Samples whose largest logit is the true label.
    pub correct: usize,
    /// In [`Network::params`] order.
    pub params: Vec<Vec<f64>>,
    /// Empty unless requested.
    pub input: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub input: Shape,
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn new(input: Shape, layers: Vec<Layer>) -> Result<Self> {
        let net = Network { input, layers };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = self.shapes()?;
        for (i, l) in self.layers.iter().enumerate() {
            match l {
                Layer::Conv(c) => c.validate()?,
                Layer::Dense(d) => {
                    d.validate()?;
                    if d.activation == Activation::Softmax && i + 1 != self.layers.len() {
                        return Err(Error::invalid("softmax is only allowed on the last layer"));
                    }
                }
                Layer::Dropout { keep_prob } if !(*keep_prob > 0.0 && *keep_prob <= 1.0) => {
                    return Err(Error::invalid(format!(
                        "keep_prob {keep_prob} outside (0, 1]"
                    )));
                }
                _ => {}
            }
        }
        if shapes.last().is_none_or(|s| s.is_empty()) {
            return Err(Error::shape("network has an empty output"));
        }
        Ok(())
    }

    /// Shape entering each layer, followed by the output shape.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut out = vec![self.input];
        for l in &self.layers {
            let next = l.output_shape(*out.last().expect("nonempty"))?;
            out.push(next);
        }
        Ok(out)
    }

    pub fn output_len(&self) -> usize {
        self.shapes()
            .ok()
            .and_then(|s| s.last().copied())
            .map_or(0, |s| s.len())
    }

    /// Trainable tensors in declaration order: weights then bias per layer.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Conv(c) => {
                    out.push(&c.weights);
                    out.push(&c.bias);
                }
                Layer::Dense(d) => {
                    out.push(&d.weights);
                    out.push(&d.bias);
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Conv(c) => {
                    out.push(&mut c.weights);
                    out.push(&mut c.bias);
                }
                Layer::Dense(d) => {
                    out.push(&mut d.weights);
                    out.push(&mut d.bias);
                }
                _ => {}
            }
        }
        out
    }

    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(|p| vec![0.0; p.len()]).collect()
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        for l in &mut self.layers {
            match l {
                Layer::Conv(c) => c.init(rng),
                Layer::Dense(d) => d.init(rng),
                _ => {}
            }
        }
    }

    /// Forward pass to the logits. `rng` is only drawn from by dropout in
    /// training mode.
    pub fn forward<R: Rng>(
        &self,
        x: &[f64],
        batch: usize,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Trace> {
        if x.len() != batch * self.input.len() {
            return Err(Error::shape(format!(
                "{} input values for a batch of {batch} × {}",
                x.len(),
                self.input.len()
            )));
        }
        let shapes = self.shapes()?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut aux = Vec::with_capacity(self.layers.len());
        acts.push(x.to_vec());
        for (i, l) in self.layers.iter().enumerate() {
            let s = shapes[i];
            let inp = &acts[i];
            let (out, a) = match l {
                Layer::Standardize { mean, scale } => {
                    let mut out = inp.clone();
                    for row in out.chunks_exact_mut(s.len()) {
                        for ((v, m), k) in row.iter_mut().zip(mean).zip(scale) {
                            *v = (*v - m) * k;
                        }
                    }
                    (out, Aux::None)
                }
                Layer::Conv(c) => (c.forward(inp, batch, s.height, s.width)?, Aux::None),
                Layer::Relu => (inp.iter().map(|v| v.max(0.0)).collect(), Aux::None),
                Layer::MaxPool => {
                    let mut argmax = Vec::new();
                    let out = maxpool_forward(inp, batch * s.depth, s.height, s.width, &mut argmax);
                    (out, Aux::Argmax(argmax))
                }
                Layer::Dropout { keep_prob } => {
                    if mode == Mode::Eval || *keep_prob == 1.0 {
                        (inp.clone(), Aux::None)
                    } else {
                        let mask = dropout_mask(inp.len(), *keep_prob, rng);
                        let out = inp.iter().zip(&mask).map(|(v, m)| v * m).collect();
                        (out, Aux::Mask(mask))
                    }
                }
                Layer::Dense(d) => {
                    let mut out = d.affine(inp, batch);
                    if d.activation == Activation::Relu {
                        out.iter_mut().for_each(|v| *v = v.max(0.0));
                    }
                    (out, Aux::None)
                }
            };
            ensure_finite(&out, &format!("output of layer {i} ({})", l.name()))?;
            acts.push(out);
            aux.push(a);
        }
        Ok(Trace { batch, acts, aux })
    }

    /// Eval-mode logits of a batch.
    pub fn logits(&self, x: &[f64], batch: usize) -> Result<Vec<f64>> {
        // eval mode never draws from the generator
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        Ok(self
            .forward(x, batch, Mode::Eval, &mut rng)?
            .acts
            .pop()
            .expect("output"))
    }

    /// Eval-mode class probabilities of a batch, one row per sample.
    pub fn probabilities(&self, x: &[f64], batch: usize) -> Result<Vec<Vec<f64>>> {
        let k = self.output_len();
        Ok(self
            .logits(x, batch)?
            .chunks_exact(k)
            .map(softmax)
            .collect())
    }

    /// Gradients of the layer outputs are pushed back from `dout` (gradient at
    /// the network output, i.e. at the logits). Returns parameter gradients in
    /// [`Network::params`] order and, if `input_grad` is set, the input gradient.
    pub fn backward(
        &self,
        trace: &Trace,
        dout: Vec<f64>,
        input_grad: bool,
    ) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let shapes = self.shapes()?;
        let batch = trace.batch;
        let mut grads = self.zero_grads();
        let mut slot = grads.len();
        let mut d = dout;
        for (i, l) in self.layers.iter().enumerate().rev() {
            let s = shapes[i];
            let inp = &trace.acts[i];
            let out = &trace.acts[i + 1];
            d = match l {
                Layer::Standardize { scale, .. } => {
                    let mut d = d;
                    for row in d.chunks_exact_mut(s.len()) {
                        for (v, k) in row.iter_mut().zip(scale) {
                            *v *= k;
                        }
                    }
                    d
                }
                Layer::Conv(c) => {
                    slot -= 2;
                    let (gw, rest) = grads[slot..].split_at_mut(1);
                    let need_dx = input_grad
                        || self.layers[..i]
                            .iter()
                            .any(|l| matches!(l, Layer::Conv(_) | Layer::Dense(_)));
                    // without `need_dx` the returned gradient is empty and the
                    // remaining parameter-free layers pass it through untouched
                    c.backward(
                        inp,
                        &d,
                        batch,
                        s.height,
                        s.width,
                        &mut gw[0],
                        &mut rest[0],
                        need_dx,
                    )?
                }
                Layer::Relu => d
                    .iter()
                    .zip(inp)
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect(),
                Layer::MaxPool => {
                    let Aux::Argmax(argmax) = &trace.aux[i] else {
                        return Err(Error::invalid("trace does not match the network"));
                    };
                    maxpool_backward(&d, argmax, inp.len())
                }
                Layer::Dropout { .. } => match &trace.aux[i] {
                    Aux::Mask(mask) => d.iter().zip(mask).map(|(g, m)| g * m).collect(),
                    _ => d,
                },
                Layer::Dense(dl) => {
                    let mut dpre = d;
                    if dl.activation == Activation::Relu {
                        for (g, o) in dpre.iter_mut().zip(out) {
                            if *o <= 0.0 {
                                *g = 0.0;
                            }
                        }
                    }
                    slot -= 2;
                    let (gw, rest) = grads[slot..].split_at_mut(1);
                    dl.backward(inp, &dpre, batch, &mut gw[0], &mut rest[0])
                }
            };
        }
        for (k, g) in grads.iter().enumerate() {
            ensure_finite(g, &format!("gradient of parameter tensor {k}"))?;
        }
        Ok((grads, d))
    }

    /// Mean softmax cross-entropy over the batch and its gradients.
    pub fn loss_and_grads<R: Rng>(
        &self,
        x: &[f64],
        labels: &[usize],
        mode: Mode,
        rng: &mut R,
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        let g = self.loss_gradients(x, labels, mode, rng, false)?;
        Ok((g.loss, g.params))
    }

    /// Loss, batch accuracy and gradients; the input gradient is only
    /// computed when `input_grad` is set.
    pub fn loss_gradients<R: Rng>(
        &self,
        x: &[f64],
        labels: &[usize],
        mode: Mode,
        rng: &mut R,
        input_grad: bool,
    ) -> Result<Gradients> {
        let batch = labels.len();
        let trace = self.forward(x, batch, mode, rng)?;
        let k = self.output_len();
        let logits = trace.acts.last().expect("output");
        let mut dlogits = Vec::with_capacity(logits.len());
        let mut loss = 0.0;
        let mut correct = 0;
        for (row, &label) in logits.chunks_exact(k).zip(labels) {
            if label >= k {
                return Err(Error::Range(format!("label {label} with {k} classes")));
            }
            correct += (argmax(row) == label) as usize;
            let p = softmax(row);
            loss -= p[label].max(PROB_FLOOR).ln();
            for (j, pj) in p.iter().enumerate() {
                let onehot = if j == label { 1.0 } else { 0.0 };
                dlogits.push((pj - onehot) / batch as f64);
            }
        }
        let (params, input) = self.backward(&trace, dlogits, input_grad)?;
        Ok(Gradients {
            loss: loss / batch as f64,
            correct,
            params,
            input,
        })
    }

    /// Mean loss without gradients (eval mode).
    pub fn loss(&self, x: &[f64], labels: &[usize]) -> Result<f64> {
        let k = self.output_len();
        let logits = self.logits(x, labels.len())?;
        let mut total = 0.0;
        for (row, &label) in logits.chunks_exact(k).zip(labels) {
            total -= softmax(row)[label].max(PROB_FLOOR).ln();
        }
        Ok(total / labels.len() as f64)
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
