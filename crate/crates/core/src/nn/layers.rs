//! Layer kernels. Batched variants work on contiguous `batch × features`
//! buffers; the `Tensor` entry points wrap them for single samples.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// `C += A · B` for row-major `A (m×k)` and `B (k×n)`, with explicit strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass buffers whose extents match the given dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn he_normal<R: Rng>(values: &mut [f64], fan_in: usize, rng: &mut R) {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    for v in values.iter_mut() {
        *v = normal.sample(rng);
    }
}

/// `h = f(W x + b)` with `W` stored `outputs × inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        DenseLayer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            activation,
        }
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        he_normal(&mut self.weights, self.inputs, rng);
        self.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.inputs * self.outputs || self.bias.len() != self.outputs {
            return Err(Error::shape(format!(
                "dense {}→{} has {} weights and {} biases",
                self.inputs,
                self.outputs,
                self.weights.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }

    /// Pre-activation `X Wᵀ + b` for `batch` rows.
    pub(crate) fn affine(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::with_capacity(batch * self.outputs);
        for _ in 0..batch {
            out.extend_from_slice(&self.bias);
        }
        gemm(
            batch,
            self.inputs,
            self.outputs,
            x,
            (self.inputs as isize, 1),
            &self.weights,
            (1, self.inputs as isize),
            &mut out,
            1.0,
        );
        out
    }

    /// Accumulates parameter gradients from `dpre` (gradient at the
    /// pre-activation) and returns the input gradient.
    pub(crate) fn backward(
        &self,
        x: &[f64],
        dpre: &[f64],
        batch: usize,
        gw: &mut [f64],
        gb: &mut [f64],
    ) -> Vec<f64> {
        // dW (out×in) += dpreᵀ (out×batch) · X (batch×in)
        gemm(
            self.outputs,
            batch,
            self.inputs,
            dpre,
            (1, self.outputs as isize),
            x,
            (self.inputs as isize, 1),
            gw,
            1.0,
        );
        for row in dpre.chunks_exact(self.outputs) {
            for (g, d) in gb.iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dx = vec![0.0; batch * self.inputs];
        gemm(
            batch,
            self.outputs,
            self.inputs,
            dpre,
            (self.outputs as isize, 1),
            &self.weights,
            (self.inputs as isize, 1),
            &mut dx,
            0.0,
        );
        dx
    }
}

pub fn dense_forward(layer: &DenseLayer, x: &Tensor) -> Result<Tensor> {
    layer.validate()?;
    if x.len() != layer.inputs {
        return Err(Error::shape(format!(
            "dense layer expects {} inputs, got {}",
            layer.inputs,
            x.len()
        )));
    }
    let mut out = layer.affine(&x.values, 1);
    match layer.activation {
        Activation::Identity => {}
        Activation::Relu => out.iter_mut().for_each(|v| *v = v.max(0.0)),
        Activation::Softmax => out = softmax(&out),
    }
    let t = Tensor::new(vec![layer.outputs], out)?;
    t.ensure_finite("dense output")?;
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

/// Stride-1 convolution (cross-correlation) with `depth` kernels of
/// `in_depth × kernel × kernel`, stored kernel-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub in_depth: usize,
    pub depth: usize,
    pub kernel: usize,
    pub padding: Padding,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(in_depth: usize, depth: usize, kernel: usize, padding: Padding) -> Self {
        ConvLayer {
            in_depth,
            depth,
            kernel,
            padding,
            weights: vec![0.0; depth * in_depth * kernel * kernel],
            bias: vec![0.0; depth],
        }
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        let fan_in = self.patch();
        he_normal(&mut self.weights, fan_in, rng);
        self.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.in_depth == 0 || self.kernel == 0 {
            return Err(Error::shape("convolution with an empty dimension"));
        }
        if self.weights.len() != self.depth * self.patch() || self.bias.len() != self.depth {
            return Err(Error::shape(
                "convolution parameters do not match its shape",
            ));
        }
        Ok(())
    }

    /// Inputs seen by one output cell.
    pub fn patch(&self) -> usize {
        self.in_depth * self.kernel * self.kernel
    }

    fn pad(&self) -> usize {
        match self.padding {
            Padding::Same => (self.kernel - 1) / 2,
            Padding::Valid => 0,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let p = self.pad();
        if h + 2 * p < self.kernel || w + 2 * p < self.kernel {
            return Err(Error::shape(format!(
                "{h}×{w} input is smaller than the {k}×{k} kernel",
                k = self.kernel
            )));
        }
        Ok((h + 2 * p - self.kernel + 1, w + 2 * p - self.kernel + 1))
    }

    /// Patch matrix `patch × (ho·wo)` of one sample.
    fn im2col(&self, x: &[f64], h: usize, w: usize, ho: usize, wo: usize, col: &mut [f64]) {
        let (k, p) = (self.kernel, self.pad() as isize);
        let n = ho * wo;
        for c in 0..self.in_depth {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[((c * k + ky) * k + kx) * n..][..n];
                    for oy in 0..ho {
                        let iy = oy as isize + ky as isize - p;
                        let dst = &mut row[oy * wo..(oy + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = ox as isize + kx as isize - p;
                            *d = if ix < 0 || ix >= w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], h: usize, w: usize, ho: usize, wo: usize, dx: &mut [f64]) {
        let (k, p) = (self.kernel, self.pad() as isize);
        let n = ho * wo;
        for c in 0..self.in_depth {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &col[((c * k + ky) * k + kx) * n..][..n];
                    for oy in 0..ho {
                        let iy = oy as isize + ky as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = ox as isize + kx as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += row[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Batched forward; `x` is `batch × in_depth × h × w`.
    pub(crate) fn forward(&self, x: &[f64], batch: usize, h: usize, w: usize) -> Result<Vec<f64>> {
        let (ho, wo) = self.output_hw(h, w)?;
        let n = ho * wo;
        let (kin, kout) = (self.in_depth * h * w, self.depth * n);
        let mut col = vec![0.0; self.patch() * n];
        let mut out = vec![0.0; batch * kout];
        for s in 0..batch {
            self.im2col(&x[s * kin..(s + 1) * kin], h, w, ho, wo, &mut col);
            let o = &mut out[s * kout..(s + 1) * kout];
            for (d, b) in self.bias.iter().enumerate() {
                o[d * n..(d + 1) * n].fill(*b);
            }
            gemm(
                self.depth,
                self.patch(),
                n,
                &self.weights,
                (self.patch() as isize, 1),
                &col,
                (n as isize, 1),
                o,
                1.0,
            );
        }
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward(
        &self,
        x: &[f64],
        dout: &[f64],
        batch: usize,
        h: usize,
        w: usize,
        gw: &mut [f64],
        gb: &mut [f64],
        need_dx: bool,
    ) -> Result<Vec<f64>> {
        let (ho, wo) = self.output_hw(h, w)?;
        let n = ho * wo;
        let (kin, kout, patch) = (self.in_depth * h * w, self.depth * n, self.patch());
        let mut col = vec![0.0; patch * n];
        let mut dcol = vec![0.0; patch * n];
        let mut dx = if need_dx {
            vec![0.0; batch * kin]
        } else {
            Vec::new()
        };
        for s in 0..batch {
            let d = &dout[s * kout..(s + 1) * kout];
            self.im2col(&x[s * kin..(s + 1) * kin], h, w, ho, wo, &mut col);
            // dW (depth×patch) += dOut (depth×n) · colᵀ (n×patch)
            gemm(
                self.depth,
                n,
                patch,
                d,
                (n as isize, 1),
                &col,
                (1, n as isize),
                gw,
                1.0,
            );
            for (g, plane) in gb.iter_mut().zip(d.chunks_exact(n)) {
                *g += plane.iter().sum::<f64>();
            }
            if need_dx {
                // dcol (patch×n) = Wᵀ (patch×depth) · dOut (depth×n)
                gemm(
                    patch,
                    self.depth,
                    n,
                    &self.weights,
                    (1, patch as isize),
                    d,
                    (n as isize, 1),
                    &mut dcol,
                    0.0,
                );
                self.col2im(&dcol, h, w, ho, wo, &mut dx[s * kin..(s + 1) * kin]);
            }
        }
        Ok(dx)
    }
}

/// `input` is `in_depth × h × w`.
pub fn conv2d_forward(layer: &ConvLayer, input: &Tensor) -> Result<Tensor> {
    layer.validate()?;
    let [c, h, w] = input.shape[..] else {
        return Err(Error::shape(
            "convolution input must be depth × height × width",
        ));
    };
    if c != layer.in_depth {
        return Err(Error::shape(format!(
            "convolution expects depth {}, got {c}",
            layer.in_depth
        )));
    }
    let (ho, wo) = layer.output_hw(h, w)?;
    let out = layer.forward(&input.values, 1, h, w)?;
    let t = Tensor::new(vec![layer.depth, ho, wo], out)?;
    t.ensure_finite("convolution output")?;
    Ok(t)
}

/// 2×2 max pooling, stride 2, over `batch·depth` planes. Ties go to the
/// first cell in row-major order. `argmax` receives input offsets.
pub(crate) fn maxpool_forward(
    x: &[f64],
    planes: usize,
    h: usize,
    w: usize,
    argmax: &mut Vec<u32>,
) -> Vec<f64> {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * ho * wo);
    argmax.clear();
    argmax.reserve(planes * ho * wo);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                argmax.push(best as u32);
            }
        }
    }
    out
}

pub(crate) fn maxpool_backward(dout: &[f64], argmax: &[u32], input_len: usize) -> Vec<f64> {
    let mut dx = vec![0.0; input_len];
    for (d, &i) in dout.iter().zip(argmax) {
        dx[i as usize] += d;
    }
    dx
}

/// `input` is `depth × h × w` with even `h` and `w`.
pub fn maxpool_2x2(input: &Tensor) -> Result<Tensor> {
    let [d, h, w] = input.shape[..] else {
        return Err(Error::shape(
            "max pooling input must be depth × height × width",
        ));
    };
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(Error::shape(format!(
            "max pooling needs even sizes, got {h}×{w}"
        )));
    }
    let mut argmax = Vec::new();
    let out = maxpool_forward(&input.values, d, h, w, &mut argmax);
    Tensor::new(vec![d, h / 2, w / 2], out)
}

pub fn relu(input: &Tensor) -> Tensor {
    Tensor {
        shape: input.shape.clone(),
        values: input.values.iter().map(|v| v.max(0.0)).collect(),
    }
}

/// Inverted-dropout mask: `0` or `1 / keep_prob` per element.
pub(crate) fn dropout_mask<R: Rng>(len: usize, keep_prob: f64, rng: &mut R) -> Vec<f64> {
    let scale = 1.0 / keep_prob;
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < keep_prob {
                scale
            } else {
                0.0
            }
        })
        .collect()
}

pub fn dropout<R: Rng>(input: &Tensor, keep_prob: f64, rng: &mut R, mode: Mode) -> Result<Tensor> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::invalid(format!(
            "keep_prob {keep_prob} outside (0, 1]"
        )));
    }
    if mode == Mode::Eval || keep_prob == 1.0 {
        return Ok(input.clone());
    }
    let mask = dropout_mask(input.len(), keep_prob, rng);
    Ok(Tensor {
        shape: input.shape.clone(),
        values: input.values.iter().zip(&mask).map(|(v, m)| v * m).collect(),
    })
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `-ln p[label]` with the probability floored at `1e-12`.
pub fn cross_entropy_loss(probs: &[f64], label: usize) -> Result<f64> {
    let p = *probs
        .get(label)
        .ok_or_else(|| Error::Range(format!("label {label} with {} classes", probs.len())))?;
    Ok(-p.max(PROB_FLOOR).ln())
}
