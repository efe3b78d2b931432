//! Fully connected network with batch normalization, ReLU and dropout, with
//! an explicit backward pass.
//!
//! Each hidden block is `linear -> batch-norm -> relu -> dropout`; the last
//! layer is linear with a single logit. Parameters are visited in a fixed
//! order (per block: weights, bias, scale, shift; then the output weights
//! and bias) which the optimizer and gradient checks rely on.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

/// How a forward pass treats batch normalization and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running-statistic updates and dropout.
    Train,
    /// Batch statistics without dropout or running updates.
    BatchStats,
    /// Running statistics, no dropout.
    Inference,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Dense {
    pub weights: Array2<f64>, // in x out
    pub bias: Array1<f64>,
}

impl Dense {
    fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let mut u = || rng.random_range(-bound..bound);
        Self {
            weights: Array2::from_shape_simple_fn((input, output), &mut u),
            bias: Array1::from_shape_simple_fn(output, &mut u),
        }
    }

    fn zeros(input: usize, output: usize) -> Self {
        Self {
            weights: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }

    fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weights) + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    fn new(dim: usize) -> Self {
        Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            running_mean: Array1::zeros(dim),
            running_var: Array1::ones(dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Hidden {
    pub linear: Dense,
    pub norm: BatchNorm,
}

/// A trained or freshly initialized network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub(crate) input_dim: usize,
    pub(crate) dropout: f64,
    pub(crate) hidden: Vec<Hidden>,
    pub(crate) output: Dense,
}

/// Intermediate values of one hidden block kept for the backward pass.
struct BlockCache {
    input: Array2<f64>,
    x_hat: Array2<f64>,
    inv_std: Array1<f64>,
    pre_relu: Array2<f64>,
    mask: Option<Array2<f64>>,
}

pub(crate) struct ForwardCache {
    blocks: Vec<BlockCache>,
    last_hidden: Array2<f64>,
    pub logits: Array1<f64>,
}

/// Gradients in parameter-visit order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        self.0.concat()
    }
}

/// How the per-example losses are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a logit, stable for large magnitudes.
fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

impl MlpModel {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden_dims: &[usize], dropout: f64, rng: &mut R) -> Result<Self> {
        if input_dim == 0 || hidden_dims.contains(&0) {
            return Err(Error::param("layer widths must be positive"));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::param(format!("dropout must be in [0, 1), got {dropout}")));
        }
        let mut hidden = Vec::with_capacity(hidden_dims.len());
        let mut width = input_dim;
        for &h in hidden_dims {
            hidden.push(Hidden {
                linear: Dense::init(width, h, rng),
                norm: BatchNorm::new(h),
            });
            width = h;
        }
        Ok(Self {
            input_dim,
            dropout,
            hidden,
            output: Dense::init(width, 1, rng),
        })
    }

    /// Network whose every weight and bias is zero.
    pub fn zeros(input_dim: usize, hidden_dims: &[usize]) -> Self {
        let mut hidden = Vec::new();
        let mut width = input_dim;
        for &h in hidden_dims {
            hidden.push(Hidden {
                linear: Dense::zeros(width, h),
                norm: BatchNorm::new(h),
            });
            width = h;
        }
        Self {
            input_dim,
            dropout: 0.0,
            hidden,
            output: Dense::zeros(width, 1),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.hidden.iter().map(|h| h.linear.bias.len()).collect()
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn set_dropout(&mut self, dropout: f64) -> Result<()> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::param(format!("dropout must be in [0, 1), got {dropout}")));
        }
        self.dropout = dropout;
        Ok(())
    }

    pub(crate) fn check_input(&self, x: ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(Error::param(format!(
                "feature dimension {} does not match the network input {}",
                x.ncols(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// Mutable views of all trainable tensors in visit order.
    pub(crate) fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for h in &mut self.hidden {
            out.push(h.linear.weights.as_slice_mut().expect("standard layout"));
            out.push(h.linear.bias.as_slice_mut().expect("standard layout"));
            out.push(h.norm.gamma.as_slice_mut().expect("standard layout"));
            out.push(h.norm.beta.as_slice_mut().expect("standard layout"));
        }
        out.push(self.output.weights.as_slice_mut().expect("standard layout"));
        out.push(self.output.bias.as_slice_mut().expect("standard layout"));
        out
    }

    pub(crate) fn forward<R: Rng + ?Sized>(&mut self, x: ArrayView2<f64>, mode: Mode, rng: &mut R) -> ForwardCache {
        let batch = x.nrows() as f64;
        let mut act = x.to_owned();
        let mut blocks = Vec::with_capacity(self.hidden.len());
        for h in &mut self.hidden {
            let z = h.linear.apply(act.view());
            let (mean, var) = match mode {
                Mode::Inference => (h.norm.running_mean.clone(), h.norm.running_var.clone()),
                Mode::Train | Mode::BatchStats => {
                    let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
                    let centered = &z - &mean;
                    let var = (&centered * &centered).mean_axis(Axis(0)).expect("non-empty batch");
                    (mean, var)
                }
            };
            if mode == Mode::Train && batch > 1.0 {
                let unbiased = &var * (batch / (batch - 1.0));
                h.norm.running_mean = &h.norm.running_mean * (1.0 - BN_MOMENTUM) + &mean * BN_MOMENTUM;
                h.norm.running_var = &h.norm.running_var * (1.0 - BN_MOMENTUM) + &unbiased * BN_MOMENTUM;
            }
            let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
            let x_hat = (&z - &mean) * &inv_std;
            let pre_relu = &x_hat * &h.norm.gamma + &h.norm.beta;
            let mut out = pre_relu.mapv(|v| v.max(0.0));
            let mask = if mode == Mode::Train && self.dropout > 0.0 {
                let keep = 1.0 - self.dropout;
                let m = Array2::from_shape_simple_fn(out.raw_dim(), || {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                out *= &m;
                Some(m)
            } else {
                None
            };
            blocks.push(BlockCache {
                input: act,
                x_hat,
                inv_std,
                pre_relu,
                mask,
            });
            act = out;
        }
        let logits = self.output.apply(act.view()).column(0).to_owned();
        ForwardCache {
            blocks,
            last_hidden: act,
            logits,
        }
    }

    /// Loss over a batch given cached logits.
    pub(crate) fn loss(logits: &Array1<f64>, y: &[f64], reduction: Reduction) -> f64 {
        let total: f64 = logits.iter().zip(y).map(|(&z, &t)| bce_with_logit(z, t)).sum();
        match reduction {
            Reduction::Mean => total / y.len() as f64,
            Reduction::Sum => total,
        }
    }

    pub(crate) fn backward(&self, cache: &ForwardCache, y: &[f64], reduction: Reduction) -> Gradients {
        let scale = match reduction {
            Reduction::Mean => 1.0 / y.len() as f64,
            Reduction::Sum => 1.0,
        };
        let dlogit: Array1<f64> = cache
            .logits
            .iter()
            .zip(y)
            .map(|(&z, &t)| (sigmoid(z) - t) * scale)
            .collect();
        let dlogit = dlogit.insert_axis(Axis(1));
        let out_w = cache.last_hidden.t().dot(&dlogit);
        let out_b = dlogit.sum_axis(Axis(0));
        let mut upstream = dlogit.dot(&self.output.weights.t());

        let mut per_block: Vec<[Vec<f64>; 4]> = Vec::with_capacity(self.hidden.len());
        for (h, c) in self.hidden.iter().zip(&cache.blocks).rev() {
            let batch = c.input.nrows() as f64;
            let mut d = upstream;
            if let Some(m) = &c.mask {
                d *= m;
            }
            d.zip_mut_with(&c.pre_relu, |g, &p| {
                if p <= 0.0 {
                    *g = 0.0;
                }
            });
            let dgamma = (&d * &c.x_hat).sum_axis(Axis(0));
            let dbeta = d.sum_axis(Axis(0));
            let dxhat = &d * &h.norm.gamma;
            let sum_dxhat = dxhat.sum_axis(Axis(0));
            let sum_dxhat_xhat = (&dxhat * &c.x_hat).sum_axis(Axis(0));
            let dz = (&dxhat * batch - &sum_dxhat - &c.x_hat * &sum_dxhat_xhat) * &(&c.inv_std / batch);
            let dw = c.input.t().dot(&dz);
            let db = dz.sum_axis(Axis(0));
            upstream = dz.dot(&h.linear.weights.t());
            per_block.push([
                dw.as_standard_layout().iter().copied().collect(),
                db.to_vec(),
                dgamma.to_vec(),
                dbeta.to_vec(),
            ]);
        }
        let mut grads = Vec::with_capacity(per_block.len() * 4 + 2);
        for block in per_block.into_iter().rev() {
            grads.extend(block);
        }
        grads.push(out_w.as_standard_layout().iter().copied().collect());
        grads.push(out_b.to_vec());
        Gradients(grads)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub(crate) struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(model: &mut MlpModel, lr: f64) -> Self {
        let shapes: Vec<usize> = model.params_mut().iter().map(|p| p.len()).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn update(&mut self, model: &mut MlpModel, grads: &Gradients) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (k, param) in model.params_mut().into_iter().enumerate() {
            let g = &grads.0[k];
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..param.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                param[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

// JSON layout: shapes plus flat row-major parameter arrays.

#[derive(Serialize, Deserialize)]
struct RawDense {
    input: usize,
    output: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawNorm {
    gamma: Vec<f64>,
    beta: Vec<f64>,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawHidden {
    linear: RawDense,
    batch_norm: RawNorm,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct RawMlp {
    input_dim: usize,
    hidden_dims: Vec<usize>,
    dropout: f64,
    hidden: Vec<RawHidden>,
    output: RawDense,
}

fn dense_to_raw(d: &Dense) -> RawDense {
    RawDense {
        input: d.weights.nrows(),
        output: d.weights.ncols(),
        weights: d.weights.iter().copied().collect(),
        bias: d.bias.to_vec(),
    }
}

fn dense_from_raw(r: RawDense) -> Result<Dense> {
    let weights = Array2::from_shape_vec((r.input, r.output), r.weights)
        .map_err(|e| Error::param(format!("bad weight shape: {e}")))?;
    if r.bias.len() != r.output {
        return Err(Error::param("bias length does not match layer width"));
    }
    Ok(Dense {
        weights,
        bias: Array1::from(r.bias),
    })
}

impl Serialize for MlpModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RawMlp {
            input_dim: self.input_dim,
            hidden_dims: self.hidden_dims(),
            dropout: self.dropout,
            hidden: self
                .hidden
                .iter()
                .map(|h| RawHidden {
                    linear: dense_to_raw(&h.linear),
                    batch_norm: RawNorm {
                        gamma: h.norm.gamma.to_vec(),
                        beta: h.norm.beta.to_vec(),
                        running_mean: h.norm.running_mean.to_vec(),
                        running_var: h.norm.running_var.to_vec(),
                    },
                })
                .collect(),
            output: dense_to_raw(&self.output),
        }
        .serialize(s)
    }
}

impl TryFrom<RawMlp> for MlpModel {
    type Error = Error;

    fn try_from(r: RawMlp) -> Result<Self> {
        let mut hidden = Vec::with_capacity(r.hidden.len());
        let mut width = r.input_dim;
        for (h, &dim) in r.hidden.into_iter().zip(&r.hidden_dims) {
            let linear = dense_from_raw(h.linear)?;
            let n = h.batch_norm;
            if linear.weights.nrows() != width || linear.weights.ncols() != dim {
                return Err(Error::param("hidden layer shapes do not chain"));
            }
            if [&n.gamma, &n.beta, &n.running_mean, &n.running_var].iter().any(|v| v.len() != dim) {
                return Err(Error::param("batch-norm vectors do not match layer width"));
            }
            hidden.push(Hidden {
                linear,
                norm: BatchNorm {
                    gamma: n.gamma.into(),
                    beta: n.beta.into(),
                    running_mean: n.running_mean.into(),
                    running_var: n.running_var.into(),
                },
            });
            width = dim;
        }
        if hidden.len() != r.hidden_dims.len() {
            return Err(Error::param("hidden layer count does not match hidden_dims"));
        }
        let output = dense_from_raw(r.output)?;
        if output.weights.nrows() != width || output.weights.ncols() != 1 {
            return Err(Error::param("output layer must map the last hidden width to 1"));
        }
        Ok(Self {
            input_dim: r.input_dim,
            dropout: r.dropout,
            hidden,
            output,
        })
    }
}

impl<'de> Deserialize<'de> for MlpModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        RawMlp::deserialize(d)?.try_into().map_err(serde::de::Error::custom)
    }
}
