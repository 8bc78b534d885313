//! Softmax classifiers with analytic gradients.
//!
//! Two families share one flat parameter layout convention:
//!
//! * `Logistic`: weights `C x d` (row-major), then bias `C`.
//! * `Mlp`: `W1` (`H x d`), `b1` (`H`), `W2` (`C x H`), `b2` (`C`), with a
//!   `tanh` hidden layer.
//!
//! Losses are mean cross-entropy over the batch.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datagen::ClientDataset;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logistic,
    Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub classes: usize,
    #[serde(default)]
    pub hidden: usize,
}

impl ModelShape {
    pub fn num_params(&self) -> usize {
        let (d, c, h) = (self.input_dim, self.classes, self.hidden);
        match self.kind {
            ModelKind::Logistic => c * d + c,
            ModelKind::Mlp => h * d + h + c * h + c,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub shape: ModelShape,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

fn default_init_scale() -> f64 {
    0.01
}

impl ModelSpec {
    pub fn logistic(input_dim: usize, classes: usize) -> Self {
        Self {
            shape: ModelShape { kind: ModelKind::Logistic, input_dim, classes, hidden: 0 },
            init_scale: default_init_scale(),
        }
    }

    pub fn mlp(input_dim: usize, classes: usize, hidden: usize) -> Self {
        Self { shape: ModelShape { kind: ModelKind::Mlp, input_dim, classes, hidden }, init_scale: 0.1 }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.shape;
        if s.input_dim == 0 || s.classes == 0 || (s.kind == ModelKind::Mlp && s.hidden == 0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config("init_scale must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Gaussian(0, init_scale^2) initial model from the dedicated init stream.
    pub fn init(&self, seed: u64) -> ParamVector {
        let mut r = rng::stream(seed, Purpose::Init, &[]);
        let n = self.shape.num_params();
        let values = if self.init_scale == 0.0 {
            vec![0.0; n]
        } else {
            let normal = Normal::new(0.0, self.init_scale).expect("valid scale");
            (0..n).map(|_| normal.sample(&mut r)).collect()
        };
        ParamVector { shape: self.shape, values }
    }
}

/// Flat model parameters tagged with their shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub shape: ModelShape,
    pub values: Vec<f64>,
}

const BINARY_MAGIC: &[u8; 4] = b"MSFP";

impl ParamVector {
    pub fn new(shape: ModelShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.num_params() {
            return Err(Error::Shape { expected: shape.num_params(), actual: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("parameter vector contains non-finite entries".into()));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: ModelShape) -> Self {
        Self { shape, values: vec![0.0; shape.num_params()] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &ParamVector) {
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += a * y;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for x in &mut self.values {
            *x *= a;
        }
    }

    pub fn sub(&self, other: &ParamVector) -> ParamVector {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        ParamVector { shape: self.shape, values }
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Arithmetic mean, summed in the given order.
    pub fn mean<'a>(vs: impl IntoIterator<Item = &'a ParamVector>) -> Option<ParamVector> {
        let mut it = vs.into_iter();
        let mut acc = it.next()?.clone();
        let mut n = 1usize;
        for v in it {
            for (a, b) in acc.values.iter_mut().zip(&v.values) {
                *a += b;
            }
            n += 1;
        }
        acc.scale(1.0 / n as f64);
        Some(acc)
    }

    /// Little-endian binary: magic, kind byte, three u32 dims, u64 length, f64 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 1 + 12 + 8 + 8 * self.len());
        out.extend_from_slice(BINARY_MAGIC);
        out.push(match self.shape.kind {
            ModelKind::Logistic => 0,
            ModelKind::Mlp => 1,
        });
        for dim in [self.shape.input_dim, self.shape.classes, self.shape.hidden] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::Config("malformed parameter blob".into());
        if bytes.len() < 25 || &bytes[..4] != BINARY_MAGIC {
            return Err(bad());
        }
        let kind = match bytes[4] {
            0 => ModelKind::Logistic,
            1 => ModelKind::Mlp,
            _ => return Err(bad()),
        };
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let shape = ModelShape { kind, input_dim: u32_at(5), classes: u32_at(9), hidden: u32_at(13) };
        let n = u64::from_le_bytes(bytes[17..25].try_into().unwrap()) as usize;
        if bytes.len() != 25 + 8 * n {
            return Err(bad());
        }
        let values = bytes[25..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        ParamVector::new(shape, values)
    }
}

fn check_shape(params: &ParamVector, data: &ClientDataset) -> Result<()> {
    if params.values.len() != params.shape.num_params() {
        return Err(Error::Shape { expected: params.shape.num_params(), actual: params.values.len() });
    }
    if data.feature_dim != params.shape.input_dim {
        return Err(Error::Shape { expected: params.shape.input_dim, actual: data.feature_dim });
    }
    Ok(())
}

/// Writes softmax probabilities into `logits` in place and returns `-ln p_y`.
fn softmax_xent(logits: &mut [f64], y: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted_y = logits[y] - max;
    let mut total = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        total += *z;
    }
    let loss = total.ln() - shifted_y;
    for z in logits.iter_mut() {
        *z /= total;
    }
    loss
}

/// Logits for one input; `hidden` receives the tanh activations (MLP only).
fn forward(params: &ParamVector, x: &[f64], hidden: &mut [f64], logits: &mut [f64]) {
    let s = params.shape;
    let (d, c, h) = (s.input_dim, s.classes, s.hidden);
    let w = &params.values;
    match s.kind {
        ModelKind::Logistic => {
            let bias = c * d;
            for (ci, z) in logits.iter_mut().enumerate() {
                let row = &w[ci * d..(ci + 1) * d];
                *z = w[bias + ci] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        ModelKind::Mlp => {
            let (o_b1, o_w2) = (h * d, h * d + h);
            let o_b2 = o_w2 + c * h;
            for (hi, a) in hidden.iter_mut().enumerate() {
                let row = &w[hi * d..(hi + 1) * d];
                *a = (w[o_b1 + hi] + row.iter().zip(x).map(|(p, q)| p * q).sum::<f64>()).tanh();
            }
            for (ci, z) in logits.iter_mut().enumerate() {
                let row = &w[o_w2 + ci * h..o_w2 + (ci + 1) * h];
                *z = w[o_b2 + ci] + row.iter().zip(hidden.iter()).map(|(p, q)| p * q).sum::<f64>();
            }
        }
    }
}

/// Sum of per-sample losses over `rows`; adds per-sample gradients into `grad` if given.
fn accumulate(params: &ParamVector, data: &ClientDataset, rows: &[usize], mut grad: Option<&mut [f64]>) -> f64 {
    let s = params.shape;
    let (d, c, h) = (s.input_dim, s.classes, s.hidden);
    let w = &params.values;
    let mut total = 0.0;
    let mut logits = vec![0.0; c];
    let mut hidden = vec![0.0; h];
    let mut back = vec![0.0; h];
    for &k in rows {
        let x = data.row(k);
        let y = data.labels[k];
        forward(params, x, &mut hidden, &mut logits);
        total += softmax_xent(&mut logits, y);
        let Some(g) = grad.as_deref_mut() else { continue };
        match s.kind {
            ModelKind::Logistic => {
                let bias = c * d;
                for ci in 0..c {
                    let delta = logits[ci] - if ci == y { 1.0 } else { 0.0 };
                    for (gj, xj) in g[ci * d..(ci + 1) * d].iter_mut().zip(x) {
                        *gj += delta * xj;
                    }
                    g[bias + ci] += delta;
                }
            }
            ModelKind::Mlp => {
                let (o_b1, o_w2) = (h * d, h * d + h);
                let o_b2 = o_w2 + c * h;
                back.iter_mut().for_each(|b| *b = 0.0);
                for ci in 0..c {
                    let delta = logits[ci] - if ci == y { 1.0 } else { 0.0 };
                    let base = o_w2 + ci * h;
                    for hi in 0..h {
                        g[base + hi] += delta * hidden[hi];
                        back[hi] += delta * w[base + hi];
                    }
                    g[o_b2 + ci] += delta;
                }
                for hi in 0..h {
                    let pre = back[hi] * (1.0 - hidden[hi] * hidden[hi]);
                    for (gj, xj) in g[hi * d..(hi + 1) * d].iter_mut().zip(x) {
                        *gj += pre * xj;
                    }
                    g[o_b1 + hi] += pre;
                }
            }
        }
    }
    total
}

fn all_rows(data: &ClientDataset) -> Vec<usize> {
    (0..data.len()).collect()
}

/// Mean cross-entropy over the batch.
pub fn loss(params: &ParamVector, batch: &ClientDataset) -> Result<f64> {
    check_shape(params, batch)?;
    if batch.is_empty() {
        return Err(Error::EmptyData);
    }
    Ok(accumulate(params, batch, &all_rows(batch), None) / batch.len() as f64)
}

/// Exact gradient of [`loss`].
pub fn grad(params: &ParamVector, batch: &ClientDataset) -> Result<ParamVector> {
    Ok(loss_and_grad(params, batch)?.1)
}

pub fn loss_and_grad(params: &ParamVector, batch: &ClientDataset) -> Result<(f64, ParamVector)> {
    check_shape(params, batch)?;
    if batch.is_empty() {
        return Err(Error::EmptyData);
    }
    Ok(rows_loss_and_grad(params, batch, &all_rows(batch)))
}

/// Loss and gradient restricted to `rows` (must be non-empty).
pub(crate) fn rows_loss_and_grad(params: &ParamVector, data: &ClientDataset, rows: &[usize]) -> (f64, ParamVector) {
    let mut g = ParamVector::zeros(params.shape);
    let total = accumulate(params, data, rows, Some(&mut g.values));
    let inv = 1.0 / rows.len() as f64;
    g.scale(inv);
    (total * inv, g)
}

/// Mean loss over several equally weighted datasets, i.e. `(1/N) sum_i F_i(w)`.
pub fn mean_loss_and_grad<'a>(
    params: &ParamVector,
    shards: impl IntoIterator<Item = &'a ClientDataset>,
) -> Result<(f64, ParamVector)> {
    let mut total = 0.0;
    let mut g = ParamVector::zeros(params.shape);
    let mut n = 0usize;
    for d in shards {
        let (l, gi) = loss_and_grad(params, d)?;
        total += l;
        g.axpy(1.0, &gi);
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyData);
    }
    g.scale(1.0 / n as f64);
    Ok((total / n as f64, g))
}

pub fn predict(params: &ParamVector, x: &[f64]) -> usize {
    let mut hidden = vec![0.0; params.shape.hidden];
    let mut logits = vec![0.0; params.shape.classes];
    forward(params, x, &mut hidden, &mut logits);
    let mut best = 0;
    for (k, &z) in logits.iter().enumerate() {
        if z > logits[best] {
            best = k;
        }
    }
    best
}

pub fn accuracy(params: &ParamVector, data: &ClientDataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let correct = (0..data.len()).filter(|&k| predict(params, data.row(k)) == data.labels[k]).count();
    correct as f64 / data.len() as f64
}

/// `epochs` shuffled without-replacement passes of mini-batch SGD.
pub fn sgd_epochs<R: Rng + ?Sized>(
    params: &ParamVector,
    data: &ClientDataset,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    rng: &mut R,
) -> Result<ParamVector> {
    check_shape(params, data)?;
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut w = params.clone();
    let mut order = all_rows(data);
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch_size) {
            let (_, g) = rows_loss_and_grad(&w, data, chunk);
            w.axpy(-lr, &g);
        }
    }
    Ok(w)
}

/// Mini-batch steps taken per epoch.
pub fn steps_per_epoch(samples: usize, batch_size: usize) -> usize {
    samples.div_ceil(batch_size.max(1))
}
