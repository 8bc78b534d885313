//! Synthetic Gaussian-mixture classification data with Dirichlet label skew.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::topology::{ClientId, Topology};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataGenSpec {
    pub classes: usize,
    pub feature_dim: usize,
    pub samples_per_client: usize,
    #[serde(default = "default_alpha")]
    pub dirichlet_alpha: f64,
    pub class_separation: f64,
}

fn default_alpha() -> f64 {
    0.4
}

impl Default for DataGenSpec {
    fn default() -> Self {
        Self { classes: 10, feature_dim: 20, samples_per_client: 64, dirichlet_alpha: 0.4, class_separation: 2.0 }
    }
}

impl DataGenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.feature_dim == 0 || self.samples_per_client == 0 {
            return Err(Error::Data("classes, feature_dim and samples_per_client must be positive".into()));
        }
        if self.feature_dim < self.classes {
            return Err(Error::Data(format!(
                "feature_dim ({}) must be at least the class count ({}) so every class gets its own axis",
                self.feature_dim, self.classes
            )));
        }
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) {
            return Err(Error::Data("dirichlet_alpha must be positive and finite".into()));
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return Err(Error::Data("class_separation must be positive and finite".into()));
        }
        Ok(())
    }
}

/// Row-major labelled samples owned by one client (or the evaluation set).
#[derive(Clone, Debug, PartialEq)]
pub struct ClientDataset {
    pub client: ClientId,
    pub feature_dim: usize,
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

impl ClientDataset {
    pub fn empty(client: ClientId, feature_dim: usize) -> Self {
        Self { client, feature_dim, features: Vec::new(), labels: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.features[k * self.feature_dim..(k + 1) * self.feature_dim]
    }

    pub fn push(&mut self, x: &[f64], y: usize) {
        debug_assert_eq!(x.len(), self.feature_dim);
        self.features.extend_from_slice(x);
        self.labels.push(y);
    }

    /// Copy of the rows at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> ClientDataset {
        let mut out = ClientDataset::empty(self.client, self.feature_dim);
        out.features.reserve(idx.len() * self.feature_dim);
        for &k in idx {
            out.push(self.row(k), self.labels[k]);
        }
        out
    }

    /// Concatenate datasets (client id taken from the first).
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a ClientDataset>) -> ClientDataset {
        let mut it = parts.into_iter().peekable();
        let first = it.peek().map(|d| (d.client, d.feature_dim)).unwrap_or((0, 0));
        let mut out = ClientDataset::empty(first.0, first.1);
        for d in it {
            out.features.extend_from_slice(&d.features);
            out.labels.extend_from_slice(&d.labels);
        }
        out
    }

    pub fn label_counts(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Shannon entropy (nats) of the empirical label distribution.
    pub fn label_entropy(&self, classes: usize) -> f64 {
        let n = self.len() as f64;
        self.label_counts(classes)
            .into_iter()
            .filter(|&c| c > 0)
            .map(|c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    }

    /// CSV with header `label,f_0,...,f_{d-1}`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> =
            std::iter::once("label".to_string()).chain((0..self.feature_dim).map(|j| format!("f_{j}"))).collect();
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut line = self.labels[k].to_string();
            for x in self.row(k) {
                line.push(',');
                line.push_str(&x.to_string());
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Draws `Dirichlet(alpha * 1_C)` through normalized Gamma variates.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: f64, classes: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    loop {
        let g: Vec<f64> = (0..classes).map(|_| gamma.sample(rng)).collect();
        let total: f64 = g.iter().sum();
        if total > 0.0 && total.is_finite() {
            return g.into_iter().map(|x| x / total).collect();
        }
    }
}

fn draw_sample<R: Rng + ?Sized>(spec: &DataGenSpec, class: usize, rng: &mut R, out: &mut Vec<f64>) {
    out.clear();
    for j in 0..spec.feature_dim {
        let z: f64 = StandardNormal.sample(rng);
        let mean = if j == class { spec.class_separation } else { 0.0 };
        out.push(mean + z);
    }
}

fn categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// One client's shard; depends only on `(spec, seed, client)`.
pub fn generate_client(spec: &DataGenSpec, seed: u64, client: ClientId) -> ClientDataset {
    let mut r = rng::stream(seed, Purpose::Data, &[client as u64]);
    let proportions = sample_dirichlet(spec.dirichlet_alpha, spec.classes, &mut r);
    let mut ds = ClientDataset::empty(client, spec.feature_dim);
    ds.features.reserve(spec.samples_per_client * spec.feature_dim);
    let mut x = Vec::with_capacity(spec.feature_dim);
    for _ in 0..spec.samples_per_client {
        let y = categorical(&proportions, &mut r);
        draw_sample(spec, y, &mut r, &mut x);
        ds.push(&x, y);
    }
    ds
}

/// Shards for every client in `topo`, indexed by client id.
pub fn generate(spec: &DataGenSpec, topo: &Topology, seed: u64) -> Result<Vec<ClientDataset>> {
    spec.validate()?;
    Ok((0..topo.num_clients()).map(|i| generate_client(spec, seed, i)).collect())
}

/// Held-out iid draw from the class-balanced mixture.
pub fn global_eval_set(spec: &DataGenSpec, n_eval: usize, seed: u64) -> Result<ClientDataset> {
    spec.validate()?;
    let mut r = rng::stream(seed, Purpose::Eval, &[]);
    let mut ds = ClientDataset::empty(usize::MAX, spec.feature_dim);
    let mut x = Vec::with_capacity(spec.feature_dim);
    for _ in 0..n_eval {
        let y = r.random_range(0..spec.classes);
        draw_sample(spec, y, &mut r, &mut x);
        ds.push(&x, y);
    }
    Ok(ds)
}
