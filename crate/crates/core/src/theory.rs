//! Learning-rate preconditions, empirical assumption constants, and the
//! non-vanishing bound terms of the convergence theorems.
//!
//! Formulas are transcribed literally, including their quirks; see
//! [`ConditionFlag::gating`] for the few conditions that are reported but do
//! not block a run.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::ClientDataset;
use crate::engine::{EngineConfig, TraceRound};
use crate::error::{Error, Result};
use crate::model::{self, ModelSpec, ParamVector};
use crate::participation::{BiasSpec, Scheme, Strategy};
use crate::rng::{self, Purpose};
use crate::topology::{AreaType, Topology};

pub const ESTIMATE_LABEL: &str = "empirical lower bounds of the assumption constants";

/// `a / b` with `0/0 = 0` and `x/0 = ±inf`.
pub fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        if a == 0.0 {
            0.0
        } else {
            a.signum() * f64::INFINITY
        }
    } else {
        a / b
    }
}

/// Which theorem's formulas apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Full,
    Unbiased(Scheme),
    Biased(Scheme),
}

impl Regime {
    pub fn of(strategy: &Strategy) -> Self {
        match strategy {
            Strategy::Full => Regime::Full,
            Strategy::Unbiased { scheme, .. } => Regime::Unbiased(*scheme),
            Strategy::Biased { scheme, .. } => Regime::Biased(*scheme),
        }
    }

    fn prefix(&self) -> &'static str {
        match self {
            Regime::Full => "theorem1",
            Regime::Unbiased(Scheme::I) => "theorem2-I",
            Regime::Unbiased(Scheme::II) => "theorem2-II",
            Regime::Biased(Scheme::I) => "theorem3-I",
            Regime::Biased(Scheme::II) => "theorem3-II",
        }
    }
}

/// Per-type counts and heterogeneity inside one region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeTerm {
    /// `N_{m,θ}`
    pub n: f64,
    /// `K_{m,θ}` (expected count for unbiased sampling, quota for biased, `N_{m,θ}` for full).
    pub k: f64,
    /// `α²_{m,θ}`
    pub alpha_sq: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServerTerms {
    pub n_m: f64,
    pub k_m: f64,
    pub sigma_sq: f64,
    pub types: Vec<TypeTerm>,
}

/// Everything the bound formulas depend on. `M` is `servers.len()`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub l: f64,
    pub e: f64,
    pub t: f64,
    pub eta_g: f64,
    pub eta_l: f64,
    pub c: f64,
    pub servers: Vec<ServerTerms>,
}

impl BoundInputs {
    fn m(&self) -> f64 {
        self.servers.len() as f64
    }

    pub fn validate(&self) -> Result<()> {
        let scalars = [self.l, self.e, self.t, self.eta_g, self.eta_l, self.c];
        if scalars.iter().any(|x| !(*x >= 0.0) || x.is_nan()) {
            return Err(Error::Theory("bound inputs must be non-negative".into()));
        }
        if self.c == 0.0 {
            return Err(Error::Theory("c must be positive".into()));
        }
        for s in &self.servers {
            if [s.n_m, s.k_m, s.sigma_sq].iter().any(|x| !(*x >= 0.0)) {
                return Err(Error::Theory("server counts and variances must be non-negative".into()));
            }
            if s.types.iter().any(|t| !(t.n >= 0.0 && t.k >= 0.0 && t.alpha_sq >= 0.0)) {
                return Err(Error::Theory("type counts and variances must be non-negative".into()));
            }
        }
        Ok(())
    }
}

/// `1/(√30·L·E)`.
pub fn lemma1_limit(l: f64, e: f64) -> f64 {
    1.0 / (30f64.sqrt() * l * e)
}

/// `η_l = 1/(√T·E·L)`, evaluated in the same operation order as [`lemma1_limit`].
pub fn corollary_eta_l(t: f64, e: f64, l: f64) -> f64 {
    1.0 / (t.sqrt() * l * e)
}

/// `η_l < 1/(√30·L·E)`.
pub fn lemma1_holds(eta_l: f64, l: f64, e: f64) -> bool {
    eta_l < lemma1_limit(l, e)
}

/// `min{1/(√30·L·E), 1/(L·E·η_g)}`.
pub fn theorem1_limit(l: f64, e: f64, eta_g: f64) -> f64 {
    lemma1_limit(l, e).min(1.0 / (l * e * eta_g))
}

/// One evaluated precondition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionFlag {
    pub name: String,
    pub server: Option<usize>,
    /// Left-hand side (the learning rate, or the composite expression).
    pub value: f64,
    pub limit: f64,
    pub strict: bool,
    pub holds: bool,
    /// Reported conditions that are known misprints do not block runs; a
    /// corrected companion flag does.
    pub gating: bool,
}

impl ConditionFlag {
    fn new(name: impl Into<String>, server: Option<usize>, value: f64, limit: f64, strict: bool) -> Self {
        let holds = if strict { value < limit } else { value <= limit };
        Self { name: name.into(), server, value, limit, strict, holds, gating: true }
    }

    fn informational(mut self) -> Self {
        self.gating = false;
        self
    }

    pub fn describe(&self) -> String {
        let op = if self.strict { "<" } else { "<=" };
        let at = self.server.map(|m| format!(" at server {m}")).unwrap_or_default();
        format!("{}{at}: {} {op} {} is {}", self.name, self.value, self.limit, if self.holds { "satisfied" } else { "violated" })
    }
}

/// Per-server threshold sum of the partial-participation theorems.
fn partial_threshold(regime: Regime, inp: &BoundInputs, s: &ServerTerms) -> f64 {
    let (l, e, eg) = (inp.l, inp.e, inp.eta_g);
    let km = s.k_m;
    let nm = s.n_m;
    s.types
        .iter()
        .map(|t| match regime {
            Regime::Unbiased(Scheme::I) => ratio(t.n * (t.k - 1.0), e * l * eg * km * nm),
            Regime::Unbiased(Scheme::II) => ratio(km * km * t.n * (t.n - 1.0), e * l * eg * nm * nm * t.k * (t.k - 1.0)),
            Regime::Biased(Scheme::I) => ratio(t.k * (t.k - 1.0), e * l * eg * km * km),
            Regime::Biased(Scheme::II) => ratio(t.k * t.k * (t.n - 1.0), e * l * eg * t.n * km * (t.k - 1.0)),
            Regime::Full => 0.0,
        })
        .sum()
}

/// Left-hand side of the composite "< 1" condition for one server.
fn composite(regime: Regime, inp: &BoundInputs, s: &ServerTerms) -> f64 {
    let (l, e, eg, el) = (inp.l, inp.e, inp.eta_g, inp.eta_l);
    let drift = 90.0 * e.powi(3) * l * l * el * el + 3.0 * e;
    let base = 30.0 * e * e * l * l * el * el;
    let km = s.k_m;
    let nm = s.n_m;
    let extra: f64 = match regime {
        Regime::Unbiased(Scheme::I) => {
            let sum_n: f64 = s.types.iter().map(|t| t.n).sum();
            ratio(l * eg * el * sum_n, km * nm) * drift
        }
        Regime::Unbiased(Scheme::II) => s
            .types
            .iter()
            .map(|t| ratio(l * eg * el * (t.k - 1.0), 2.0 * km * (t.n - 1.0)) * drift)
            .sum(),
        Regime::Biased(Scheme::I) => {
            s.types.iter().map(|t| ratio(l * eg * el * t.k * t.k, km * km * t.n) * drift).sum()
        }
        Regime::Biased(Scheme::II) => s
            .types
            .iter()
            .map(|t| ratio(l * eg * el * t.k * (t.n - t.k), km * t.n * (t.n - 1.0)) * drift)
            .sum(),
        Regime::Full => 0.0,
    };
    base + extra
}

/// Evaluate every precondition of the regime's theorem.
pub fn validate_lr(regime: Regime, inp: &BoundInputs) -> Vec<ConditionFlag> {
    let (l, e, el) = (inp.l, inp.e, inp.eta_l);
    let mut flags = vec![ConditionFlag::new("lemma1", None, el, lemma1_limit(l, e), true)];
    let p = regime.prefix();
    match regime {
        Regime::Full => {
            flags.push(ConditionFlag::new(p, None, el, theorem1_limit(l, e, inp.eta_g), false));
        }
        _ => {
            let first = match regime {
                Regime::Biased(Scheme::I) => {
                    // Uncorrected form: 1/(√30·E·T).
                    Some(1.0 / (30f64.sqrt() * e * inp.t))
                }
                Regime::Biased(Scheme::II) => {
                    // Uncorrected form: 1/(√30·K·L); K read as K_m, checked per server below.
                    None
                }
                _ => None,
            };
            match first {
                Some(lim) => {
                    flags.push(ConditionFlag::new(format!("{p} lr bound (uncorrected)"), None, el, lim, true).informational());
                    flags.push(ConditionFlag::new(format!("{p} lr bound"), None, el, lemma1_limit(l, e), true));
                }
                None if regime == Regime::Biased(Scheme::II) => {
                    for (m, s) in inp.servers.iter().enumerate() {
                        let lim = 1.0 / (30f64.sqrt() * s.k_m * l);
                        flags.push(
                            ConditionFlag::new(format!("{p} lr bound (uncorrected)"), Some(m), el, lim, true).informational(),
                        );
                    }
                    flags.push(ConditionFlag::new(format!("{p} lr bound"), None, el, lemma1_limit(l, e), true));
                }
                None => {
                    flags.push(ConditionFlag::new(format!("{p} lr bound"), None, el, lemma1_limit(l, e), true));
                }
            }
            for (m, s) in inp.servers.iter().enumerate() {
                flags.push(ConditionFlag::new(format!("{p} threshold"), Some(m), el, partial_threshold(regime, inp, s), true));
                flags.push(ConditionFlag::new(format!("{p} composite"), Some(m), composite(regime, inp, s), 1.0, true));
            }
        }
    }
    flags
}

/// First violated gating condition, if any.
pub fn first_violation(flags: &[ConditionFlag]) -> Option<&ConditionFlag> {
    flags.iter().find(|f| f.gating && !f.holds)
}

/// Non-vanishing terms of a bound.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PsiTerms {
    /// Theorem 1's Ψ (full participation only).
    pub psi: Option<f64>,
    pub psi1: Option<f64>,
    pub psi2: Option<f64>,
    pub psi3: Option<f64>,
    /// Ψ₃ with the biased β² in its literal form (`σ² + 6E·K_{m,θ}/K_m`).
    pub psi3_literal_beta: Option<f64>,
    /// Contribution of each server to the total.
    pub per_server: Vec<f64>,
    pub total: f64,
}

/// `β²_{m,θ} = σ²_m + 6E·N_{m,θ}·α²_{m,θ}/N_m`.
pub fn beta_sq_unbiased(sigma_sq: f64, e: f64, n: f64, n_m: f64, alpha_sq: f64) -> f64 {
    sigma_sq + ratio(6.0 * e * n * alpha_sq, n_m)
}

/// Biased `β²` with the α² factor restored: `σ² + 6E·K_{m,θ}·α²/K_m`.
pub fn beta_sq_biased(sigma_sq: f64, e: f64, k: f64, k_m: f64, alpha_sq: f64) -> f64 {
    sigma_sq + ratio(6.0 * e * k * alpha_sq, k_m)
}

/// Biased `β²` in its literal form: `σ² + 6E·K_{m,θ}/K_m`.
pub fn beta_sq_biased_literal(sigma_sq: f64, e: f64, k: f64, k_m: f64) -> f64 {
    sigma_sq + ratio(6.0 * e * k, k_m)
}

/// Evaluate the Ψ terms of the regime's theorem.
pub fn psi(regime: Regime, inp: &BoundInputs) -> PsiTerms {
    let (l, e, eg, el, c) = (inp.l, inp.e, inp.eta_g, inp.eta_l, inp.c);
    let mm = inp.m();
    let mut per_server = Vec::with_capacity(inp.servers.len());
    let (mut p1, mut p2, mut p3, mut p3lit) = (0.0, 0.0, 0.0, 0.0);
    for s in &inp.servers {
        let (nm, km, sg) = (s.n_m, s.k_m, s.sigma_sq);
        let a1;
        let (mut a2, mut a3, mut a3lit) = (0.0, 0.0, 0.0);
        match regime {
            Regime::Full => {
                a1 = ratio(l * eg * el, 2.0 * mm * nm) * sg / c;
                for t in &s.types {
                    let inner = sg + ratio(6.0 * e * t.n, mm * nm) * t.alpha_sq;
                    a3 += ratio(5.0 * t.n * e * l * l * el * el, 2.0 * mm * nm) * inner;
                }
                a3 /= c;
            }
            Regime::Unbiased(Scheme::I) => {
                a1 = ratio(e * l * eg * el, 2.0 * c * mm * km) * sg;
                for t in &s.types {
                    a2 += ratio(3.0 * e * l * eg * el * t.n, 2.0 * c * mm * km * nm) * t.alpha_sq;
                    let b = beta_sq_unbiased(sg, e, t.n, nm, t.alpha_sq);
                    a3 += (ratio(5.0 * t.n * e * l * l * el * el, 2.0 * c * mm * nm)
                        + ratio(15.0 * t.n * e * e * l.powi(3) * eg * el.powi(3), c * mm * km * nm))
                        * b;
                }
            }
            Regime::Unbiased(Scheme::II) => {
                a1 = ratio(l * eg * el, 2.0 * c * mm * km) * sg;
                for t in &s.types {
                    a2 += ratio(2.0 * e * l * l * eg * el * t.n * (t.n - t.k), c * mm * km * nm * (t.n - 1.0)) * t.alpha_sq;
                    let b = beta_sq_unbiased(sg, e, t.n, nm, t.alpha_sq);
                    a3 += (ratio(5.0 * e * l.powi(3) * el * el * t.n, 2.0 * c * mm * nm)
                        + ratio(
                            15.0 * e * e * l.powi(3) * eg * el.powi(3) * t.n * (t.n - t.k),
                            2.0 * c * mm * nm * km * (t.n - 1.0),
                        ))
                        * b;
                }
            }
            Regime::Biased(Scheme::I) => {
                a1 = ratio(l * eg * el, 2.0 * c * mm * km) * sg;
                for t in &s.types {
                    a2 += ratio(3.0 * e * l * eg * el * t.k.powi(3), 2.0 * c * mm * km.powi(3) * t.n) * t.alpha_sq;
                    let coef = ratio(5.0 * e * l * l * el * el * t.k, 2.0 * c * mm * km)
                        + ratio(15.0 * e * e * l.powi(3) * eg * el.powi(3) * t.k * t.k, 2.0 * c * mm * km * km * t.n);
                    a3 += coef * beta_sq_biased(sg, e, t.k, km, t.alpha_sq);
                    a3lit += coef * beta_sq_biased_literal(sg, e, t.k, km);
                }
            }
            Regime::Biased(Scheme::II) => {
                a1 = ratio(l * eg * el, 2.0 * c * mm * km) * sg;
                for t in &s.types {
                    a2 += ratio(3.0 * l * eg * el * t.k * (t.n - t.k), 2.0 * c * km * km * t.n * (t.n - 1.0)) * t.alpha_sq;
                    let coef = e
                        * l
                        * l
                        * el
                        * el
                        * (ratio(5.0 * t.k * e * l * l * el * el, 2.0 * c * mm * km)
                            + ratio(
                                15.0 * e * e * l.powi(3) * eg * el.powi(3) * t.k * (t.n - t.k),
                                2.0 * c * mm * km * t.n * (t.n - 1.0),
                            ));
                    a3 += coef * beta_sq_biased(sg, e, t.k, km, t.alpha_sq);
                    a3lit += coef * beta_sq_biased_literal(sg, e, t.k, km);
                }
            }
        }
        p1 += a1;
        p2 += a2;
        p3 += a3;
        p3lit += a3lit;
        per_server.push(a1 + a2 + a3);
    }
    match regime {
        Regime::Full => PsiTerms { psi: Some(p1 + p3), per_server, total: p1 + p3, ..PsiTerms::default() },
        Regime::Unbiased(_) => PsiTerms {
            psi1: Some(p1),
            psi2: Some(p2),
            psi3: Some(p3),
            per_server,
            total: p1 + p2 + p3,
            ..PsiTerms::default()
        },
        Regime::Biased(_) => PsiTerms {
            psi1: Some(p1),
            psi2: Some(p2),
            psi3: Some(p3),
            psi3_literal_beta: Some(p3lit),
            per_server,
            total: p1 + p2 + p3,
            ..PsiTerms::default()
        },
    }
}

/// `(f⁰ − f*)/(c·M·E·T·η_g·η_l)`.
pub fn vanishing_term(f0: f64, f_star: f64, inp: &BoundInputs) -> f64 {
    ratio(f0 - f_star, inp.c * inp.m() * inp.e * inp.t * inp.eta_g * inp.eta_l)
}

/// Corollary-style leading term: mean over servers of `1/√(N_m·E·T)` (full)
/// or `1/√(K_m·E·T)` (partial).
pub fn dominant_term(regime: Regime, inp: &BoundInputs) -> f64 {
    let sum: f64 = inp
        .servers
        .iter()
        .map(|s| {
            let n = if regime == Regime::Full { s.n_m } else { s.k_m };
            1.0 / (n * inp.e * inp.t).sqrt()
        })
        .sum();
    sum / inp.m()
}

/// Empirical estimates of the assumption constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionEstimates {
    pub label: String,
    pub l_hat: f64,
    pub sigma_sq: Vec<f64>,
    #[serde(with = "per_type")]
    pub alpha_sq: Vec<BTreeMap<AreaType, f64>>,
}

/// Per-server type maps as lists of `{servers, value}` entries.
mod per_type {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::topology::AreaType;

    #[derive(Serialize, Deserialize)]
    struct Entry {
        servers: AreaType,
        value: f64,
    }

    pub fn serialize<S: Serializer>(maps: &[BTreeMap<AreaType, f64>], s: S) -> Result<S::Ok, S::Error> {
        let lists: Vec<Vec<Entry>> = maps
            .iter()
            .map(|m| m.iter().map(|(a, &value)| Entry { servers: a.clone(), value }).collect())
            .collect();
        lists.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<BTreeMap<AreaType, f64>>, D::Error> {
        let lists = Vec::<Vec<Entry>>::deserialize(d)?;
        Ok(lists.into_iter().map(|l| l.into_iter().map(|e| (e.servers, e.value)).collect()).collect())
    }
}

impl AssumptionEstimates {
    /// `β²_{m,θ}` per Theorem 2 for each (server, type).
    pub fn beta_sq(&self, topo: &Topology, e: f64) -> Vec<BTreeMap<AreaType, f64>> {
        self.alpha_sq
            .iter()
            .enumerate()
            .map(|(m, types)| {
                let nm = topo.region_size(m) as f64;
                types
                    .iter()
                    .map(|(a, &al)| {
                        let n = topo.count_in_region(m, a) as f64;
                        (a.clone(), beta_sq_unbiased(self.sigma_sq[m], e, n, nm, al))
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationConfig {
    /// Probe centres for the smoothness constant (the first is the initial model).
    pub probe_points: usize,
    /// Standard deviation of the random centres around the initial model.
    pub probe_scale: f64,
    /// Power-iteration steps per (centre, client).
    pub power_iters: usize,
    /// `‖u − v‖` of each probe pair.
    pub pair_distance: f64,
    /// Evenly spaced rounds kept in the trace for σ² and α².
    pub max_trace_rounds: usize,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self { probe_points: 3, probe_scale: 0.05, power_iters: 12, pair_distance: 1e-3, max_trace_rounds: 20 }
    }
}

/// Largest observed `‖∇F_i(u) − ∇F_i(v)‖/‖u − v‖` over clients and probe
/// pairs. Probe centres are the initial model and random points near it
/// (softmax curvature peaks near zero logits). From each centre the pair
/// direction follows power iteration on gradient differences, so the ratio
/// climbs toward the largest curvature instead of a random-direction average.
pub fn estimate_lipschitz(
    model_spec: &ModelSpec,
    data: &[ClientDataset],
    seed: u64,
    cfg: &EstimationConfig,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    use rand::Rng;
    let shape = model_spec.shape;
    let init = model_spec.init(seed);
    let normal = rand_distr::StandardNormal;
    let jobs: Vec<(usize, usize)> = (0..cfg.probe_points.max(1)).flat_map(|k| (0..data.len()).map(move |i| (k, i))).collect();
    let ratios = jobs
        .par_iter()
        .map(|&(k, i)| {
            let mut r = rng::stream(seed, Purpose::Probe, &[0, k as u64, i as u64]);
            let u = if k == 0 {
                init.clone()
            } else {
                let v = init.values.iter().map(|w| w + cfg.probe_scale * r.sample::<f64, _>(normal)).collect();
                ParamVector::new(shape, v)?
            };
            let gu = model::grad(&u, &data[i])?;
            let mut dir: Vec<f64> = (0..u.len()).map(|_| r.sample::<f64, _>(normal)).collect();
            let mut best = 0.0f64;
            for _ in 0..cfg.power_iters.max(1) {
                let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm == 0.0 {
                    break;
                }
                let mut v = u.clone();
                for (w, d) in v.values.iter_mut().zip(&dir) {
                    *w += cfg.pair_distance * d / norm;
                }
                let diff = model::grad(&v, &data[i])?.sub(&gu);
                let dist = v.sub(&u).norm_sq().sqrt();
                best = best.max(diff.norm_sq().sqrt() / dist);
                dir = diff.values;
            }
            Ok(best)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ratios.into_iter().fold(0.0, f64::max))
}

/// Estimate `L`, `σ²_m` and `α²_{m,θ}` from a recorded run.
pub fn estimate_assumptions(
    trace: &[TraceRound],
    data: &[ClientDataset],
    model_spec: &ModelSpec,
    config: &EngineConfig,
    seed: u64,
    cfg: &EstimationConfig,
) -> Result<AssumptionEstimates> {
    let first = trace.first().ok_or_else(|| Error::Theory("empty trace".into()))?;
    let num_servers = first.topology.num_servers();
    let rounds: Vec<&TraceRound> = trace.iter().collect();
    let l_hat = estimate_lipschitz(model_spec, data, seed, cfg)?;

    // σ²: one full shuffled epoch of mini-batches per sampled client per round.
    let sigma_rows = rounds
        .par_iter()
        .map(|tr| {
            let mut out = vec![0.0f64; num_servers];
            for u in &tr.updates {
                let d = &data[u.client];
                let full = model::grad(&u.start, d)?;
                let mut r = rng::stream(seed, Purpose::Probe, &[1, tr.round as u64, u.client as u64]);
                let mut order: Vec<usize> = (0..d.len()).collect();
                rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut r);
                let mut worst = 0.0f64;
                for chunk in order.chunks(config.batch_size) {
                    let (_, g) = model::rows_loss_and_grad(&u.start, d, chunk);
                    worst = worst.max(g.sub(&full).norm_sq());
                }
                for &m in tr.topology.client(u.client).area.servers() {
                    out[m] = out[m].max(worst);
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sigma_sq = vec![0.0f64; num_servers];
    for row in sigma_rows {
        for (s, v) in sigma_sq.iter_mut().zip(row) {
            *s = s.max(v);
        }
    }

    // α²: every type-θ client of region m at the next round's starting point.
    let alpha_rows = rounds
        .par_iter()
        .map(|tr| {
            let topo = &tr.topology;
            let mut out: Vec<BTreeMap<AreaType, f64>> = vec![BTreeMap::new(); num_servers];
            for (m, slot) in out.iter_mut().enumerate() {
                let members = topo.region(m);
                if members.is_empty() {
                    continue;
                }
                let (_, g_m) = model::mean_loss_and_grad(&tr.regional_after[m], members.iter().map(|&i| &data[i]))?;
                for (area, _) in topo.region_types(m) {
                    let w_i = ParamVector::mean(area.servers().iter().map(|&s| &tr.regional_after[s])).expect("non-empty");
                    let mut worst = 0.0f64;
                    for &i in topo.type_members(&area) {
                        worst = worst.max(model::grad(&w_i, &data[i])?.sub(&g_m).norm_sq());
                    }
                    slot.insert(area, worst);
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut alpha_sq: Vec<BTreeMap<AreaType, f64>> = vec![BTreeMap::new(); num_servers];
    for row in alpha_rows {
        for (acc, types) in alpha_sq.iter_mut().zip(row) {
            for (a, v) in types {
                let e = acc.entry(a).or_insert(0.0);
                *e = e.max(v);
            }
        }
    }
    Ok(AssumptionEstimates { label: ESTIMATE_LABEL.into(), l_hat, sigma_sq, alpha_sq })
}

/// Assemble formula inputs from a topology, a strategy and estimates.
///
/// `K_{m,θ}` is `K_m·N_{m,θ}/N_m` for unbiased sampling, the configured
/// quota for biased sampling and `N_{m,θ}` for full participation.
pub fn bound_inputs(
    topo: &Topology,
    strategy: &Strategy,
    est: &AssumptionEstimates,
    config: &EngineConfig,
    c: f64,
) -> Result<BoundInputs> {
    let bias = match strategy {
        Strategy::Biased { quotas, .. } => Some(BiasSpec::resolve(topo, quotas)?),
        _ => None,
    };
    if est.sigma_sq.len() != topo.num_servers() || est.alpha_sq.len() != topo.num_servers() {
        return Err(Error::Theory("estimates do not match the topology".into()));
    }
    let mut servers = Vec::with_capacity(topo.num_servers());
    for m in 0..topo.num_servers() {
        let nm = topo.region_size(m) as f64;
        let km = match (strategy, &bias) {
            (Strategy::Full, _) => nm,
            (Strategy::Unbiased { clients_per_server, .. }, _) => *clients_per_server as f64,
            (Strategy::Biased { .. }, Some(b)) => b.total(m) as f64,
            _ => unreachable!(),
        };
        let types = topo
            .region_types(m)
            .into_iter()
            .map(|(area, n)| {
                let n = n as f64;
                let k = match (strategy, &bias) {
                    (Strategy::Full, _) => n,
                    (Strategy::Unbiased { .. }, _) => km * n / nm,
                    (_, Some(b)) => b.quota(m, &area) as f64,
                    _ => unreachable!(),
                };
                let alpha_sq = est.alpha_sq[m].get(&area).copied().unwrap_or(0.0);
                TypeTerm { n, k, alpha_sq }
            })
            .collect();
        servers.push(ServerTerms { n_m: nm, k_m: km, sigma_sq: est.sigma_sq[m], types });
    }
    Ok(BoundInputs {
        l: est.l_hat,
        e: config.epochs as f64,
        t: config.rounds as f64,
        eta_g: config.eta_g,
        eta_l: config.eta_l,
        c,
        servers,
    })
}

/// Full bound evaluation for a finished run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub label: String,
    pub regime: Regime,
    pub estimates: AssumptionEstimates,
    pub c: f64,
    pub f0: f64,
    pub f_star: f64,
    /// Where `f*` came from (centralized optimum or best observed loss).
    pub f_star_source: String,
    pub vanishing_term: f64,
    pub psi: PsiTerms,
    pub bound: f64,
    /// `(c, vanishing + Ψ)` for the sensitivity grid.
    pub sensitivity: Vec<(f64, f64)>,
    pub dominant_term: f64,
    pub conditions: Vec<ConditionFlag>,
    pub conditions_hold: bool,
    pub warning: Option<String>,
    pub observed_min_grad_norm_sq: Option<f64>,
    pub observed_within_bound: Option<bool>,
}

pub const SENSITIVITY_C: [f64; 3] = [0.5, 1.0, 2.0];

/// Evaluate the bound for the selected regime.
pub fn evaluate_bound(
    regime: Regime,
    inputs: &BoundInputs,
    estimates: AssumptionEstimates,
    f0: f64,
    f_star: f64,
    f_star_source: &str,
    observed_min_grad_norm_sq: Option<f64>,
) -> Result<BoundReport> {
    inputs.validate()?;
    let conditions = validate_lr(regime, inputs);
    let conditions_hold = first_violation(&conditions).is_none();
    let warning = first_violation(&conditions).map(|f| format!("precondition violated: {}", f.describe()));
    let vanishing = vanishing_term(f0, f_star, inputs);
    let terms = psi(regime, inputs);
    let bound = vanishing + terms.total;
    let sensitivity = SENSITIVITY_C
        .iter()
        .map(|&c| {
            let mut alt = inputs.clone();
            alt.c = c;
            (c, vanishing_term(f0, f_star, &alt) + psi(regime, &alt).total)
        })
        .collect();
    Ok(BoundReport {
        label: ESTIMATE_LABEL.into(),
        regime,
        estimates,
        c: inputs.c,
        f0,
        f_star,
        f_star_source: f_star_source.into(),
        vanishing_term: vanishing,
        dominant_term: dominant_term(regime, inputs),
        psi: terms,
        bound,
        sensitivity,
        conditions,
        conditions_hold,
        warning,
        observed_min_grad_norm_sq,
        observed_within_bound: observed_min_grad_norm_sq.map(|g| g <= bound),
    })
}

/// Full-batch gradient descent on `f = (1/N) Σ F_i`; returns the final
/// iterate and its loss. Used as `f*` for convex models.
pub fn centralized_descent(
    init: &ParamVector,
    data: &[ClientDataset],
    lr: f64,
    max_iters: usize,
    grad_tol_sq: f64,
) -> Result<(ParamVector, f64)> {
    let mut w = init.clone();
    let (mut loss, mut g) = model::mean_loss_and_grad(&w, data)?;
    for _ in 0..max_iters {
        if g.norm_sq() <= grad_tol_sq {
            break;
        }
        w.axpy(-lr, &g);
        let next = model::mean_loss_and_grad(&w, data)?;
        loss = next.0;
        g = next.1;
    }
    Ok((w, loss))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_inputs() -> BoundInputs {
        BoundInputs {
            l: 2.0,
            e: 3.0,
            t: 100.0,
            eta_g: 1.5,
            eta_l: 0.01,
            c: 1.0,
            servers: vec![
                ServerTerms {
                    n_m: 10.0,
                    k_m: 4.0,
                    sigma_sq: 0.3,
                    types: vec![
                        TypeTerm { n: 6.0, k: 2.4, alpha_sq: 0.2 },
                        TypeTerm { n: 4.0, k: 1.6, alpha_sq: 0.5 },
                    ],
                },
                ServerTerms { n_m: 8.0, k_m: 4.0, sigma_sq: 0.1, types: vec![TypeTerm { n: 8.0, k: 4.0, alpha_sq: 0.4 }] },
            ],
        }
    }

    const REGIMES: [Regime; 5] = [
        Regime::Full,
        Regime::Unbiased(Scheme::I),
        Regime::Unbiased(Scheme::II),
        Regime::Biased(Scheme::I),
        Regime::Biased(Scheme::II),
    ];

    #[test]
    fn ratio_edges() {
        assert_eq!(ratio(0.0, 0.0), 0.0);
        assert_eq!(ratio(1.0, 0.0), f64::INFINITY);
        assert_eq!(ratio(-1.0, 0.0), f64::NEG_INFINITY);
        assert_eq!(ratio(3.0, 2.0), 1.5);
    }

    #[test]
    fn half_the_lemma_threshold_passes() {
        let (l, e) = (3.7, 4.0);
        assert!(lemma1_holds(0.5 / (30f64.sqrt() * l * e), l, e));
        assert!(!lemma1_holds(2.0 / (30f64.sqrt() * l * e), l, e));
    }

    #[test]
    fn corollary_rate_meets_lemma_exactly_past_thirty() {
        for &(l, e) in &[(1.0, 1.0), (2.5, 5.0), (13.0, 20.0)] {
            for t in 1..=200u32 {
                let eta = corollary_eta_l(t as f64, e, l);
                assert_eq!(lemma1_holds(eta, l, e), t > 30, "T = {t}");
                assert_eq!(eta <= lemma1_limit(l, e), t >= 30, "T = {t}");
            }
        }
    }

    #[test]
    fn noiseless_homogeneous_limit_is_zero() {
        let mut inp = sample_inputs();
        for s in &mut inp.servers {
            s.sigma_sq = 0.0;
            for t in &mut s.types {
                t.alpha_sq = 0.0;
            }
        }
        for r in REGIMES {
            let p = psi(r, &inp);
            assert_eq!(p.total, 0.0, "{r:?}");
            for v in [p.psi, p.psi1, p.psi2, p.psi3].into_iter().flatten() {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn psi_monotone_in_variances() {
        let base = sample_inputs();
        for r in REGIMES {
            let p0 = psi(r, &base).total;
            let mut more_sigma = base.clone();
            more_sigma.servers[0].sigma_sq *= 2.0;
            assert!(psi(r, &more_sigma).total >= p0);
            let mut more_alpha = base.clone();
            more_alpha.servers[0].types[1].alpha_sq *= 3.0;
            assert!(psi(r, &more_alpha).total >= p0);
        }
    }

    #[test]
    fn terms_scale_inversely_with_c() {
        let mut inp = sample_inputs();
        for r in REGIMES {
            inp.c = 1.0;
            let a = psi(r, &inp).total;
            inp.c = 2.0;
            let b = psi(r, &inp).total;
            assert!((a - 2.0 * b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn vanishing_term_scales_with_corollary_rate() {
        let mut inp = sample_inputs();
        let at = |t: f64, inp: &mut BoundInputs| {
            inp.t = t;
            inp.eta_l = corollary_eta_l(t, inp.e, inp.l);
            vanishing_term(2.0, 0.5, inp)
        };
        let v1 = at(100.0, &mut inp);
        let v2 = at(200.0, &mut inp);
        let v4 = at(400.0, &mut inp);
        assert!((v2 / v1 - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((v4 / v1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn biased_uncorrected_thresholds_are_informational() {
        let inp = sample_inputs();
        for r in [Regime::Biased(Scheme::I), Regime::Biased(Scheme::II)] {
            let flags = validate_lr(r, &inp);
            assert!(flags.iter().any(|f| !f.gating && f.name.contains("uncorrected")));
        }
        assert!(validate_lr(Regime::Full, &inp).iter().all(|f| f.gating));
    }

    #[test]
    fn report_flags_violations() {
        let mut inp = sample_inputs();
        inp.eta_l = 10.0;
        let est = AssumptionEstimates { label: ESTIMATE_LABEL.into(), l_hat: 2.0, sigma_sq: vec![], alpha_sq: vec![] };
        let rep = evaluate_bound(Regime::Full, &inp, est, 1.0, 0.0, "test", Some(0.1)).unwrap();
        assert!(!rep.conditions_hold);
        assert!(rep.warning.unwrap().contains("lemma1"));
        assert_eq!(rep.sensitivity.len(), 3);
    }

    #[test]
    fn estimates_json_round_trip() {
        let mut types = BTreeMap::new();
        types.insert(AreaType::new([0, 2]).unwrap(), 0.25);
        let est = AssumptionEstimates { label: ESTIMATE_LABEL.into(), l_hat: 1.5, sigma_sq: vec![0.1], alpha_sq: vec![types] };
        let json = serde_json::to_string(&est).unwrap();
        assert_eq!(serde_json::from_str::<AssumptionEstimates>(&json).unwrap(), est);
    }

    #[test]
    fn negative_inputs_rejected() {
        let mut inp = sample_inputs();
        inp.servers[0].sigma_sq = -1.0;
        assert!(inp.validate().is_err());
    }
}
