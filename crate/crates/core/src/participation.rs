//! Per-round client sampling for each regional server.
//!
//! Scheme I samples with replacement (plans are multisets), scheme II
//! without. Every server draws from its own stream keyed by
//! `(seed, round, server)`.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::topology::{AreaType, ClientId, ServerId, Topology};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    /// With replacement.
    I,
    /// Without replacement.
    II,
}

/// Quota of one area type inside a server's region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeQuota {
    pub servers: Vec<ServerId>,
    pub count: usize,
}

/// How biased quotas are declared in configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuotaSpec {
    /// Per-server totals by overlap degree (`{"1": 4, "2": 4, "3": 2}` means
    /// 4 isolated, 4 pairwise-overlap and 2 triple-overlap clients per server;
    /// a degree's quota is split evenly across the server's area types of that
    /// degree, remainder going to the lowest types).
    ByDegree(#[serde(with = "crate::topology::usize_keys")] BTreeMap<usize, usize>),
    /// Explicit quotas per server.
    PerServer(Vec<Vec<TypeQuota>>),
}

/// Participation strategy as configured.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    Full,
    Unbiased { clients_per_server: usize, scheme: Scheme },
    Biased { quotas: QuotaSpec, scheme: Scheme },
}

impl Strategy {
    pub fn tag(&self) -> String {
        match self {
            Strategy::Full => "full".into(),
            Strategy::Unbiased { scheme, .. } => format!("unbiased-{scheme:?}"),
            Strategy::Biased { scheme, .. } => format!("biased-{scheme:?}"),
        }
    }
}

/// Resolved biased quotas `K_{m,θ}`, one map per server.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasSpec {
    pub quotas: Vec<BTreeMap<AreaType, usize>>,
}

impl BiasSpec {
    pub fn resolve(topo: &Topology, spec: &QuotaSpec) -> Result<Self> {
        match spec {
            QuotaSpec::ByDegree(classes) => Self::from_degree_quotas(topo, classes),
            QuotaSpec::PerServer(per) => {
                if per.len() != topo.num_servers() {
                    return Err(Error::Participation(format!(
                        "quotas given for {} servers, topology has {}",
                        per.len(),
                        topo.num_servers()
                    )));
                }
                let quotas = per
                    .iter()
                    .map(|list| {
                        list.iter()
                            .map(|q| Ok((AreaType::new(q.servers.iter().copied())?, q.count)))
                            .collect::<Result<BTreeMap<_, _>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Self { quotas })
            }
        }
    }

    pub fn from_degree_quotas(topo: &Topology, classes: &BTreeMap<usize, usize>) -> Result<Self> {
        let mut quotas = Vec::with_capacity(topo.num_servers());
        for m in 0..topo.num_servers() {
            let mut map = BTreeMap::new();
            for (&degree, &total) in classes {
                let types: Vec<AreaType> =
                    topo.region_types(m).into_iter().map(|(a, _)| a).filter(|a| a.degree() == degree).collect();
                if types.is_empty() {
                    if total > 0 {
                        return Err(Error::Participation(format!(
                            "server {m} has no clients of overlap degree {degree} but a quota of {total}"
                        )));
                    }
                    continue;
                }
                let (base, extra) = (total / types.len(), total % types.len());
                for (k, a) in types.into_iter().enumerate() {
                    map.insert(a, base + usize::from(k < extra));
                }
            }
            quotas.push(map);
        }
        Ok(Self { quotas })
    }

    /// `K_m` implied by the quotas.
    pub fn total(&self, m: ServerId) -> usize {
        self.quotas[m].values().sum()
    }

    pub fn quota(&self, m: ServerId, area: &AreaType) -> usize {
        self.quotas[m].get(area).copied().unwrap_or(0)
    }

    /// Check quotas against the topology. `expected_totals`, when given,
    /// are the declared `K_m` the quotas must sum to.
    pub fn validate(&self, topo: &Topology, scheme: Scheme, expected_totals: Option<&[usize]>) -> Result<()> {
        if self.quotas.len() != topo.num_servers() {
            return Err(Error::Participation("one quota map per server is required".into()));
        }
        for (m, map) in self.quotas.iter().enumerate() {
            for (area, &q) in map {
                if !area.contains(m) {
                    return Err(Error::Participation(format!("server {m} cannot sample area type {area}")));
                }
                let available = topo.count_in_region(m, area);
                if q > 0 && available == 0 {
                    return Err(Error::Participation(format!(
                        "server {m}: quota {q} for area type {area}, which has no clients"
                    )));
                }
                if scheme == Scheme::II && q > available {
                    return Err(Error::Participation(format!(
                        "server {m}: quota {q} for area type {area} exceeds its {available} clients (scheme II)"
                    )));
                }
            }
            if let Some(expected) = expected_totals {
                if self.total(m) != expected[m] {
                    return Err(Error::Participation(format!(
                        "server {m}: quotas sum to {} but K_m = {}",
                        self.total(m),
                        expected[m]
                    )));
                }
            }
            if self.total(m) == 0 {
                return Err(Error::Participation(format!("server {m}: quotas select no clients")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ServerPlan {
    pub server: ServerId,
    /// Sampled clients in ascending id order; repeats allowed under scheme I.
    pub clients: Vec<ClientId>,
    /// `K_{m,θ}` actually drawn this round.
    pub per_type: BTreeMap<AreaType, usize>,
}

impl ServerPlan {
    fn new(topo: &Topology, server: ServerId, mut clients: Vec<ClientId>) -> Self {
        clients.sort_unstable();
        let mut per_type = BTreeMap::new();
        for &i in &clients {
            *per_type.entry(topo.client(i).area.clone()).or_insert(0) += 1;
        }
        Self { server, clients, per_type }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParticipationPlan {
    pub round: usize,
    pub strategy: String,
    pub servers: Vec<ServerPlan>,
}

impl ParticipationPlan {
    /// Distinct clients sampled by at least one server, ascending.
    pub fn distinct_clients(&self) -> Vec<ClientId> {
        let mut all: Vec<ClientId> = self.servers.iter().flat_map(|s| s.clients.iter().copied()).collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    /// Servers that sampled `client` this round.
    pub fn servers_of(&self, client: ClientId) -> Vec<ServerId> {
        self.servers.iter().filter(|s| s.clients.binary_search(&client).is_ok()).map(|s| s.server).collect()
    }

    /// One JSON object per server: `{t, m, clients, per_type}`.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for s in &self.servers {
            let per_type: BTreeMap<String, usize> = s.per_type.iter().map(|(a, &n)| (a.to_string(), n)).collect();
            let line = serde_json::json!({
                "t": self.round,
                "m": s.server,
                "clients": s.clients,
                "per_type": per_type,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for ParticipationPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_json_lines())
    }
}

fn server_stream(seed: u64, round: usize, m: ServerId) -> rand_chacha::ChaCha8Rng {
    rng::stream(seed, Purpose::Sampling, &[round as u64, m as u64])
}

fn draw<R: Rng + ?Sized>(pool: &[ClientId], k: usize, scheme: Scheme, rng: &mut R) -> Vec<ClientId> {
    match scheme {
        Scheme::I => (0..k).map(|_| pool[rng.random_range(0..pool.len())]).collect(),
        Scheme::II => rand::seq::index::sample(rng, pool.len(), k).into_iter().map(|j| pool[j]).collect(),
    }
}

pub fn sample_full(topo: &Topology, round: usize) -> ParticipationPlan {
    let servers = (0..topo.num_servers()).map(|m| ServerPlan::new(topo, m, topo.region(m).to_vec())).collect();
    ParticipationPlan { round, strategy: "full".into(), servers }
}

pub fn sample_unbiased(topo: &Topology, k: usize, scheme: Scheme, seed: u64, round: usize) -> Result<ParticipationPlan> {
    let mut servers = Vec::with_capacity(topo.num_servers());
    for m in 0..topo.num_servers() {
        let pool = topo.region(m);
        if k == 0 {
            return Err(Error::Participation("clients_per_server must be positive".into()));
        }
        if pool.is_empty() {
            return Err(Error::Participation(format!("server {m} covers no clients")));
        }
        if scheme == Scheme::II && k > pool.len() {
            return Err(Error::Participation(format!(
                "server {m}: K_m = {k} exceeds region size {} under scheme II",
                pool.len()
            )));
        }
        let mut r = server_stream(seed, round, m);
        servers.push(ServerPlan::new(topo, m, draw(pool, k, scheme, &mut r)));
    }
    Ok(ParticipationPlan { round, strategy: format!("unbiased-{scheme:?}"), servers })
}

pub fn sample_biased(
    topo: &Topology,
    spec: &BiasSpec,
    scheme: Scheme,
    seed: u64,
    round: usize,
) -> Result<ParticipationPlan> {
    spec.validate(topo, scheme, None)?;
    let mut servers = Vec::with_capacity(topo.num_servers());
    for m in 0..topo.num_servers() {
        let mut r = server_stream(seed, round, m);
        let mut clients = Vec::with_capacity(spec.total(m));
        for (area, &q) in &spec.quotas[m] {
            clients.extend(draw(topo.type_members(area), q, scheme, &mut r));
        }
        servers.push(ServerPlan::new(topo, m, clients));
    }
    Ok(ParticipationPlan { round, strategy: format!("biased-{scheme:?}"), servers })
}

/// Draw the plan for `round` under a configured strategy.
pub fn sample(topo: &Topology, strategy: &Strategy, seed: u64, round: usize) -> Result<ParticipationPlan> {
    match strategy {
        Strategy::Full => Ok(sample_full(topo, round)),
        Strategy::Unbiased { clients_per_server, scheme } => {
            sample_unbiased(topo, *clients_per_server, *scheme, seed, round)
        }
        Strategy::Biased { quotas, scheme } => {
            let spec = BiasSpec::resolve(topo, quotas)?;
            sample_biased(topo, &spec, *scheme, seed, round)
        }
    }
}

/// Like [`sample`], but servers whose region is empty get an empty plan
/// instead of an error. Used by baselines whose layouts can leave an edge
/// server without clients.
pub fn sample_allow_idle(topo: &Topology, strategy: &Strategy, seed: u64, round: usize) -> Result<ParticipationPlan> {
    if (0..topo.num_servers()).all(|m| topo.region_size(m) > 0) {
        return sample(topo, strategy, seed, round);
    }
    let servers = (0..topo.num_servers())
        .map(|m| {
            let pool = topo.region(m);
            if pool.is_empty() {
                return Ok(ServerPlan::new(topo, m, Vec::new()));
            }
            let mut r = server_stream(seed, round, m);
            let clients = match strategy {
                Strategy::Full => pool.to_vec(),
                Strategy::Unbiased { clients_per_server, scheme } => {
                    if *scheme == Scheme::II && *clients_per_server > pool.len() {
                        return Err(Error::Participation(format!(
                            "server {m}: K_m = {clients_per_server} exceeds region size {} under scheme II",
                            pool.len()
                        )));
                    }
                    draw(pool, *clients_per_server, *scheme, &mut r)
                }
                Strategy::Biased { .. } => {
                    return Err(Error::Participation(
                        "biased quotas are not defined when some servers cover no clients".into(),
                    ))
                }
            };
            Ok(ServerPlan::new(topo, m, clients))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParticipationPlan { round, strategy: strategy.tag(), servers })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig3() -> Topology {
        Topology::build_symmetric(3, 15, 10, 10, 0).unwrap()
    }

    fn degree_quotas(u: usize, v: usize, w: usize) -> QuotaSpec {
        QuotaSpec::ByDegree([(1, u), (2, v), (3, w)].into())
    }

    #[test]
    fn full_plan_covers_regions() {
        let t = fig3();
        let p = sample_full(&t, 0);
        for s in &p.servers {
            assert_eq!(s.clients.len(), 45);
            assert_eq!(s.clients, t.region(s.server));
        }
        assert_eq!(p, sample_full(&t, 0));
        let single = Topology::build_custom(1, [(AreaType::new([0]).unwrap(), 12)].into(), 0).unwrap();
        assert_eq!(sample_full(&single, 0).distinct_clients(), (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn unbiased_type_ratios_match_populations() {
        let t = fig3();
        let rounds = 10_000;
        let mut sums: BTreeMap<AreaType, f64> = BTreeMap::new();
        for round in 0..rounds {
            let p = sample_unbiased(&t, 10, Scheme::II, 3, round).unwrap();
            for (a, &n) in &p.servers[0].per_type {
                *sums.entry(a.clone()).or_default() += n as f64 / 10.0;
            }
        }
        for (a, n) in t.region_types(0) {
            let empirical = sums[&a] / rounds as f64;
            assert!((empirical - n as f64 / 45.0).abs() <= 0.02, "{a}: {empirical}");
        }
    }

    #[test]
    fn unbiased_scheme_ii_full_draw_is_region() {
        let t = fig3();
        let p = sample_unbiased(&t, 45, Scheme::II, 1, 0).unwrap();
        for s in &p.servers {
            assert_eq!(s.clients, t.region(s.server));
        }
        assert!(sample_unbiased(&t, 46, Scheme::II, 1, 0).is_err());
        assert!(sample_unbiased(&t, 46, Scheme::I, 1, 0).is_ok());
    }

    #[test]
    fn scheme_i_single_draw_is_uniform() {
        // Chi-square goodness of fit over the 45 clients of server 0.
        let t = fig3();
        let draws = 10_000;
        let mut counts = BTreeMap::new();
        for round in 0..draws {
            let p = sample_unbiased(&t, 1, Scheme::I, 8, round).unwrap();
            *counts.entry(p.servers[0].clients[0]).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 45);
        let expected = draws as f64 / 45.0;
        let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99th percentile of chi-square with 44 degrees of freedom.
        assert!(chi2 < 68.71, "chi2 = {chi2}");
    }

    #[test]
    fn biased_quotas_exact_every_round() {
        let t = fig3();
        let spec = BiasSpec::resolve(&t, &degree_quotas(4, 4, 2)).unwrap();
        spec.validate(&t, Scheme::II, Some(&[10, 10, 10])).unwrap();
        for round in 0..200 {
            for scheme in [Scheme::I, Scheme::II] {
                let p = sample_biased(&t, &spec, scheme, 5, round).unwrap();
                for s in &p.servers {
                    assert_eq!(s.clients.len(), 10);
                    let by_degree = |k| s.per_type.iter().filter(|(a, _)| a.degree() == k).map(|(_, n)| n).sum::<usize>();
                    assert_eq!((by_degree(1), by_degree(2), by_degree(3)), (4, 4, 2));
                    for (a, &n) in &s.per_type {
                        assert_eq!(n, spec.quota(s.server, a));
                    }
                }
            }
        }
    }

    #[test]
    fn biased_single_area_only() {
        let t = fig3();
        let spec = BiasSpec::resolve(&t, &degree_quotas(10, 0, 0)).unwrap();
        let p = sample_biased(&t, &spec, Scheme::II, 5, 0).unwrap();
        for s in &p.servers {
            assert!(s.clients.iter().all(|&i| t.client(i).area.degree() == 1));
        }
    }

    #[test]
    fn biased_full_quotas_cover_region() {
        let t = fig3();
        let spec = BiasSpec::resolve(&t, &degree_quotas(15, 20, 10)).unwrap();
        let p = sample_biased(&t, &spec, Scheme::II, 5, 0).unwrap();
        for s in &p.servers {
            assert_eq!(s.clients, t.region(s.server));
        }
    }

    #[test]
    fn biased_errors() {
        let t = fig3();
        let spec = BiasSpec::resolve(&t, &degree_quotas(16, 0, 0)).unwrap();
        assert!(spec.validate(&t, Scheme::II, None).is_err());
        assert!(spec.validate(&t, Scheme::I, None).is_ok());
        let spec = BiasSpec::resolve(&t, &degree_quotas(4, 4, 2)).unwrap();
        assert!(spec.validate(&t, Scheme::II, Some(&[9, 10, 10])).is_err());
        let wn = Topology::build_symmetric(3, 0, 0, 85, 0).unwrap();
        assert!(BiasSpec::resolve(&wn, &degree_quotas(4, 0, 6)).is_err());
        let foreign = QuotaSpec::PerServer(vec![
            vec![TypeQuota { servers: vec![1], count: 2 }],
            vec![TypeQuota { servers: vec![1], count: 2 }],
            vec![TypeQuota { servers: vec![2], count: 2 }],
        ]);
        let spec = BiasSpec::resolve(&t, &foreign).unwrap();
        assert!(spec.validate(&t, Scheme::I, None).is_err());
    }

    #[test]
    fn plans_respect_membership_and_log_as_json() {
        let t = fig3();
        let p = sample_unbiased(&t, 10, Scheme::I, 2, 7).unwrap();
        for s in &p.servers {
            assert!(s.clients.iter().all(|&i| t.client(i).area.contains(s.server)));
        }
        let lines = p.to_json_lines();
        assert_eq!(lines.lines().count(), 3);
        let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
        assert_eq!(first["t"], 7);
        assert_eq!(first["clients"].as_array().unwrap().len(), 10);
    }

    #[test]
    fn sampling_is_deterministic_per_round_and_server() {
        let t = fig3();
        let a = sample_unbiased(&t, 10, Scheme::II, 2, 3).unwrap();
        assert_eq!(a, sample_unbiased(&t, 10, Scheme::II, 2, 3).unwrap());
        assert_ne!(a, sample_unbiased(&t, 10, Scheme::II, 2, 4).unwrap());
    }

    #[test]
    fn strategy_serde() {
        let s = Strategy::Biased { quotas: degree_quotas(4, 4, 2), scheme: Scheme::II };
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<Strategy>(&json).unwrap(), s);
        let u: Strategy = serde_json::from_str(r#"{"kind":"unbiased","clients_per_server":10,"scheme":"I"}"#).unwrap();
        assert_eq!(u.tag(), "unbiased-I");
    }
}
