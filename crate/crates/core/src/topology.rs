//! Multi-server network topologies with overlapping coverage areas.
//!
//! A client's *area type* is the exact set of regional servers it can reach.
//! Server ids are zero-based (`0..M`). Client ids are assigned in canonical
//! order: area types sorted lexicographically, then by index within the type.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

pub type ClientId = usize;
pub type ServerId = usize;

/// Regional distances are drawn from `[REGIONAL_KM.0, REGIONAL_KM.1]`.
pub const REGIONAL_KM: (f64, f64) = (0.1, 2.0);
/// Cloud distances are drawn from `[CLOUD_KM.0, CLOUD_KM.1]`.
pub const CLOUD_KM: (f64, f64) = (0.5, 5.0);

/// Canonical area type: sorted, deduplicated, non-empty server-id list.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct AreaType(Vec<ServerId>);

impl AreaType {
    pub fn new(servers: impl IntoIterator<Item = ServerId>) -> Result<Self> {
        let mut v: Vec<ServerId> = servers.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        if v.is_empty() {
            return Err(Error::Topology("area type must contain at least one server".into()));
        }
        Ok(Self(v))
    }

    pub fn servers(&self) -> &[ServerId] {
        &self.0
    }

    /// Number of servers reachable from this area (1 = isolated, 2 = pairwise overlap, ...).
    pub fn degree(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, server: ServerId) -> bool {
        self.0.binary_search(&server).is_ok()
    }

    pub fn lowest(&self) -> ServerId {
        self.0[0]
    }
}

impl<'de> Deserialize<'de> for AreaType {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<ServerId>::deserialize(d)?;
        AreaType::new(v).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for AreaType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, s) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{s}")?;
        }
        write!(f, "}}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClientInfo {
    pub id: ClientId,
    pub area: AreaType,
    /// Distance in km to each reachable regional server.
    pub dist_regional: BTreeMap<ServerId, f64>,
    /// Distance in km to the cloud server.
    pub dist_cloud: f64,
}

impl ClientInfo {
    fn draw<R: Rng + ?Sized>(id: ClientId, area: AreaType, rng: &mut R) -> Self {
        let regional = Uniform::new_inclusive(REGIONAL_KM.0, REGIONAL_KM.1).expect("valid range");
        let cloud = Uniform::new_inclusive(CLOUD_KM.0, CLOUD_KM.1).expect("valid range");
        let dist_regional = area.servers().iter().map(|&m| (m, regional.sample(rng))).collect();
        let dist_cloud = cloud.sample(rng);
        Self { id, area, dist_regional, dist_cloud }
    }
}

/// Serialized form: distances are re-derived from the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologyDoc {
    #[serde(rename = "M")]
    pub num_servers: usize,
    pub types: Vec<TypeCount>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeCount {
    pub servers: Vec<ServerId>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    num_servers: usize,
    seed: u64,
    declared: BTreeMap<AreaType, usize>,
    clients: Vec<ClientInfo>,
    regions: Vec<Vec<ClientId>>,
    types: BTreeMap<AreaType, Vec<ClientId>>,
}

impl Topology {
    /// The three-server symmetric layout: `u` isolated clients per server,
    /// `v` clients in each pairwise overlap, `w` clients in the triple overlap.
    pub fn build_symmetric(num_servers: usize, u: usize, v: usize, w: usize, seed: u64) -> Result<Self> {
        if num_servers != 3 {
            return Err(Error::Topology(format!(
                "symmetric builder supports exactly 3 servers (got {num_servers}); use build_custom for other layouts"
            )));
        }
        let mut sizes = BTreeMap::new();
        for m in 0..3 {
            sizes.insert(AreaType::new([m])?, u);
        }
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            sizes.insert(AreaType::new([a, b])?, v);
        }
        sizes.insert(AreaType::new([0, 1, 2])?, w);
        Self::build_custom(3, sizes, seed)
    }

    pub fn build_custom(num_servers: usize, type_sizes: BTreeMap<AreaType, usize>, seed: u64) -> Result<Self> {
        if num_servers == 0 {
            return Err(Error::Topology("at least one server is required".into()));
        }
        for area in type_sizes.keys() {
            if let Some(&bad) = area.servers().iter().find(|&&m| m >= num_servers) {
                return Err(Error::Topology(format!(
                    "area type {area} references server {bad}, but only servers 0..{num_servers} exist"
                )));
            }
        }
        let mut clients = Vec::new();
        for (area, &count) in &type_sizes {
            for _ in 0..count {
                let id = clients.len();
                let mut r = rng::stream(seed, Purpose::Topology, &[id as u64]);
                clients.push(ClientInfo::draw(id, area.clone(), &mut r));
            }
        }
        Ok(Self::assemble(num_servers, seed, type_sizes.keys().cloned(), clients))
    }

    pub fn from_doc(doc: &TopologyDoc) -> Result<Self> {
        let mut sizes = BTreeMap::new();
        for t in &doc.types {
            let area = AreaType::new(t.servers.iter().copied())?;
            if sizes.insert(area.clone(), t.count).is_some() {
                return Err(Error::Topology(format!("area type {area} listed twice")));
            }
        }
        Self::build_custom(doc.num_servers, sizes, doc.seed)
    }

    /// Document form of the declared type sizes. Only meaningful for built
    /// (not relocated) topologies, since relocation redraws distances.
    pub fn to_doc(&self) -> TopologyDoc {
        TopologyDoc {
            num_servers: self.num_servers,
            types: self
                .type_sizes()
                .into_iter()
                .map(|(a, count)| TypeCount { servers: a.servers().to_vec(), count })
                .collect(),
            seed: self.seed,
        }
    }

    fn assemble(
        num_servers: usize,
        seed: u64,
        declared_types: impl IntoIterator<Item = AreaType>,
        clients: Vec<ClientInfo>,
    ) -> Self {
        let mut types: BTreeMap<AreaType, Vec<ClientId>> =
            declared_types.into_iter().map(|a| (a, Vec::new())).collect();
        let mut regions = vec![Vec::new(); num_servers];
        for c in &clients {
            types.entry(c.area.clone()).or_default().push(c.id);
            for &m in c.area.servers() {
                regions[m].push(c.id);
            }
        }
        let declared = types.iter().map(|(a, ids)| (a.clone(), ids.len())).collect();
        Self { num_servers, seed, declared, clients, regions, types }
    }

    pub fn num_servers(&self) -> usize {
        self.num_servers
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn clients(&self) -> &[ClientInfo] {
        &self.clients
    }

    pub fn client(&self, id: ClientId) -> &ClientInfo {
        &self.clients[id]
    }

    /// Clients covered by server `m`, in ascending id order.
    pub fn region(&self, m: ServerId) -> &[ClientId] {
        &self.regions[m]
    }

    pub fn region_size(&self, m: ServerId) -> usize {
        self.regions[m].len()
    }

    /// All declared area types (including empty ones) with their members.
    pub fn types(&self) -> &BTreeMap<AreaType, Vec<ClientId>> {
        &self.types
    }

    pub fn type_sizes(&self) -> BTreeMap<AreaType, usize> {
        self.declared.clone()
    }

    pub fn type_members(&self, area: &AreaType) -> &[ClientId] {
        self.types.get(area).map(Vec::as_slice).unwrap_or(&[])
    }

    /// `N_{m,θ}`: clients of type `area` inside region `m`.
    pub fn count_in_region(&self, m: ServerId, area: &AreaType) -> usize {
        if area.contains(m) {
            self.type_members(area).len()
        } else {
            0
        }
    }

    /// Non-empty area types inside region `m` with their populations.
    pub fn region_types(&self, m: ServerId) -> Vec<(AreaType, usize)> {
        self.types
            .iter()
            .filter(|(a, ids)| a.contains(m) && !ids.is_empty())
            .map(|(a, ids)| (a.clone(), ids.len()))
            .collect()
    }

    /// Declared area types containing `m`, empty or not.
    pub fn declared_region_types(&self, m: ServerId) -> Vec<AreaType> {
        self.types.keys().filter(|a| a.contains(m)).cloned().collect()
    }

    /// True when some client can reach both servers.
    pub fn overlaps(&self, a: ServerId, b: ServerId) -> bool {
        self.types.iter().any(|(t, ids)| !ids.is_empty() && t.contains(a) && t.contains(b))
    }

    /// Redraw every client into a new area type according to `spec`.
    ///
    /// Each client independently samples an overlap class (by degree) and
    /// then a concrete declared type of that class uniformly. Client ids and
    /// data ownership are preserved; distances are redrawn from `rng`.
    pub fn relocate<R: Rng + ?Sized>(&self, spec: &MobilitySpec, rng: &mut R) -> Result<Topology> {
        let mut by_class: BTreeMap<usize, Vec<AreaType>> = BTreeMap::new();
        for area in self.types.keys() {
            by_class.entry(area.degree()).or_default().push(area.clone());
        }
        let classes: Vec<(usize, f64)> = spec.classes.iter().map(|(&k, &p)| (k, p)).collect();
        for &(k, p) in &classes {
            if p > 0.0 && !by_class.contains_key(&k) {
                return Err(Error::Topology(format!(
                    "mobility class of degree {k} has probability {p} but the topology declares no such area type"
                )));
            }
        }
        let mut clients = Vec::with_capacity(self.clients.len());
        for c in &self.clients {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut chosen = classes.last().map(|c| c.0).unwrap_or(1);
            for &(k, p) in &classes {
                acc += p;
                if u < acc && p > 0.0 {
                    chosen = k;
                    break;
                }
            }
            let candidates = &by_class[&chosen];
            let area = candidates[rng.random_range(0..candidates.len())].clone();
            clients.push(ClientInfo::draw(c.id, area, rng));
        }
        Ok(Self::assemble(self.num_servers, self.seed, self.types.keys().cloned(), clients))
    }

    /// Every client keeps only its lowest-id server. Used by the hierarchical
    /// baseline, where each client belongs to exactly one edge server.
    pub fn exclusive(&self) -> Topology {
        let clients = self
            .clients
            .iter()
            .map(|c| {
                let m = c.area.lowest();
                ClientInfo {
                    id: c.id,
                    area: AreaType(vec![m]),
                    dist_regional: [(m, c.dist_regional[&m])].into_iter().collect(),
                    dist_cloud: c.dist_cloud,
                }
            })
            .collect();
        let singles = (0..self.num_servers).map(|m| AreaType(vec![m]));
        Self::assemble(self.num_servers, self.seed, singles, clients)
    }

    /// One server covering every client; the cloud distance doubles as the
    /// distance to that server. Client ids are preserved.
    pub fn merged_single_server(&self) -> Topology {
        let area = AreaType(vec![0]);
        let clients = self
            .clients
            .iter()
            .map(|c| ClientInfo {
                id: c.id,
                area: area.clone(),
                dist_regional: [(0, c.dist_cloud)].into_iter().collect(),
                dist_cloud: c.dist_cloud,
            })
            .collect();
        Self::assemble(1, self.seed, [area.clone()], clients)
    }

    /// Same layout with distances replaced by `f(client) -> (regional, cloud)`.
    pub fn with_distances<F>(&self, f: F) -> Result<Topology>
    where
        F: Fn(&ClientInfo) -> (BTreeMap<ServerId, f64>, f64),
    {
        let mut clients = Vec::with_capacity(self.clients.len());
        for c in &self.clients {
            let (dist_regional, dist_cloud) = f(c);
            let keys: Vec<ServerId> = dist_regional.keys().copied().collect();
            if keys != c.area.servers() || dist_regional.values().chain([&dist_cloud]).any(|&d| !(d > 0.0)) {
                return Err(Error::Topology(format!("invalid distances for client {}", c.id)));
            }
            clients.push(ClientInfo { id: c.id, area: c.area.clone(), dist_regional, dist_cloud });
        }
        Ok(Self::assemble(self.num_servers, self.seed, self.types.keys().cloned(), clients))
    }

    /// Canonical JSON: server count, seed and every client with distances.
    pub fn canonical_json(&self) -> String {
        #[derive(Serialize)]
        struct View<'a> {
            #[serde(rename = "M")]
            num_servers: usize,
            seed: u64,
            clients: &'a [ClientInfo],
        }
        serde_json::to_string(&View { num_servers: self.num_servers, seed: self.seed, clients: &self.clients })
            .expect("topology serializes")
    }

    /// Human-readable summary: totals, per-type counts, per-region sizes.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "servers M = {}\nclients N = {}\narea types = {}\n",
            self.num_servers,
            self.num_clients(),
            self.types.values().filter(|v| !v.is_empty()).count()
        );
        for (a, ids) in &self.types {
            out.push_str(&format!("  type {a}: {}\n", ids.len()));
        }
        for m in 0..self.num_servers {
            out.push_str(&format!("  region {m}: N_m = {}\n", self.region_size(m)));
        }
        out
    }
}

/// Relocation probabilities keyed by overlap degree (1 = isolated `U`,
/// 2 = pairwise `V`, 3 = triple `W`, ...).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MobilitySpec {
    #[serde(with = "usize_keys")]
    pub classes: BTreeMap<usize, f64>,
}

impl MobilitySpec {
    pub fn new(classes: BTreeMap<usize, f64>) -> Result<Self> {
        let spec = Self { classes };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Topology("mobility spec declares no classes".into()));
        }
        for (&k, &p) in &self.classes {
            if k == 0 || !(0.0..=1.0).contains(&p) {
                return Err(Error::Topology(format!("invalid mobility class {k} with probability {p}")));
            }
        }
        let total: f64 = self.classes.values().sum();
        if (total - 1.0).abs() > 1e-3 {
            return Err(Error::Topology(format!("mobility probabilities sum to {total}, expected 1")));
        }
        Ok(())
    }

    /// `U`/`V`/`W` probabilities for a three-server layout.
    pub fn uvw(u: f64, v: f64, w: f64) -> Result<Self> {
        Self::new([(1, u), (2, v), (3, w)].into_iter().collect())
    }
}

/// Integer-keyed maps as JSON objects with string keys. Serde's buffered
/// (tagged-enum) path cannot turn string keys back into integers on its own.
pub(crate) mod usize_keys {
    use std::collections::BTreeMap;

    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer, V: Serialize>(map: &BTreeMap<usize, V>, s: S) -> Result<S::Ok, S::Error> {
        let named: BTreeMap<String, &V> = map.iter().map(|(k, v)| (k.to_string(), v)).collect();
        named.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>, V: Deserialize<'de>>(d: D) -> Result<BTreeMap<usize, V>, D::Error> {
        let named = BTreeMap::<String, V>::deserialize(d)?;
        named
            .into_iter()
            .map(|(k, v)| k.parse::<usize>().map(|k| (k, v)).map_err(|_| D::Error::custom(format!("bad integer key `{k}`"))))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig3() -> Topology {
        Topology::build_symmetric(3, 15, 10, 10, 1).unwrap()
    }

    fn check_invariants(t: &Topology) {
        let total: usize = t.types().values().map(Vec::len).sum();
        assert_eq!(total, t.num_clients());
        for m in 0..t.num_servers() {
            let mut from_types: Vec<ClientId> = t
                .types()
                .iter()
                .filter(|(a, _)| a.contains(m))
                .flat_map(|(_, ids)| ids.iter().copied())
                .collect();
            from_types.sort_unstable();
            assert_eq!(from_types, t.region(m));
            let sum: usize = t.region_types(m).iter().map(|(_, n)| n).sum();
            assert_eq!(sum, t.region_size(m));
        }
        for c in t.clients() {
            let keys: Vec<_> = c.dist_regional.keys().copied().collect();
            assert_eq!(keys, c.area.servers());
            assert!(c.dist_regional.values().all(|&d| d > 0.0));
            assert!(c.dist_cloud > 0.0);
            for m in 0..t.num_servers() {
                assert_eq!(t.region(m).contains(&c.id), c.area.contains(m));
            }
        }
    }

    #[test]
    fn symmetric_fig3_counts() {
        let t = fig3();
        assert_eq!(t.num_clients(), 85);
        for m in 0..3 {
            assert_eq!(t.region_size(m), 45);
        }
        assert_eq!(t.types().len(), 7);
        check_invariants(&t);
    }

    #[test]
    fn symmetric_all_overlap() {
        let t = Topology::build_symmetric(3, 0, 0, 85, 1).unwrap();
        assert!(t.clients().iter().all(|c| c.area.servers() == [0, 1, 2]));
        for m in 0..3 {
            assert_eq!(t.region_size(m), 85);
        }
    }

    #[test]
    fn symmetric_rejects_other_server_counts() {
        let err = Topology::build_symmetric(4, 1, 1, 1, 0).unwrap_err();
        assert!(err.to_string().contains("build_custom"));
    }

    #[test]
    fn custom_single_server() {
        let t = Topology::build_custom(1, [(AreaType::new([0]).unwrap(), 85)].into(), 3).unwrap();
        assert_eq!(t.region_size(0), 85);
        check_invariants(&t);
    }

    #[test]
    fn custom_equals_symmetric() {
        let sizes: BTreeMap<AreaType, usize> = [
            (vec![0], 15),
            (vec![1], 15),
            (vec![2], 15),
            (vec![0, 1], 10),
            (vec![0, 2], 10),
            (vec![1, 2], 10),
            (vec![0, 1, 2], 10),
        ]
        .into_iter()
        .map(|(s, n)| (AreaType::new(s).unwrap(), n))
        .collect();
        assert_eq!(Topology::build_custom(3, sizes, 1).unwrap(), fig3());
    }

    #[test]
    fn custom_rejects_bad_types() {
        assert!(AreaType::new(Vec::<usize>::new()).is_err());
        let sizes = [(AreaType::new([0, 3]).unwrap(), 1)].into();
        assert!(Topology::build_custom(3, sizes, 0).is_err());
    }

    #[test]
    fn non_overlapping_regions_share_no_type() {
        let sizes = [
            (AreaType::new([0]).unwrap(), 5),
            (AreaType::new([1]).unwrap(), 5),
            (AreaType::new([0, 2]).unwrap(), 3),
        ]
        .into();
        let t = Topology::build_custom(3, sizes, 0).unwrap();
        assert!(!t.overlaps(0, 1));
        assert!(t.overlaps(0, 2));
    }

    #[test]
    fn doc_round_trip() {
        let t = fig3();
        let json = serde_json::to_string(&t.to_doc()).unwrap();
        assert!(json.contains("\"M\":3"));
        let back: TopologyDoc = serde_json::from_str(&json).unwrap();
        assert_eq!(Topology::from_doc(&back).unwrap(), t);
    }

    #[test]
    fn relocation_class_fractions() {
        let base = Topology::build_symmetric(3, 2000, 1000, 1000, 5).unwrap();
        let spec = MobilitySpec::uvw(0.5294, 0.3530, 0.1176).unwrap();
        let mut r = rng::stream(5, Purpose::Mobility, &[0]);
        let moved = base.relocate(&spec, &mut r).unwrap();
        check_invariants(&moved);
        let n = moved.num_clients() as f64;
        assert_eq!(n, 10_000.0);
        for (k, p) in [(1, 0.5294), (2, 0.3530), (3, 0.1176)] {
            let frac = moved.clients().iter().filter(|c| c.area.degree() == k).count() as f64 / n;
            assert!((frac - p).abs() <= 0.02, "class {k}: {frac} vs {p}");
        }
    }

    #[test]
    fn relocation_degenerate_and_deterministic() {
        let base = fig3();
        let spec = MobilitySpec::uvw(0.0, 0.0, 1.0).unwrap();
        let moved = base.relocate(&spec, &mut rng::stream(1, Purpose::Mobility, &[0])).unwrap();
        assert!(moved.clients().iter().all(|c| c.area.degree() == 3));
        assert_eq!(moved.type_members(&AreaType::new([0, 1, 2]).unwrap()).len(), 85);

        let spec = MobilitySpec::uvw(0.5294, 0.3530, 0.1176).unwrap();
        let a = base.relocate(&spec, &mut rng::stream(1, Purpose::Mobility, &[4])).unwrap();
        let b = base.relocate(&spec, &mut rng::stream(1, Purpose::Mobility, &[4])).unwrap();
        assert_eq!(a.canonical_json(), b.canonical_json());
    }

    #[test]
    fn relocation_requires_declared_class() {
        let base = Topology::build_custom(3, [(AreaType::new([0, 1, 2]).unwrap(), 85)].into(), 1).unwrap();
        let spec = MobilitySpec::uvw(0.5, 0.0, 0.5).unwrap();
        assert!(base.relocate(&spec, &mut rng::stream(1, Purpose::Mobility, &[0])).is_err());
    }

    #[test]
    fn mobility_spec_must_sum_to_one() {
        assert!(MobilitySpec::uvw(0.5, 0.2, 0.2).is_err());
    }

    #[test]
    fn exclusive_keeps_lowest_server() {
        let t = fig3().exclusive();
        assert_eq!(t.region_size(0), 45);
        assert_eq!(t.region_size(1), 25);
        assert_eq!(t.region_size(2), 15);
        assert!(t.clients().iter().all(|c| c.area.degree() == 1));
    }

    #[test]
    fn build_is_deterministic() {
        assert_eq!(fig3().canonical_json(), fig3().canonical_json());
        let other = Topology::build_symmetric(3, 15, 10, 10, 2).unwrap();
        assert_ne!(fig3().canonical_json(), other.canonical_json());
    }
}
