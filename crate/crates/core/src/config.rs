//! Run configuration and the shipped presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::DataGenSpec;
use crate::engine::{AggregationMode, Architecture, EngineConfig};
use crate::error::{Error, Result};
use crate::latency::{CflConfig, LatencyParams};
use crate::model::ModelSpec;
use crate::participation::{BiasSpec, Scheme, Strategy};
use crate::theory::EstimationConfig;
use crate::topology::{AreaType, MobilitySpec, Topology, TypeCount};

/// How to build the topology.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builder", rename_all = "snake_case")]
pub enum TopologySpec {
    Symmetric { num_servers: usize, u: usize, v: usize, w: usize },
    Custom { num_servers: usize, types: Vec<TypeCount> },
}

impl TopologySpec {
    pub fn build(&self, seed: u64) -> Result<Topology> {
        match self {
            TopologySpec::Symmetric { num_servers, u, v, w } => Topology::build_symmetric(*num_servers, *u, *v, *w, seed),
            TopologySpec::Custom { num_servers, types } => {
                let mut sizes = std::collections::BTreeMap::new();
                for t in types {
                    let area = AreaType::new(t.servers.iter().copied())?;
                    if sizes.insert(area.clone(), t.count).is_some() {
                        return Err(Error::Topology(format!("area type {area} listed twice")));
                    }
                }
                Topology::build_custom(*num_servers, sizes, seed)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryConfig {
    /// The unspecified constant `c` of the bounds.
    pub c: f64,
    pub estimation: EstimationConfig,
    /// Iteration cap for the centralized optimum used as `f*` on convex models.
    pub centralized_iters: usize,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self { c: 1.0, estimation: EstimationConfig::default(), centralized_iters: 20_000 }
    }
}

/// Loss / accuracy levels for the rounds-to-target metrics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    #[serde(default)]
    pub loss: Option<f64>,
    #[serde(default)]
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub name: String,
    pub seed: u64,
    #[serde(default = "default_architecture")]
    pub architecture: Architecture,
    pub topology: TopologySpec,
    pub data: DataGenSpec,
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    pub model: ModelSpec,
    pub engine: EngineConfig,
    #[serde(default)]
    pub latency: LatencyParams,
    #[serde(default)]
    pub cfl: CflConfig,
    #[serde(default)]
    pub theory: TheoryConfig,
    #[serde(default)]
    pub targets: Targets,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_architecture() -> Architecture {
    Architecture::MultiServer
}

fn default_eval_samples() -> usize {
    1000
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Cross-checks that need the built topology.
    pub fn validate(&self, topo: &Topology) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.engine.validate()?;
        self.latency.validate()?;
        if self.model.shape.input_dim != self.data.feature_dim || self.model.shape.classes != self.data.classes {
            return Err(Error::Config(format!(
                "model expects {} features / {} classes, data has {} / {}",
                self.model.shape.input_dim, self.model.shape.classes, self.data.feature_dim, self.data.classes
            )));
        }
        if self.eval_samples == 0 {
            return Err(Error::Config("eval_samples must be positive".into()));
        }
        if !(self.theory.c > 0.0) {
            return Err(Error::Config("theory.c must be positive".into()));
        }
        match &self.engine.strategy {
            Strategy::Biased { quotas, scheme } => {
                if self.architecture != Architecture::MultiServer {
                    return Err(Error::Config("biased participation needs the multi-server architecture".into()));
                }
                if self.engine.mobility.is_some() {
                    return Err(Error::Config("biased quotas are fixed per type and cannot follow mobility".into()));
                }
                BiasSpec::resolve(topo, quotas)?.validate(topo, *scheme, None)?;
            }
            Strategy::Unbiased { clients_per_server, scheme } => {
                if *clients_per_server == 0 {
                    return Err(Error::Config("clients_per_server must be positive".into()));
                }
                if *scheme == Scheme::II && self.engine.mobility.is_none() && self.architecture == Architecture::MultiServer {
                    if let Some(m) = (0..topo.num_servers()).find(|&m| topo.region_size(m) < *clients_per_server) {
                        return Err(Error::Config(format!(
                            "server {m} covers {} clients, fewer than K_m = {clients_per_server} under scheme II",
                            topo.region_size(m)
                        )));
                    }
                }
            }
            Strategy::Full => {}
        }
        Ok(())
    }
}

pub const PRESETS: [&str; 6] = ["symmetric-fig3", "all-overlap-wN", "asymmetric-fig8", "single-server", "hfl-baseline", "mobility"];

fn fig3() -> TopologySpec {
    TopologySpec::Symmetric { num_servers: 3, u: 15, v: 10, w: 10 }
}

fn base(name: &str, topology: TopologySpec) -> RunConfig {
    let data = DataGenSpec::default();
    let mut engine = EngineConfig::new(1.0, 0.1, 1, 200, 16, Strategy::Full);
    engine.mode = AggregationMode::Displacement;
    RunConfig {
        name: name.into(),
        seed: 7,
        architecture: Architecture::MultiServer,
        topology,
        model: ModelSpec::logistic(data.feature_dim, data.classes),
        data,
        eval_samples: 1000,
        engine,
        latency: LatencyParams::default(),
        cfl: CflConfig::default(),
        theory: TheoryConfig::default(),
        targets: Targets { loss: Some(1.0), accuracy: Some(0.65) },
        out_dir: None,
    }
}

/// Asymmetric three-server layout with 85 clients: unequal regions and
/// unequal overlaps.
pub fn asymmetric_layout() -> TopologySpec {
    let t = |servers: &[usize], count| TypeCount { servers: servers.to_vec(), count };
    TopologySpec::Custom {
        num_servers: 3,
        types: vec![
            t(&[0], 25),
            t(&[1], 15),
            t(&[2], 10),
            t(&[0, 1], 12),
            t(&[0, 2], 8),
            t(&[1, 2], 5),
            t(&[0, 1, 2], 10),
        ],
    }
}

/// Build a shipped preset by name.
pub fn preset(name: &str) -> Result<RunConfig> {
    let cfg = match name {
        "symmetric-fig3" => base(name, fig3()),
        "all-overlap-wN" => {
            let mut c = base(name, TopologySpec::Symmetric { num_servers: 3, u: 0, v: 0, w: 85 });
            c.engine.rounds = 50;
            c
        }
        "asymmetric-fig8" => base(name, asymmetric_layout()),
        "single-server" => {
            let mut c = base(name, fig3());
            c.architecture = Architecture::SingleServer;
            c
        }
        "hfl-baseline" => {
            let mut c = base(name, fig3());
            c.architecture = Architecture::Hfl;
            c.engine.hfl_period = 5;
            c
        }
        "mobility" => {
            let mut c = base(name, fig3());
            c.engine.mobility = Some(MobilitySpec::uvw(0.5294, 0.3530, 0.1176)?);
            c
        }
        other => {
            return Err(Error::Config(format!("unknown preset `{other}`; available: {}", PRESETS.join(", "))));
        }
    };
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_and_validate() {
        for name in PRESETS {
            let cfg = preset(name).unwrap();
            let back = RunConfig::from_json(&cfg.to_json()).unwrap();
            assert_eq!(back, cfg, "{name}");
            let topo = cfg.topology.build(cfg.seed).unwrap();
            cfg.validate(&topo).unwrap();
            assert_eq!(topo.num_clients(), 85, "{name}");
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn defaults_fill_optional_sections() {
        let mut v: serde_json::Value = serde_json::from_str(&preset("symmetric-fig3").unwrap().to_json()).unwrap();
        let obj = v.as_object_mut().unwrap();
        for k in ["architecture", "latency", "cfl", "theory", "targets", "out_dir", "eval_samples"] {
            obj.remove(k);
        }
        let cfg = RunConfig::from_json(&v.to_string()).unwrap();
        assert_eq!(cfg.latency, LatencyParams::default());
        assert_eq!(cfg.architecture, Architecture::MultiServer);
    }

    #[test]
    fn mismatched_model_rejected() {
        let mut cfg = preset("symmetric-fig3").unwrap();
        cfg.model = ModelSpec::logistic(5, 10);
        let topo = cfg.topology.build(cfg.seed).unwrap();
        assert!(cfg.validate(&topo).is_err());
    }

    #[test]
    fn scheme_ii_oversampling_rejected() {
        let mut cfg = preset("symmetric-fig3").unwrap();
        cfg.engine.strategy = Strategy::Unbiased { clients_per_server: 46, scheme: Scheme::II };
        let topo = cfg.topology.build(cfg.seed).unwrap();
        assert!(cfg.validate(&topo).is_err());
    }

    #[test]
    fn asymmetric_layout_is_asymmetric() {
        let topo = asymmetric_layout().build(0).unwrap();
        let sizes: Vec<usize> = (0..3).map(|m| topo.region_size(m)).collect();
        assert_eq!(sizes, vec![55, 42, 33]);
    }
}
