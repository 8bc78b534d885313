//! Wireless transmission latency per round for multi-server, single-server,
//! hierarchical (HFL) and clustered (CFL) federated learning.
//!
//! Link model: path loss `128.1 + 37.6 log10(d_km)` dB, optional unit-mean
//! exponential (Rayleigh power) fading, Shannon spectral efficiency
//! `log2(1 + p |g|^2 / noise)`. A transfer of `q` bits over bandwidth `b`
//! takes `q / (b r)` seconds, and a round lasts as long as the slowest
//! upload plus the slowest download. Local computation time is ignored.

use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::participation::ParticipationPlan;
use crate::rng::{self, Purpose};
use crate::topology::Topology;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fading {
    Deterministic,
    Rayleigh,
}

/// Whether bandwidth entries are budgets shared by the transmitting clients
/// or already per-client channel widths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthUnits {
    Total,
    PerClient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyParams {
    /// Client to regional server bandwidth, Hz.
    pub b_cr: f64,
    /// Regional server to cloud bandwidth, Hz.
    pub b_rc: f64,
    /// Client to cloud bandwidth, Hz.
    pub b_cc: f64,
    pub uplink_power_dbm: f64,
    pub downlink_power_dbm: f64,
    pub noise_dbm: f64,
    /// Payload per transfer in bits; defaults to 32 bits per model parameter.
    #[serde(default)]
    pub model_bits: Option<f64>,
    pub fading: Fading,
    #[serde(default = "default_units")]
    pub bandwidth_units: BandwidthUnits,
    /// Regional server to cloud distance used by the HFL global round.
    #[serde(default = "default_server_cloud_km")]
    pub server_cloud_km: f64,
}

fn default_units() -> BandwidthUnits {
    BandwidthUnits::Total
}

fn default_server_cloud_km() -> f64 {
    3.0
}

impl Default for LatencyParams {
    fn default() -> Self {
        Self {
            b_cr: 475e6,
            b_rc: 850e6,
            b_cc: 150e6,
            uplink_power_dbm: 23.0,
            downlink_power_dbm: 23.0,
            noise_dbm: -107.0,
            model_bits: None,
            fading: Fading::Rayleigh,
            bandwidth_units: BandwidthUnits::Total,
            server_cloud_km: default_server_cloud_km(),
        }
    }
}

impl LatencyParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("b_cr", self.b_cr), ("b_rc", self.b_rc), ("b_cc", self.b_cc)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Latency(format!("{name} must be positive")));
            }
        }
        if let Some(q) = self.model_bits {
            if !(q > 0.0 && q.is_finite()) {
                return Err(Error::Latency("model_bits must be positive".into()));
            }
        }
        if !(self.server_cloud_km > 0.0) {
            return Err(Error::Latency("server_cloud_km must be positive".into()));
        }
        Ok(())
    }

    /// Payload in bits for a model with `num_params` single-precision entries.
    pub fn payload_bits(&self, num_params: usize) -> f64 {
        self.model_bits.unwrap_or(32.0 * num_params as f64)
    }

    fn per_client(&self, total: f64, transmitting: usize) -> f64 {
        match self.bandwidth_units {
            BandwidthUnits::Total => total / transmitting.max(1) as f64,
            BandwidthUnits::PerClient => total,
        }
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn path_loss_db(d_km: f64) -> Result<f64> {
    if !(d_km > 0.0) {
        return Err(Error::Latency(format!("distance must be positive, got {d_km}")));
    }
    Ok(128.1 + 37.6 * d_km.log10())
}

/// Spectral efficiency in bits/s/Hz for a linear SNR.
pub fn spectral_efficiency(snr: f64) -> f64 {
    (1.0 + snr).log2()
}

/// `log2(1 + p |g|^2 / noise)` with `|g|^2 = 10^(-PL/10) * fading`.
pub fn link_rate(p_dbm: f64, d_km: f64, noise_dbm: f64, fading: f64) -> Result<f64> {
    let gain = 10f64.powf(-path_loss_db(d_km)? / 10.0) * fading;
    Ok(spectral_efficiency(dbm_to_mw(p_dbm) * gain / dbm_to_mw(noise_dbm)))
}

/// Seconds to move `bits` over `bandwidth_hz` at `rate` bits/s/Hz.
pub fn transfer_time(bits: f64, bandwidth_hz: f64, rate: f64) -> f64 {
    bits / (bandwidth_hz * rate)
}

/// Slowest upload plus slowest download.
pub fn round_time_from_rates(bits: f64, bandwidth_hz: f64, up_rates: &[f64], down_rates: &[f64]) -> Result<f64> {
    if up_rates.is_empty() || down_rates.is_empty() {
        return Err(Error::Latency("a round needs at least one upload and one download".into()));
    }
    let slowest = |rates: &[f64]| rates.iter().map(|&r| transfer_time(bits, bandwidth_hz, r)).fold(0.0, f64::max);
    Ok(slowest(up_rates) + slowest(down_rates))
}

#[derive(Clone, Copy, Debug)]
#[repr(u64)]
enum Link {
    ClientRegional = 1,
    ClientCloud = 2,
    ServerCloud = 3,
}

/// Latency evaluator bound to a payload size and fading seed.
#[derive(Clone, Debug)]
pub struct LatencyModel {
    pub params: LatencyParams,
    pub bits: f64,
    pub seed: u64,
}

impl LatencyModel {
    pub fn new(params: LatencyParams, num_params: usize, seed: u64) -> Result<Self> {
        params.validate()?;
        let bits = params.payload_bits(num_params);
        Ok(Self { params, bits, seed })
    }

    fn fading(&self, round: usize, link: Link, a: usize, b: usize, downlink: bool) -> f64 {
        match self.params.fading {
            Fading::Deterministic => 1.0,
            Fading::Rayleigh => {
                let keys = [round as u64, link as u64, a as u64, b as u64, downlink as u64];
                let mut r = rng::stream(self.seed, Purpose::Fading, &keys);
                // A zero draw would make the transfer time infinite.
                let x: f64 = Exp1.sample(&mut r);
                x.max(f64::MIN_POSITIVE)
            }
        }
    }

    fn rate(&self, round: usize, link: Link, a: usize, b: usize, downlink: bool, d_km: f64) -> Result<f64> {
        let p = if downlink { self.params.downlink_power_dbm } else { self.params.uplink_power_dbm };
        link_rate(p, d_km, self.params.noise_dbm, self.fading(round, link, a, b, downlink))
    }

    /// Multi-server round: uploads go to every sampling server; every
    /// participant downloads from each server it can reach.
    pub fn round_multi(&self, topo: &Topology, plan: &ParticipationPlan) -> Result<f64> {
        let participants = plan.distinct_clients();
        if participants.is_empty() {
            return Err(Error::Latency("empty participation plan".into()));
        }
        let b = self.params.per_client(self.params.b_cr, participants.len());
        let mut up = Vec::new();
        for s in &plan.servers {
            let mut ids = s.clients.clone();
            ids.dedup();
            for i in ids {
                let d = topo.client(i).dist_regional[&s.server];
                up.push(self.rate(plan.round, Link::ClientRegional, i, s.server, false, d)?);
            }
        }
        let mut down = Vec::new();
        for &i in &participants {
            for (&m, &d) in &topo.client(i).dist_regional {
                down.push(self.rate(plan.round, Link::ClientRegional, i, m, true, d)?);
            }
        }
        round_time_from_rates(self.bits, b, &up, &down)
    }

    /// Single-server round: participants talk to the cloud directly.
    pub fn round_single(&self, topo: &Topology, plan: &ParticipationPlan) -> Result<f64> {
        let participants = plan.distinct_clients();
        if participants.is_empty() {
            return Err(Error::Latency("empty participation plan".into()));
        }
        let b = self.params.per_client(self.params.b_cc, participants.len());
        let mut up = Vec::with_capacity(participants.len());
        let mut down = Vec::with_capacity(participants.len());
        for &i in &participants {
            let d = topo.client(i).dist_cloud;
            up.push(self.rate(plan.round, Link::ClientCloud, i, 0, false, d)?);
            down.push(self.rate(plan.round, Link::ClientCloud, i, 0, true, d)?);
        }
        round_time_from_rates(self.bits, b, &up, &down)
    }

    /// HFL global aggregation: every regional server exchanges with the cloud.
    pub fn round_hfl_global(&self, num_servers: usize, round: usize) -> Result<f64> {
        let b = self.params.per_client(self.params.b_rc, num_servers);
        let d = self.params.server_cloud_km;
        let mut up = Vec::with_capacity(num_servers);
        let mut down = Vec::with_capacity(num_servers);
        for m in 0..num_servers {
            up.push(self.rate(round, Link::ServerCloud, m, 0, false, d)?);
            down.push(self.rate(round, Link::ServerCloud, m, 0, true, d)?);
        }
        round_time_from_rates(self.bits, b, &up, &down)
    }
}

/// True when a global (cloud) aggregation follows regional round `t` (0-based).
pub fn is_global_round(t: usize, period: usize) -> bool {
    period > 0 && (t + 1).is_multiple_of(period)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HflLatency {
    pub regional: Vec<f64>,
    /// `(round, seconds)` for each cloud aggregation.
    pub global: Vec<(usize, f64)>,
    pub total: f64,
}

/// Regional rounds plus a cloud aggregation after every `period` rounds.
pub fn total_latency_hfl(model: &LatencyModel, num_servers: usize, regional: &[f64], period: usize) -> Result<HflLatency> {
    if period == 0 {
        return Err(Error::Latency("HFL period must be at least 1".into()));
    }
    let mut global = Vec::new();
    for t in 0..regional.len() {
        if is_global_round(t, period) {
            global.push((t, model.round_hfl_global(num_servers, t)?));
        }
    }
    let total = regional.iter().sum::<f64>() + global.iter().map(|g| g.1).sum::<f64>();
    Ok(HflLatency { regional: regional.to_vec(), global, total })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CflConfig {
    /// Re-cluster after every this many rounds.
    pub recluster_every: usize,
    /// Re-clustering cost as a fraction of that round's latency.
    pub cluster_cost_fraction: f64,
}

impl Default for CflConfig {
    fn default() -> Self {
        Self { recluster_every: 5, cluster_cost_fraction: 1.0 / 20.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CflLatency {
    pub rounds: Vec<f64>,
    pub cluster: Vec<(usize, f64)>,
    pub total: f64,
}

pub fn total_latency_cfl(rounds: &[f64], cfg: &CflConfig) -> Result<CflLatency> {
    if cfg.recluster_every == 0 {
        return Err(Error::Latency("recluster_every must be at least 1".into()));
    }
    if !(cfg.cluster_cost_fraction >= 0.0) {
        return Err(Error::Latency("cluster_cost_fraction must be non-negative".into()));
    }
    let cluster: Vec<(usize, f64)> = rounds
        .iter()
        .enumerate()
        .filter(|(t, _)| is_global_round(*t, cfg.recluster_every))
        .map(|(t, &tau)| (t, cfg.cluster_cost_fraction * tau))
        .collect();
    let total = rounds.iter().sum::<f64>() + cluster.iter().map(|c| c.1).sum::<f64>();
    Ok(CflLatency { rounds: rounds.to_vec(), cluster, total })
}

/// Per-architecture per-round latencies and totals over the same plans.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub multi: Vec<f64>,
    pub single: Vec<f64>,
    pub hfl: HflLatency,
    pub cfl: CflLatency,
    pub total_multi: f64,
    pub total_single: f64,
    pub total_hfl: f64,
    pub total_cfl: f64,
}

impl LatencyBreakdown {
    /// CSV with one row per architecture: `architecture,rounds,total_s,mean_round_s`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("architecture,rounds,total_s,mean_round_s\n");
        let rows = [
            ("multi", self.multi.len(), self.total_multi),
            ("single", self.single.len(), self.total_single),
            ("hfl", self.hfl.regional.len(), self.total_hfl),
            ("cfl", self.cfl.rounds.len(), self.total_cfl),
        ];
        for (name, n, total) in rows {
            out.push_str(&format!("{name},{n},{total},{}\n", total / n.max(1) as f64));
        }
        out
    }
}

/// Compare architectures round by round.
///
/// `plans` drive the multi-server, single-server and CFL rounds; `hfl_plans`
/// are plans over the exclusive (one server per client) topology.
pub fn compare_architectures(
    model: &LatencyModel,
    topo: &Topology,
    plans: &[ParticipationPlan],
    hfl_topo: &Topology,
    hfl_plans: &[ParticipationPlan],
    hfl_period: usize,
    cfl: &CflConfig,
) -> Result<LatencyBreakdown> {
    let multi = plans.iter().map(|p| model.round_multi(topo, p)).collect::<Result<Vec<_>>>()?;
    let single = plans.iter().map(|p| model.round_single(topo, p)).collect::<Result<Vec<_>>>()?;
    let regional = hfl_plans.iter().map(|p| model.round_multi(hfl_topo, p)).collect::<Result<Vec<_>>>()?;
    let hfl = total_latency_hfl(model, topo.num_servers(), &regional, hfl_period)?;
    let cfl = total_latency_cfl(&multi, cfl)?;
    Ok(LatencyBreakdown {
        total_multi: multi.iter().sum(),
        total_single: single.iter().sum(),
        total_hfl: hfl.total,
        total_cfl: cfl.total,
        multi,
        single,
        hfl,
        cfl,
    })
}
