//! Round-by-round execution of multi-server federated averaging.
//!
//! Each round: every sampled client starts from the mean of the regional
//! models it can reach, runs `E` epochs of local SGD once (even when several
//! servers sampled it), and uploads to each server that sampled it. Servers
//! then aggregate their uploads. The final global model is the mean of the
//! regional models.
//!
//! Client training runs in parallel on independent keyed RNG streams;
//! aggregation is a sequential reduce in ascending client-id order, so
//! results do not depend on the thread count.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::ClientDataset;
use crate::error::{Error, Result};
use crate::latency::{self, LatencyModel};
use crate::model::{self, ModelSpec, ParamVector};
use crate::participation::{self, ParticipationPlan, Strategy};
use crate::rng::{self, Purpose};
use crate::topology::{AreaType, ClientId, MobilitySpec, ServerId, Topology};

/// How a server turns uploaded client models into its next regional model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// `w_m <- eta_g * mean_i w_i^E`
    Literal,
    /// `w_m <- w_m + eta_g * (mean_i w_i^E - w_m)`
    Displacement,
    /// `w_m <- w_m + eta_g * mean_i (w_i^E - w_i^0)`
    Delta,
}

impl AggregationMode {
    pub fn name(&self) -> &'static str {
        match self {
            AggregationMode::Literal => "literal",
            AggregationMode::Displacement => "displacement",
            AggregationMode::Delta => "delta",
        }
    }
}

impl std::str::FromStr for AggregationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(Self::Literal),
            "displacement" => Ok(Self::Displacement),
            "delta" => Ok(Self::Delta),
            other => Err(Error::Config(format!("unknown aggregation mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Regional (server-side) learning rate.
    pub eta_g: f64,
    /// Local (client-side) learning rate.
    pub eta_l: f64,
    /// Local epochs per round.
    pub epochs: usize,
    pub rounds: usize,
    pub batch_size: usize,
    #[serde(default = "default_mode")]
    pub mode: AggregationMode,
    pub strategy: Strategy,
    /// Cloud aggregation period of the hierarchical baseline.
    #[serde(default = "default_hfl_period")]
    pub hfl_period: usize,
    /// Relocate clients before every round when set.
    #[serde(default)]
    pub mobility: Option<MobilitySpec>,
}

fn default_mode() -> AggregationMode {
    AggregationMode::Displacement
}

fn default_hfl_period() -> usize {
    5
}

impl EngineConfig {
    pub fn new(eta_g: f64, eta_l: f64, epochs: usize, rounds: usize, batch_size: usize, strategy: Strategy) -> Self {
        Self {
            eta_g,
            eta_l,
            epochs,
            rounds,
            batch_size,
            mode: default_mode(),
            strategy,
            hfl_period: default_hfl_period(),
            mobility: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta_g > 0.0 && self.eta_g.is_finite()) {
            return Err(Error::Config("eta_g must be positive".into()));
        }
        if !(self.eta_l >= 0.0 && self.eta_l.is_finite()) {
            return Err(Error::Config("eta_l must be non-negative".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.hfl_period == 0 {
            return Err(Error::Config("hfl_period must be at least 1".into()));
        }
        if let Some(m) = &self.mobility {
            m.validate()?;
        }
        Ok(())
    }
}

/// Regional models `w_m^t` after `round` completed rounds.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionalState {
    pub round: usize,
    pub models: Vec<ParamVector>,
}

impl RegionalState {
    pub fn uniform(init: &ParamVector, num_servers: usize) -> Self {
        Self { round: 0, models: vec![init.clone(); num_servers] }
    }

    /// Mean of the regional models.
    pub fn global(&self) -> ParamVector {
        if self.models.windows(2).all(|w| w[0] == w[1]) {
            return self.models[0].clone();
        }
        ParamVector::mean(&self.models).expect("at least one server")
    }

    /// Largest coordinate-wise difference between any two regional models.
    pub fn max_pairwise_diff(&self) -> f64 {
        let mut worst = 0.0f64;
        for a in 0..self.models.len() {
            for b in a + 1..self.models.len() {
                worst = worst.max(self.models[a].max_abs_diff(&self.models[b]));
            }
        }
        worst
    }
}

/// Round-initial model of client `i`: mean of the regional models it reaches.
pub fn client_init(i: ClientId, state: &RegionalState, topo: &Topology) -> ParamVector {
    let servers = topo.client(i).area.servers();
    ParamVector::mean(servers.iter().map(|&m| &state.models[m])).expect("area types are non-empty")
}

/// One client's local training in one round.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientUpdate {
    pub client: ClientId,
    pub area: AreaType,
    /// Servers that sampled (and receive the upload of) this client.
    pub servers: Vec<ServerId>,
    pub start: ParamVector,
    pub end: ParamVector,
}

/// Everything a round produced besides the new state.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundOutcome {
    pub updates: Vec<ClientUpdate>,
    /// Aggregated upload count per server (multiset size).
    pub aggregated: Vec<usize>,
}

fn aggregate(current: &ParamVector, uploads: &[(&ParamVector, &ParamVector)], mode: AggregationMode, eta_g: f64) -> ParamVector {
    let n = uploads.len() as f64;
    match mode {
        AggregationMode::Literal => {
            let mut mean = ParamVector::mean(uploads.iter().map(|(_, end)| *end)).expect("non-empty");
            mean.scale(eta_g);
            mean
        }
        AggregationMode::Displacement => {
            let mean = ParamVector::mean(uploads.iter().map(|(_, end)| *end)).expect("non-empty");
            let mut next = current.clone();
            next.axpy(eta_g, &mean.sub(current));
            next
        }
        AggregationMode::Delta => {
            let mut delta = ParamVector::zeros(current.shape);
            for (start, end) in uploads {
                delta.axpy(1.0, &end.sub(start));
            }
            let mut next = current.clone();
            next.axpy(eta_g / n, &delta);
            next
        }
    }
}

/// Execute one round given this round's plans.
///
/// Servers with an empty plan are an error unless `allow_idle` is set, in
/// which case they keep their model.
pub fn run_round(
    state: &RegionalState,
    topo: &Topology,
    plan: &ParticipationPlan,
    data: &[ClientDataset],
    config: &EngineConfig,
    seed: u64,
    allow_idle: bool,
) -> Result<(RegionalState, RoundOutcome)> {
    if plan.servers.len() != topo.num_servers() || state.models.len() != topo.num_servers() {
        return Err(Error::Config("plan, state and topology disagree on the server count".into()));
    }
    if !allow_idle {
        if let Some(s) = plan.servers.iter().find(|s| s.clients.is_empty()) {
            return Err(Error::Participation(format!("server {} has an empty plan", s.server)));
        }
    }
    let round = state.round;
    let distinct = plan.distinct_clients();
    let updates: Vec<ClientUpdate> = distinct
        .par_iter()
        .map(|&i| {
            let start = client_init(i, state, topo);
            let mut r = rng::stream(seed, Purpose::Training, &[round as u64, i as u64]);
            let end = model::sgd_epochs(&start, &data[i], config.epochs, config.batch_size, config.eta_l, &mut r)?;
            Ok(ClientUpdate { client: i, area: topo.client(i).area.clone(), servers: plan.servers_of(i), start, end })
        })
        .collect::<Result<Vec<_>>>()?;
    let index: BTreeMap<ClientId, usize> = updates.iter().enumerate().map(|(k, u)| (u.client, k)).collect();

    let mut models = Vec::with_capacity(topo.num_servers());
    let mut aggregated = Vec::with_capacity(topo.num_servers());
    for s in &plan.servers {
        let current = &state.models[s.server];
        if s.clients.is_empty() {
            models.push(current.clone());
            aggregated.push(0);
            continue;
        }
        let uploads: Vec<(&ParamVector, &ParamVector)> = s
            .clients
            .iter()
            .map(|i| {
                let u = &updates[index[i]];
                (&u.start, &u.end)
            })
            .collect();
        models.push(aggregate(current, &uploads, config.mode, config.eta_g));
        aggregated.push(uploads.len());
    }
    Ok((RegionalState { round: round + 1, models }, RoundOutcome { updates, aggregated }))
}

/// Per-round metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// Rounds completed (1-based).
    pub t: usize,
    /// `f` at the mean of the regional models.
    pub global_loss: f64,
    pub global_acc: f64,
    /// `||grad f||^2` at the mean of the regional models.
    pub grad_norm_sq: f64,
    /// `||grad f_m(w_m)||^2` per server (zero for idle servers).
    pub region_grad_norm_sq: Vec<f64>,
    pub latency_s: f64,
    pub cumulative_latency_s: f64,
    pub participants: usize,
    pub aggregated: Vec<usize>,
    pub local_epochs: usize,
    /// Local SGD steps per participating client.
    pub local_steps: usize,
    pub strategy: String,
    pub mode: String,
}

/// Documented CSV header for `M` servers.
pub fn csv_header(num_servers: usize) -> String {
    let mut h = String::from("t,global_loss,global_acc,grad_norm_sq");
    for m in 0..num_servers {
        let _ = write!(h, ",region_{m}_grad_norm_sq");
    }
    h.push_str(",latency_s,cumulative_latency_s,participants,local_epochs,local_steps,strategy,mode");
    h
}

impl RoundRecord {
    pub fn csv_row(&self) -> String {
        let mut row = format!("{},{},{},{}", self.t, self.global_loss, self.global_acc, self.grad_norm_sq);
        for g in &self.region_grad_norm_sq {
            let _ = write!(row, ",{g}");
        }
        let _ = write!(
            row,
            ",{},{},{},{},{},{},{}",
            self.latency_s,
            self.cumulative_latency_s,
            self.participants,
            self.local_epochs,
            self.local_steps,
            self.strategy,
            self.mode
        );
        row
    }
}

pub fn records_to_csv(records: &[RoundRecord], num_servers: usize) -> String {
    let mut out = csv_header(num_servers);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Per-round snapshot kept for assumption estimation.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRound {
    pub round: usize,
    pub topology: Topology,
    pub regional_before: Vec<ParamVector>,
    pub regional_after: Vec<ParamVector>,
    pub updates: Vec<ClientUpdate>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub initial: ParamVector,
    pub final_model: ParamVector,
    pub final_state: RegionalState,
    pub records: Vec<RoundRecord>,
    pub trace: Option<Vec<TraceRound>>,
}

/// Which training architecture a run simulates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    MultiServer,
    Hfl,
    SingleServer,
}

/// Inputs shared by every round of a run.
pub struct Simulation<'a> {
    pub topology: &'a Topology,
    pub data: &'a [ClientDataset],
    pub eval: &'a ClientDataset,
    pub model: &'a ModelSpec,
    pub config: &'a EngineConfig,
    pub latency: Option<&'a LatencyModel>,
    pub seed: u64,
    /// Number of evenly spaced rounds to keep in the trace (0 disables it).
    pub trace_rounds: usize,
}

/// `count` evenly spaced indices in `0..total`, always including both ends.
pub fn evenly_spaced(total: usize, count: usize) -> Vec<usize> {
    if total == 0 || count == 0 {
        return Vec::new();
    }
    if count >= total {
        return (0..total).collect();
    }
    if count == 1 {
        return vec![total - 1];
    }
    let mut out: Vec<usize> = (0..count).map(|j| j * (total - 1) / (count - 1)).collect();
    out.dedup();
    out
}

impl<'a> Simulation<'a> {
    fn check(&self) -> Result<()> {
        self.config.validate()?;
        self.model.validate()?;
        if self.data.len() != self.topology.num_clients() {
            return Err(Error::Config(format!(
                "{} datasets for {} clients",
                self.data.len(),
                self.topology.num_clients()
            )));
        }
        Ok(())
    }

    /// Topology in force during `round` (relocated when mobility is on).
    pub fn topology_at(&self, round: usize) -> Result<Topology> {
        match &self.config.mobility {
            Some(spec) => self.topology.relocate(spec, &mut rng::stream(self.seed, Purpose::Mobility, &[round as u64])),
            None => Ok(self.topology.clone()),
        }
    }

    fn metrics(&self, state: &RegionalState, topo: &Topology) -> Result<(f64, f64, f64, Vec<f64>)> {
        let global = state.global();
        let (loss, grad) = model::mean_loss_and_grad(&global, self.data)?;
        let acc = model::accuracy(&global, self.eval);
        let regions = (0..topo.num_servers())
            .into_par_iter()
            .map(|m| {
                let members = topo.region(m);
                if members.is_empty() {
                    return Ok(0.0);
                }
                let (_, g) = model::mean_loss_and_grad(&state.models[m], members.iter().map(|&i| &self.data[i]))?;
                Ok(g.norm_sq())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((loss, acc, grad.norm_sq(), regions))
    }

    fn record(
        &self,
        state: &RegionalState,
        topo: &Topology,
        plan: &ParticipationPlan,
        outcome: &RoundOutcome,
        latency_s: f64,
        cumulative: f64,
    ) -> Result<RoundRecord> {
        let (global_loss, global_acc, grad_norm_sq, region_grad_norm_sq) = self.metrics(state, topo)?;
        let shard = self.data.first().map(ClientDataset::len).unwrap_or(0);
        Ok(RoundRecord {
            t: state.round,
            global_loss,
            global_acc,
            grad_norm_sq,
            region_grad_norm_sq,
            latency_s,
            cumulative_latency_s: cumulative,
            participants: plan.distinct_clients().len(),
            aggregated: outcome.aggregated.clone(),
            local_epochs: self.config.epochs,
            local_steps: self.config.epochs * model::steps_per_epoch(shard, self.config.batch_size),
            strategy: self.config.strategy.tag(),
            mode: self.config.mode.name().to_string(),
        })
    }

    /// Multi-server federated averaging for `config.rounds` rounds.
    pub fn run(&self) -> Result<RunResult> {
        self.check()?;
        let init = self.model.init(self.seed);
        let mut state = RegionalState::uniform(&init, self.topology.num_servers());
        let mut records = Vec::with_capacity(self.config.rounds);
        let traced = evenly_spaced(self.config.rounds, self.trace_rounds);
        let mut trace = (!traced.is_empty()).then(Vec::new);
        let mut cumulative = 0.0;
        for t in 0..self.config.rounds {
            let topo = self.topology_at(t)?;
            let plan = participation::sample(&topo, &self.config.strategy, self.seed, t)?;
            let (next, outcome) = run_round(&state, &topo, &plan, self.data, self.config, self.seed, false)?;
            let tau = match self.latency {
                Some(l) => l.round_multi(&topo, &plan)?,
                None => 0.0,
            };
            cumulative += tau;
            records.push(self.record(&next, &topo, &plan, &outcome, tau, cumulative)?);
            if let (Some(tr), true) = (trace.as_mut(), traced.binary_search(&t).is_ok()) {
                tr.push(TraceRound {
                    round: t,
                    topology: topo,
                    regional_before: state.models.clone(),
                    regional_after: next.models.clone(),
                    updates: outcome.updates,
                });
            }
            state = next;
        }
        Ok(RunResult { initial: init, final_model: state.global(), final_state: state, records, trace })
    }

    /// Hierarchical baseline: each client belongs to its lowest-id server,
    /// servers run FedAvg on their region, and every `hfl_period` rounds the
    /// cloud replaces all active regional models with their mean.
    pub fn run_hfl(&self) -> Result<RunResult> {
        self.check()?;
        let init = self.model.init(self.seed);
        let mut state = RegionalState::uniform(&init, self.topology.num_servers());
        let mut records = Vec::with_capacity(self.config.rounds);
        let mut cumulative = 0.0;
        let mut active: Vec<ServerId> = Vec::new();
        for t in 0..self.config.rounds {
            let topo = self.topology_at(t)?.exclusive();
            active = (0..topo.num_servers()).filter(|&m| topo.region_size(m) > 0).collect();
            let plan = participation::sample_allow_idle(&topo, &self.config.strategy, self.seed, t)?;
            let (mut next, outcome) = run_round(&state, &topo, &plan, self.data, self.config, self.seed, true)?;
            let mut tau = match self.latency {
                Some(l) => l.round_multi(&topo, &plan)?,
                None => 0.0,
            };
            if latency::is_global_round(t, self.config.hfl_period) {
                let cloud = ParamVector::mean(active.iter().map(|&m| &next.models[m])).expect("an active server");
                for m in &active {
                    next.models[*m] = cloud.clone();
                }
                if let Some(l) = self.latency {
                    tau += l.round_hfl_global(topo.num_servers(), t)?;
                }
            }
            cumulative += tau;
            records.push(self.record(&next, &topo, &plan, &outcome, tau, cumulative)?);
            state = next;
        }
        let final_model = if active.is_empty() {
            state.global()
        } else {
            ParamVector::mean(active.iter().map(|&m| &state.models[m])).expect("non-empty")
        };
        Ok(RunResult { initial: init, final_model, final_state: state, records, trace: None })
    }

    /// Single-server FedAvg over all clients, talking to the cloud.
    pub fn run_single_server(&self) -> Result<RunResult> {
        self.check()?;
        let init = self.model.init(self.seed);
        let mut state = RegionalState::uniform(&init, 1);
        let mut records = Vec::with_capacity(self.config.rounds);
        let mut cumulative = 0.0;
        let mut config = self.config.clone();
        if let Strategy::Biased { .. } = config.strategy {
            return Err(Error::Config("the single-server baseline has no area types to bias".into()));
        }
        config.mobility = None;
        for t in 0..self.config.rounds {
            let topo = self.topology_at(t)?.merged_single_server();
            let plan = participation::sample(&topo, &config.strategy, self.seed, t)?;
            let (next, outcome) = run_round(&state, &topo, &plan, self.data, &config, self.seed, false)?;
            let tau = match self.latency {
                Some(l) => l.round_single(&topo, &plan)?,
                None => 0.0,
            };
            cumulative += tau;
            records.push(self.record(&next, &topo, &plan, &outcome, tau, cumulative)?);
            state = next;
        }
        Ok(RunResult { initial: init, final_model: state.global(), final_state: state, records, trace: None })
    }

    pub fn run_architecture(&self, arch: Architecture) -> Result<RunResult> {
        match arch {
            Architecture::MultiServer => self.run(),
            Architecture::Hfl => self.run_hfl(),
            Architecture::SingleServer => self.run_single_server(),
        }
    }
}

/// First round (1-based) whose global loss is at or below `target`.
pub fn rounds_to_loss(records: &[RoundRecord], target: f64) -> Option<usize> {
    records.iter().find(|r| r.global_loss <= target).map(|r| r.t)
}

/// First round (1-based) whose accuracy reaches `target`.
pub fn rounds_to_accuracy(records: &[RoundRecord], target: f64) -> Option<usize> {
    records.iter().find(|r| r.global_acc >= target).map(|r| r.t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, global_eval_set, DataGenSpec};
    use crate::participation::{sample_full, Scheme};

    fn small_data(topo: &Topology, seed: u64) -> (Vec<ClientDataset>, ClientDataset) {
        let spec = DataGenSpec { classes: 4, feature_dim: 6, samples_per_client: 16, ..DataGenSpec::default() };
        (generate(&spec, topo, seed).unwrap(), global_eval_set(&spec, 50, seed).unwrap())
    }

    fn state_with(models: Vec<Vec<f64>>) -> RegionalState {
        let shape = crate::model::ModelShape { kind: crate::model::ModelKind::Logistic, input_dim: 1, classes: 1, hidden: 0 };
        RegionalState { round: 0, models: models.into_iter().map(|v| ParamVector { shape, values: v }).collect() }
    }

    #[test]
    fn client_init_averages_reachable_models() {
        let topo = Topology::build_symmetric(3, 1, 1, 1, 0).unwrap();
        let state = state_with(vec![vec![1.0, 3.0], vec![3.0, 5.0], vec![10.0, 10.0]]);
        for c in topo.clients() {
            let got = client_init(c.id, &state, &topo);
            match c.area.servers() {
                [m] => assert_eq!(got.values, state.models[*m].values),
                [0, 1] => assert_eq!(got.values, vec![2.0, 4.0]),
                _ => {}
            }
        }
        let same = state_with(vec![vec![0.5, -2.0]; 3]);
        for c in topo.clients() {
            assert_eq!(client_init(c.id, &same, &topo).values, vec![0.5, -2.0]);
        }
    }

    fn one_round(mode: AggregationMode, eta_g: f64, eta_l: f64, topo: &Topology) -> (RegionalState, RegionalState) {
        let (data, _) = small_data(topo, 2);
        let spec = ModelSpec::logistic(6, 4);
        let mut cfg = EngineConfig::new(eta_g, eta_l, 2, 1, 4, Strategy::Full);
        cfg.mode = mode;
        let mut state = RegionalState::uniform(&spec.init(1), topo.num_servers());
        // Distinct regional models so the modes can differ.
        for (m, w) in state.models.iter_mut().enumerate() {
            w.values[0] += m as f64 * 0.1;
        }
        let plan = sample_full(topo, 0);
        let (next, _) = run_round(&state, topo, &plan, &data, &cfg, 3, false).unwrap();
        (state, next)
    }

    #[test]
    fn displacement_and_literal_agree_at_unit_eta_g() {
        let topo = Topology::build_symmetric(3, 4, 2, 2, 0).unwrap();
        let (_, a) = one_round(AggregationMode::Displacement, 1.0, 0.1, &topo);
        let (_, b) = one_round(AggregationMode::Literal, 1.0, 0.1, &topo);
        for (x, y) in a.models.iter().zip(&b.models) {
            assert!(x.max_abs_diff(y) < 1e-12);
        }
    }

    #[test]
    fn modes_coincide_without_overlap() {
        let topo = Topology::build_symmetric(3, 5, 0, 0, 0).unwrap();
        let runs: Vec<_> = [AggregationMode::Literal, AggregationMode::Displacement, AggregationMode::Delta]
            .into_iter()
            .map(|m| one_round(m, 1.0, 0.1, &topo).1)
            .collect();
        for r in &runs[1..] {
            for (x, y) in r.models.iter().zip(&runs[0].models) {
                assert!(x.max_abs_diff(y) < 1e-12);
            }
        }
    }

    #[test]
    fn zero_local_rate_keeps_state_for_displacement_and_delta() {
        let topo = Topology::build_symmetric(3, 4, 0, 0, 0).unwrap();
        for mode in [AggregationMode::Displacement, AggregationMode::Delta] {
            let (before, after) = one_round(mode, 1.7, 0.0, &topo);
            for (x, y) in before.models.iter().zip(&after.models) {
                assert!(x.max_abs_diff(y) < 1e-15);
            }
        }
    }

    #[test]
    fn empty_plan_is_an_error() {
        let topo = Topology::build_symmetric(3, 2, 0, 0, 0).unwrap();
        let (data, _) = small_data(&topo, 0);
        let cfg = EngineConfig::new(1.0, 0.1, 1, 1, 4, Strategy::Full);
        let state = RegionalState::uniform(&ModelSpec::logistic(6, 4).init(0), 3);
        let mut plan = sample_full(&topo, 0);
        plan.servers[1].clients.clear();
        assert!(run_round(&state, &topo, &plan, &data, &cfg, 0, false).is_err());
        assert!(run_round(&state, &topo, &plan, &data, &cfg, 0, true).is_ok());
    }

    #[test]
    fn overlap_clients_train_once_and_upload_everywhere() {
        let topo = Topology::build_symmetric(3, 3, 2, 2, 1).unwrap();
        let (data, _) = small_data(&topo, 1);
        let cfg = EngineConfig::new(1.0, 0.1, 1, 1, 4, Strategy::Full);
        let state = RegionalState::uniform(&ModelSpec::logistic(6, 4).init(0), 3);
        let plan = sample_full(&topo, 0);
        let (_, outcome) = run_round(&state, &topo, &plan, &data, &cfg, 0, false).unwrap();
        assert_eq!(outcome.updates.len(), topo.num_clients());
        for u in &outcome.updates {
            assert_eq!(u.servers, topo.client(u.client).area.servers());
        }
        assert_eq!(outcome.aggregated, vec![topo.region_size(0); 3]);
    }

    #[test]
    fn zero_rounds_returns_initial_model() {
        let topo = Topology::build_symmetric(3, 2, 1, 1, 0).unwrap();
        let (data, eval) = small_data(&topo, 0);
        let spec = ModelSpec::logistic(6, 4);
        let cfg = EngineConfig::new(1.0, 0.1, 1, 0, 4, Strategy::Full);
        let sim = Simulation {
            topology: &topo,
            data: &data,
            eval: &eval,
            model: &spec,
            config: &cfg,
            latency: None,
            seed: 5,
            trace_rounds: 0,
        };
        let out = sim.run().unwrap();
        assert_eq!(out.final_model, spec.init(5));
        assert!(out.records.is_empty());
    }

    #[test]
    fn hfl_syncs_on_schedule() {
        let topo = Topology::build_symmetric(3, 4, 0, 0, 0).unwrap();
        let (data, eval) = small_data(&topo, 0);
        let spec = ModelSpec::logistic(6, 4);
        for rounds in 1..=10 {
            let cfg = EngineConfig::new(1.0, 0.1, 1, rounds, 4, Strategy::Full);
            let sim = Simulation {
                topology: &topo,
                data: &data,
                eval: &eval,
                model: &spec,
                config: &cfg,
                latency: None,
                seed: 5,
                trace_rounds: 0,
            };
            let diff = sim.run_hfl().unwrap().final_state.max_pairwise_diff();
            if rounds % 5 == 0 {
                assert_eq!(diff, 0.0, "rounds = {rounds}");
            } else {
                assert!(diff > 0.0, "rounds = {rounds}");
            }
        }
    }

    #[test]
    fn csv_header_matches_row_width() {
        let header = csv_header(3);
        let rec = RoundRecord {
            t: 1,
            global_loss: 1.0,
            global_acc: 0.5,
            grad_norm_sq: 0.1,
            region_grad_norm_sq: vec![0.1; 3],
            latency_s: 0.2,
            cumulative_latency_s: 0.2,
            participants: 10,
            aggregated: vec![10; 3],
            local_epochs: 1,
            local_steps: 4,
            strategy: "full".into(),
            mode: "displacement".into(),
        };
        assert_eq!(header.split(',').count(), rec.csv_row().split(',').count());
    }

    #[test]
    fn scheme_i_duplicates_aggregate_with_multiplicity() {
        let topo = Topology::build_custom(1, [(AreaType::new([0]).unwrap(), 3)].into(), 0).unwrap();
        let (data, _) = small_data(&topo, 0);
        let mut cfg = EngineConfig::new(1.0, 0.2, 1, 1, 16, Strategy::Unbiased { clients_per_server: 3, scheme: Scheme::I });
        cfg.mode = AggregationMode::Literal;
        let state = RegionalState::uniform(&ModelSpec::logistic(6, 4).init(0), 1);
        let mut plan = sample_full(&topo, 0);
        plan.servers[0].clients = vec![0, 0, 2];
        let (next, outcome) = run_round(&state, &topo, &plan, &data, &cfg, 0, false).unwrap();
        assert_eq!(outcome.updates.len(), 2);
        let e0 = &outcome.updates[0].end;
        let e2 = &outcome.updates[1].end;
        let expect = ParamVector::mean([e0, e0, e2]).unwrap();
        assert!(next.models[0].max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn evenly_spaced_indices() {
        assert_eq!(evenly_spaced(10, 3), vec![0, 4, 9]);
        assert_eq!(evenly_spaced(3, 5), vec![0, 1, 2]);
        assert_eq!(evenly_spaced(7, 1), vec![6]);
        assert!(evenly_spaced(0, 4).is_empty());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("delta".parse::<AggregationMode>().unwrap(), AggregationMode::Delta);
        assert!("nope".parse::<AggregationMode>().is_err());
    }
}
