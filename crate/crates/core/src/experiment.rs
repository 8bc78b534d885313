//! End-to-end commands: run, latency comparison, parameter sweeps and
//! topology summaries. Each writes plain CSV / JSON into an output directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::datagen::{self, ClientDataset};
use crate::engine::{self, Architecture, RunResult, Simulation};
use crate::error::{Error, Result};
use crate::latency::{self, LatencyBreakdown, LatencyModel};
use crate::model::{self, ModelKind};
use crate::participation::{self, Scheme, Strategy};
use crate::theory::{self, AssumptionEstimates, BoundReport, ConditionFlag, Regime, ESTIMATE_LABEL};
use crate::topology::Topology;

/// Built inputs shared by every command.
pub struct Prepared {
    pub topology: Topology,
    pub data: Vec<ClientDataset>,
    pub eval: ClientDataset,
    pub latency: LatencyModel,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let topology = cfg.topology.build(cfg.seed)?;
    cfg.validate(&topology)?;
    let data = datagen::generate(&cfg.data, &topology, cfg.seed)?;
    let eval = datagen::global_eval_set(&cfg.data, cfg.eval_samples, cfg.seed)?;
    let latency = LatencyModel::new(cfg.latency.clone(), cfg.model.shape.num_params(), cfg.seed)?;
    Ok(Prepared { topology, data, eval, latency })
}

/// Topology the chosen architecture actually trains on.
fn architecture_topology(topo: &Topology, arch: Architecture) -> Topology {
    match arch {
        Architecture::MultiServer => topo.clone(),
        Architecture::Hfl => topo.exclusive(),
        Architecture::SingleServer => topo.merged_single_server(),
    }
}

/// Learning-rate preconditions for `cfg`, using an `L` probe on the data.
pub fn check_learning_rate(cfg: &RunConfig, prep: &Prepared) -> Result<(f64, Vec<ConditionFlag>)> {
    let l_hat = theory::estimate_lipschitz(&cfg.model, &prep.data, cfg.seed, &cfg.theory.estimation)?;
    let topo = architecture_topology(&prep.topology, cfg.architecture);
    let zero = AssumptionEstimates {
        label: ESTIMATE_LABEL.into(),
        l_hat,
        sigma_sq: vec![0.0; topo.num_servers()],
        alpha_sq: vec![Default::default(); topo.num_servers()],
    };
    let inputs = theory::bound_inputs(&topo, &cfg.engine.strategy, &zero, &cfg.engine, cfg.theory.c)?;
    Ok((l_hat, theory::validate_lr(Regime::of(&cfg.engine.strategy), &inputs)))
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Report violated learning-rate conditions as warnings instead of failing.
    pub allow_unsafe_lr: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    pub architecture: Architecture,
    pub strategy: String,
    pub mode: String,
    pub rounds: usize,
    pub final_loss: Option<f64>,
    pub final_accuracy: f64,
    pub final_grad_norm_sq: Option<f64>,
    pub target_loss: Option<f64>,
    pub rounds_to_target_loss: Option<usize>,
    pub target_accuracy: Option<f64>,
    pub rounds_to_target_accuracy: Option<usize>,
    pub cumulative_latency_s: f64,
    pub l_hat: f64,
    pub conditions: Vec<ConditionFlag>,
    pub warnings: Vec<String>,
    pub bound: Option<BoundReport>,
}

/// Run a configuration in memory.
pub fn execute(cfg: &RunConfig, opts: RunOptions) -> Result<(RunResult, RunSummary)> {
    let prep = prepare(cfg)?;
    execute_prepared(cfg, &prep, opts)
}

pub fn execute_prepared(cfg: &RunConfig, prep: &Prepared, opts: RunOptions) -> Result<(RunResult, RunSummary)> {
    let (l_hat, conditions) = check_learning_rate(cfg, prep)?;
    let mut warnings = Vec::new();
    if let Some(v) = theory::first_violation(&conditions) {
        if !opts.allow_unsafe_lr {
            return Err(Error::UnsafeLearningRate(v.describe()));
        }
        for f in conditions.iter().filter(|f| f.gating && !f.holds) {
            warnings.push(f.describe());
        }
    }
    let multi = cfg.architecture == Architecture::MultiServer;
    let sim = Simulation {
        topology: &prep.topology,
        data: &prep.data,
        eval: &prep.eval,
        model: &cfg.model,
        config: &cfg.engine,
        latency: Some(&prep.latency),
        seed: cfg.seed,
        trace_rounds: if multi { cfg.theory.estimation.max_trace_rounds } else { 0 },
    };
    let result = sim.run_architecture(cfg.architecture)?;
    let bound = if multi && !result.records.is_empty() {
        Some(bound_report(cfg, prep, &result)?)
    } else {
        None
    };
    let last = result.records.last();
    let summary = RunSummary {
        name: cfg.name.clone(),
        seed: cfg.seed,
        architecture: cfg.architecture,
        strategy: cfg.engine.strategy.tag(),
        mode: cfg.engine.mode.name().into(),
        rounds: result.records.len(),
        final_loss: last.map(|r| r.global_loss),
        final_accuracy: model::accuracy(&result.final_model, &prep.eval),
        final_grad_norm_sq: last.map(|r| r.grad_norm_sq),
        target_loss: cfg.targets.loss,
        rounds_to_target_loss: cfg.targets.loss.and_then(|t| engine::rounds_to_loss(&result.records, t)),
        target_accuracy: cfg.targets.accuracy,
        rounds_to_target_accuracy: cfg.targets.accuracy.and_then(|t| engine::rounds_to_accuracy(&result.records, t)),
        cumulative_latency_s: last.map(|r| r.cumulative_latency_s).unwrap_or(0.0),
        l_hat,
        conditions,
        warnings,
        bound,
    };
    Ok((result, summary))
}

fn bound_report(cfg: &RunConfig, prep: &Prepared, result: &RunResult) -> Result<BoundReport> {
    let trace = result.trace.as_deref().unwrap_or(&[]);
    let estimates =
        theory::estimate_assumptions(trace, &prep.data, &cfg.model, &cfg.engine, cfg.seed, &cfg.theory.estimation)?;
    let (f0, _) = model::mean_loss_and_grad(&result.initial, &prep.data)?;
    let best_observed = result.records.iter().map(|r| r.global_loss).fold(f64::INFINITY, f64::min);
    let (f_star, source) = match cfg.model.shape.kind {
        ModelKind::Logistic => {
            let lr = 1.0 / estimates.l_hat.max(f64::MIN_POSITIVE);
            let (_, f) = theory::centralized_descent(&result.initial, &prep.data, lr, cfg.theory.centralized_iters, 1e-20)?;
            (f.min(best_observed), "centralized full-batch optimum")
        }
        ModelKind::Mlp => (best_observed, "best observed loss (non-convex model)"),
    };
    let observed = result.records.iter().map(|r| r.grad_norm_sq).fold(f64::INFINITY, f64::min);
    let inputs = theory::bound_inputs(&prep.topology, &cfg.engine.strategy, &estimates, &cfg.engine, cfg.theory.c)?;
    theory::evaluate_bound(Regime::of(&cfg.engine.strategy), &inputs, estimates, f0, f_star, source, Some(observed))
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents)?;
    Ok(())
}

/// Run and write `config.json`, `rounds.csv`, `summary.json` and `seed.txt`.
pub fn cmd_run(cfg: &RunConfig, out: &Path, opts: RunOptions) -> Result<RunSummary> {
    let (result, summary) = execute(cfg, opts)?;
    fs::create_dir_all(out)?;
    let servers = result.final_state.models.len();
    write(out.join("config.json"), cfg.to_json())?;
    write(out.join("rounds.csv"), engine::records_to_csv(&result.records, servers))?;
    write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    write(out.join("seed.txt"), format!("{}\n", cfg.seed))?;
    Ok(summary)
}

/// Latency of every architecture over the configured number of rounds,
/// written as `latency.json` and `latency.csv`.
pub fn cmd_latency(cfg: &RunConfig, out: &Path) -> Result<LatencyBreakdown> {
    let prep = prepare(cfg)?;
    let breakdown = latency_breakdown(cfg, &prep)?;
    fs::create_dir_all(out)?;
    write(out.join("latency.json"), serde_json::to_string_pretty(&breakdown)?)?;
    write(out.join("latency.csv"), breakdown.to_csv())?;
    Ok(breakdown)
}

pub fn latency_breakdown(cfg: &RunConfig, prep: &Prepared) -> Result<LatencyBreakdown> {
    let strategy = &cfg.engine.strategy;
    let mut plans = Vec::with_capacity(cfg.engine.rounds);
    let mut topos = Vec::with_capacity(cfg.engine.rounds);
    for t in 0..cfg.engine.rounds {
        let topo = match &cfg.engine.mobility {
            Some(spec) => prep.topology.relocate(spec, &mut crate::rng::stream(cfg.seed, crate::rng::Purpose::Mobility, &[t as u64]))?,
            None => prep.topology.clone(),
        };
        plans.push(participation::sample(&topo, strategy, cfg.seed, t)?);
        topos.push(topo);
    }
    if cfg.engine.mobility.is_some() {
        // Per-round topologies: assemble the comparison round by round.
        let mut multi = Vec::new();
        let mut single = Vec::new();
        let mut regional = Vec::new();
        for (t, (topo, plan)) in topos.iter().zip(&plans).enumerate() {
            multi.push(prep.latency.round_multi(topo, plan)?);
            single.push(prep.latency.round_single(topo, plan)?);
            let ex = topo.exclusive();
            regional.push(prep.latency.round_multi(&ex, &participation::sample_allow_idle(&ex, strategy, cfg.seed, t)?)?);
        }
        let hfl = latency::total_latency_hfl(&prep.latency, prep.topology.num_servers(), &regional, cfg.engine.hfl_period)?;
        let cfl = latency::total_latency_cfl(&multi, &cfg.cfl)?;
        return Ok(LatencyBreakdown {
            total_multi: multi.iter().sum(),
            total_single: single.iter().sum(),
            total_hfl: hfl.total,
            total_cfl: cfl.total,
            multi,
            single,
            hfl,
            cfl,
        });
    }
    let ex = prep.topology.exclusive();
    let hfl_plans = (0..cfg.engine.rounds)
        .map(|t| participation::sample_allow_idle(&ex, strategy, cfg.seed, t))
        .collect::<Result<Vec<_>>>()?;
    latency::compare_architectures(&prep.latency, &prep.topology, &plans, &ex, &hfl_plans, cfg.engine.hfl_period, &cfg.cfl)
}

/// Parameters a sweep can vary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    /// Clients sampled per server (switches full participation to unbiased scheme II).
    ClientsPerServer,
    Epochs,
    /// Client to regional server bandwidth `b_cr` in Hz.
    Bandwidth,
    EtaL,
    EtaG,
    BatchSize,
    Rounds,
    DirichletAlpha,
    HflPeriod,
    Seed,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "k_m" | "clients_per_server" => SweepAxis::ClientsPerServer,
            "e" | "epochs" => SweepAxis::Epochs,
            "bandwidth" | "b_cr" => SweepAxis::Bandwidth,
            "eta_l" => SweepAxis::EtaL,
            "eta_g" => SweepAxis::EtaG,
            "batch_size" => SweepAxis::BatchSize,
            "rounds" | "t" => SweepAxis::Rounds,
            "dirichlet_alpha" => SweepAxis::DirichletAlpha,
            "hfl_period" => SweepAxis::HflPeriod,
            "seed" => SweepAxis::Seed,
            other => {
                return Err(Error::Config(format!(
                    "unknown sweep axis `{other}`; use k_m, epochs, bandwidth, eta_l, eta_g, batch_size, rounds, dirichlet_alpha, hfl_period or seed"
                )))
            }
        })
    }
}

fn as_count(axis: SweepAxis, v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v.is_finite() {
        Ok(v as usize)
    } else {
        Err(Error::Config(format!("{axis:?} needs positive integer values, got {v}")))
    }
}

/// Copy of `cfg` with one parameter replaced.
pub fn apply_axis(cfg: &RunConfig, axis: SweepAxis, v: f64) -> Result<RunConfig> {
    if !v.is_finite() {
        return Err(Error::Config(format!("non-finite sweep value {v}")));
    }
    let mut c = cfg.clone();
    match axis {
        SweepAxis::ClientsPerServer => {
            let k = as_count(axis, v)?;
            c.engine.strategy = match &cfg.engine.strategy {
                Strategy::Full => Strategy::Unbiased { clients_per_server: k, scheme: Scheme::II },
                Strategy::Unbiased { scheme, .. } => Strategy::Unbiased { clients_per_server: k, scheme: *scheme },
                Strategy::Biased { .. } => {
                    return Err(Error::Config("k_m sweeps need full or unbiased participation".into()));
                }
            };
        }
        SweepAxis::Epochs => c.engine.epochs = as_count(axis, v)?,
        SweepAxis::Bandwidth => {
            if v <= 0.0 {
                return Err(Error::Config("bandwidth must be positive".into()));
            }
            c.latency.b_cr = v;
        }
        SweepAxis::EtaL => c.engine.eta_l = v,
        SweepAxis::EtaG => c.engine.eta_g = v,
        SweepAxis::BatchSize => c.engine.batch_size = as_count(axis, v)?,
        SweepAxis::Rounds => c.engine.rounds = as_count(axis, v)?,
        SweepAxis::DirichletAlpha => c.data.dirichlet_alpha = v,
        SweepAxis::HflPeriod => c.engine.hfl_period = as_count(axis, v)?,
        SweepAxis::Seed => {
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::Config(format!("seed must be a non-negative integer, got {v}")));
            }
            c.seed = v as u64;
        }
    }
    c.name = format!("{}-{}", cfg.name, fmt_value(v));
    Ok(c)
}

fn fmt_value(v: f64) -> String {
    format!("{v}")
}

/// One run per value with the shared seed. Each run gets its own
/// subdirectory; `sweep.csv` merges the per-round rows and
/// `sweep_summary.csv` has one line per value.
pub fn cmd_sweep(cfg: &RunConfig, axis: &str, values: &[f64], out: &Path, opts: RunOptions) -> Result<Vec<RunSummary>> {
    let parsed: SweepAxis = axis.parse()?;
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let configs = values.iter().map(|&v| apply_axis(cfg, parsed, v)).collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out)?;
    let mut merged = String::new();
    let mut table = String::from(
        "axis,value,final_loss,final_accuracy,rounds_to_target_loss,rounds_to_target_accuracy,cumulative_latency_s\n",
    );
    let mut summaries = Vec::with_capacity(values.len());
    for (c, &v) in configs.iter().zip(values) {
        let dir = out.join(format!("{axis}={}", fmt_value(v)));
        let summary = cmd_run(c, &dir, opts)?;
        let csv = fs::read_to_string(dir.join("rounds.csv"))?;
        let mut lines = csv.lines();
        let header = lines.next().unwrap_or_default();
        if merged.is_empty() {
            merged.push_str(&format!("axis,value,{header}\n"));
        }
        for line in lines {
            merged.push_str(&format!("{axis},{},{line}\n", fmt_value(v)));
        }
        let opt = |x: Option<usize>| x.map(|n| n.to_string()).unwrap_or_default();
        table.push_str(&format!(
            "{axis},{},{},{},{},{},{}\n",
            fmt_value(v),
            summary.final_loss.map(|l| l.to_string()).unwrap_or_default(),
            summary.final_accuracy,
            opt(summary.rounds_to_target_loss),
            opt(summary.rounds_to_target_accuracy),
            summary.cumulative_latency_s
        ));
        summaries.push(summary);
    }
    write(out.join("sweep.csv"), merged)?;
    write(out.join("sweep_summary.csv"), table)?;
    Ok(summaries)
}

/// Human-readable topology summary.
pub fn cmd_topo(cfg: &RunConfig) -> Result<String> {
    let topo = cfg.topology.build(cfg.seed)?;
    Ok(topo.summary())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::preset;

    fn quick(name: &str) -> RunConfig {
        let mut c = preset(name).unwrap();
        c.engine.rounds = 3;
        c.eval_samples = 50;
        c.theory.estimation.max_trace_rounds = 2;
        c.theory.centralized_iters = 50;
        c
    }

    #[test]
    fn run_writes_all_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let s = cmd_run(&quick("symmetric-fig3"), dir.path(), RunOptions::default()).unwrap();
        for f in ["config.json", "rounds.csv", "summary.json", "seed.txt"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let csv = fs::read_to_string(dir.path().join("rounds.csv")).unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert!(s.bound.is_some());
    }

    #[test]
    fn unsafe_rate_is_rejected_unless_allowed() {
        let mut c = quick("symmetric-fig3");
        c.engine.eta_l = 5.0;
        match execute(&c, RunOptions::default()) {
            Err(Error::UnsafeLearningRate(msg)) => assert!(msg.contains("lemma1"), "{msg}"),
            other => panic!("expected rejection, got {:?}", other.map(|r| r.1)),
        }
        let (_, s) = execute(&c, RunOptions { allow_unsafe_lr: true }).unwrap();
        assert!(!s.warnings.is_empty());
    }

    #[test]
    fn sweep_axes() {
        let c = quick("symmetric-fig3");
        let k = apply_axis(&c, "k_m".parse().unwrap(), 10.0).unwrap();
        assert_eq!(k.engine.strategy, Strategy::Unbiased { clients_per_server: 10, scheme: Scheme::II });
        assert!(apply_axis(&c, SweepAxis::Epochs, 1.5).is_err());
        assert!("wat".parse::<SweepAxis>().is_err());
    }

    #[test]
    fn topo_summary_mentions_counts() {
        let s = cmd_topo(&quick("symmetric-fig3")).unwrap();
        assert!(s.contains("clients N = 85"));
        assert!(s.contains("N_m = 45"));
        assert!(s.contains("area types = 7"));
    }

    #[test]
    fn latency_compares_architectures() {
        let dir = tempfile::tempdir().unwrap();
        let b = cmd_latency(&quick("hfl-baseline"), dir.path()).unwrap();
        assert_eq!(b.multi.len(), 3);
        assert!(b.total_multi > 0.0 && b.total_single > 0.0);
        assert!(dir.path().join("latency.csv").exists());
    }
}
