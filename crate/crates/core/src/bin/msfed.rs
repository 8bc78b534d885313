use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use msfed::config::{self, RunConfig};
use msfed::engine::AggregationMode;
use msfed::experiment::{self, RunOptions};

#[derive(Parser)]
#[command(name = "msfed", version, about = "Multi-server federated averaging simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and write rounds.csv, summary.json, config.json and seed.txt.
    Run(Common),
    /// Compare per-round latency of multi-server, single-server, HFL and CFL.
    Latency(Common),
    /// One run per value of a parameter, merged into sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// k_m, epochs, bandwidth, eta_l, eta_g, batch_size, rounds, dirichlet_alpha, hfl_period or seed.
        #[arg(long)]
        axis: String,
        /// Comma-separated values, e.g. 1,5,10,20.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Print per-type counts and region sizes.
    Topo(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration: symmetric-fig3, all-overlap-wN, asymmetric-fig8,
    /// single-server, hfl-baseline, mobility.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: runs/<config name>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Warn instead of failing when a learning-rate condition is violated.
    #[arg(long)]
    allow_unsafe_lr: bool,
    #[arg(long, value_parser = ["literal", "displacement", "delta"])]
    mode: Option<String>,
}

impl Common {
    fn load(&self) -> msfed::Result<RunConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(name)) => config::preset(name)?,
            (None, None) => config::preset("symmetric-fig3")?,
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(mode) = &self.mode {
            cfg.engine.mode = mode.parse::<AggregationMode>()?;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = Some(out.clone());
        }
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &RunConfig) -> PathBuf {
        cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name))
    }

    fn options(&self) -> RunOptions {
        RunOptions { allow_unsafe_lr: self.allow_unsafe_lr }
    }
}

fn run(cli: Cli) -> msfed::Result<()> {
    match cli.command {
        Command::Run(c) => {
            let cfg = c.load()?;
            let out = c.out_dir(&cfg);
            let s = experiment::cmd_run(&cfg, &out, c.options())?;
            for w in &s.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "{}: {} rounds, final loss {}, accuracy {:.4}, latency {:.4} s -> {}",
                s.name,
                s.rounds,
                s.final_loss.map(|l| format!("{l:.6}")).unwrap_or_else(|| "n/a".into()),
                s.final_accuracy,
                s.cumulative_latency_s,
                out.display()
            );
        }
        Command::Latency(c) => {
            let cfg = c.load()?;
            let out = c.out_dir(&cfg);
            let b = experiment::cmd_latency(&cfg, &out)?;
            print!("{}", b.to_csv());
        }
        Command::Sweep { common, axis, values } => {
            let cfg = common.load()?;
            let out = common.out_dir(&cfg);
            let runs = experiment::cmd_sweep(&cfg, &axis, &values, &out, common.options())?;
            println!("{} runs -> {}", runs.len(), out.join("sweep.csv").display());
        }
        Command::Topo(c) => {
            let cfg = c.load()?;
            print!("{}", experiment::cmd_topo(&cfg)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
