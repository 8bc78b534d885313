//! MS-FedAvg versus hierarchical FL and a single server on the same data.

use msfed::config;
use msfed::engine::Architecture;
use msfed::experiment::{self, RunOptions};

fn main() -> msfed::Result<()> {
    for arch in [Architecture::MultiServer, Architecture::Hfl, Architecture::SingleServer] {
        let mut cfg = config::preset("symmetric-fig3")?;
        cfg.engine.rounds = 80;
        cfg.architecture = arch;
        let (_, s) = experiment::execute(&cfg, RunOptions::default())?;
        println!(
            "{arch:?}: loss {:.4}, accuracy {:.3}, rounds to loss 1.0 {:?}, total latency {:.3} s",
            s.final_loss.unwrap_or(f64::NAN),
            s.final_accuracy,
            s.rounds_to_target_loss,
            s.cumulative_latency_s
        );
    }
    Ok(())
}
