//! Clients relocating between rounds versus a static layout.

use msfed::config;
use msfed::experiment::{self, RunOptions};

fn main() -> msfed::Result<()> {
    for name in ["symmetric-fig3", "mobility"] {
        let mut cfg = config::preset(name)?;
        cfg.engine.rounds = 100;
        let (_, s) = experiment::execute(&cfg, RunOptions::default())?;
        println!(
            "{name}: final loss {:.4}, rounds to loss 1.0 {:?}, latency {:.3} s",
            s.final_loss.unwrap_or(f64::NAN),
            s.rounds_to_target_loss,
            s.cumulative_latency_s
        );
    }
    Ok(())
}
