//! Sweep the number of local epochs and write the merged CSV.

use msfed::config;
use msfed::experiment::{self, RunOptions};

fn main() -> msfed::Result<()> {
    let mut cfg = config::preset("symmetric-fig3")?;
    cfg.engine.rounds = 60;
    cfg.engine.eta_l = 0.05;
    let out = std::env::temp_dir().join("msfed-sweep-example");
    let runs = experiment::cmd_sweep(&cfg, "epochs", &[1.0, 2.0, 5.0], &out, RunOptions::default())?;
    for s in &runs {
        println!("rounds to loss 1.0: {:?}, final loss {:.4}", s.rounds_to_target_loss, s.final_loss.unwrap_or(f64::NAN));
    }
    println!("merged results in {}", out.join("sweep.csv").display());
    Ok(())
}
