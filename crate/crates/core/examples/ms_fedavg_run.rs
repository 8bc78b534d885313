//! Train the symmetric preset and print the loss curve every 20 rounds.

use msfed::config;
use msfed::experiment::{self, RunOptions};

fn main() -> msfed::Result<()> {
    let mut cfg = config::preset("symmetric-fig3")?;
    cfg.engine.rounds = 100;
    let (result, summary) = experiment::execute(&cfg, RunOptions::default())?;
    for r in result.records.iter().step_by(20) {
        println!("round {:>3}: loss {:.4}  acc {:.3}  |grad|^2 {:.2e}", r.t, r.global_loss, r.global_acc, r.grad_norm_sq);
    }
    println!("final accuracy {:.3}, rounds to loss {:?}: {:?}", summary.final_accuracy, summary.target_loss, summary.rounds_to_target_loss);
    println!("L_hat = {:.3}", summary.l_hat);
    Ok(())
}
