//! Estimate the assumption constants and evaluate the convergence bound.

use msfed::config;
use msfed::experiment::{self, RunOptions};
use msfed::participation::{Scheme, Strategy};

fn main() -> msfed::Result<()> {
    let mut cfg = config::preset("symmetric-fig3")?;
    cfg.engine.rounds = 100;
    cfg.engine.strategy = Strategy::Unbiased { clients_per_server: 10, scheme: Scheme::II };
    let (_, summary) = experiment::execute(&cfg, RunOptions::default())?;
    for f in &summary.conditions {
        println!("{}", f.describe());
    }
    let b = summary.bound.expect("multi-server runs carry a bound");
    println!("{}: L = {:.3}, sigma^2 = {:?}", b.label, b.estimates.l_hat, b.estimates.sigma_sq);
    println!("f0 = {:.4}, f* = {:.4} ({})", b.f0, b.f_star, b.f_star_source);
    println!("vanishing term {:.4e}, Psi {:.4e}, bound {:.4e}", b.vanishing_term, b.psi.total, b.bound);
    for (c, v) in &b.sensitivity {
        println!("  c = {c}: {v:.4e}");
    }
    println!("min observed |grad f|^2 = {:?}, within bound: {:?}", b.observed_min_grad_norm_sq, b.observed_within_bound);
    Ok(())
}
