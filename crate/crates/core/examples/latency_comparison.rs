//! Transmission time of multi-server, single-server, HFL and clustered FL.

use msfed::config;
use msfed::experiment;

fn main() -> msfed::Result<()> {
    let mut cfg = config::preset("symmetric-fig3")?;
    cfg.engine.rounds = 50;
    let prep = experiment::prepare(&cfg)?;
    let b = experiment::latency_breakdown(&cfg, &prep)?;
    print!("{}", b.to_csv());
    println!("HFL cloud syncs: {}", b.hfl.global.len());

    // More bandwidth, less time.
    cfg.latency.b_cr *= 4.0;
    let faster = experiment::latency_breakdown(&cfg, &experiment::prepare(&cfg)?)?;
    println!("multi-server total with 4x bandwidth: {:.4} s (was {:.4} s)", faster.total_multi, b.total_multi);
    Ok(())
}
