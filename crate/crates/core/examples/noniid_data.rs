//! Dirichlet label skew: per-client label entropy as alpha varies.

use msfed::datagen::{generate, DataGenSpec};
use msfed::topology::Topology;

fn main() -> msfed::Result<()> {
    let topo = Topology::build_symmetric(3, 15, 10, 10, 1)?;
    for alpha in [0.1, 0.4, 10.0] {
        let spec = DataGenSpec { dirichlet_alpha: alpha, ..DataGenSpec::default() };
        let data = generate(&spec, &topo, 1)?;
        let mean_entropy = data.iter().map(|d| d.label_entropy(spec.classes)).sum::<f64>() / data.len() as f64;
        println!("alpha {alpha:>5}: mean label entropy {mean_entropy:.3} nats (max {:.3})", (spec.classes as f64).ln());
        println!("  client 0 label counts {:?}", data[0].label_counts(spec.classes));
    }
    Ok(())
}
