//! Full, unbiased (schemes I/II) and biased participation on one round.

use std::collections::BTreeMap;

use msfed::participation::{self, QuotaSpec, Scheme, Strategy};
use msfed::topology::Topology;

fn main() -> msfed::Result<()> {
    let topo = Topology::build_symmetric(3, 15, 10, 10, 2)?;
    let strategies = [
        Strategy::Full,
        Strategy::Unbiased { clients_per_server: 10, scheme: Scheme::I },
        Strategy::Unbiased { clients_per_server: 10, scheme: Scheme::II },
        Strategy::Biased { quotas: QuotaSpec::ByDegree(BTreeMap::from([(1, 4), (2, 4), (3, 2)])), scheme: Scheme::II },
    ];
    for s in &strategies {
        let plan = participation::sample(&topo, s, 2, 0)?;
        println!("{}: {} distinct participants", s.tag(), plan.distinct_clients().len());
        let server0 = &plan.servers[0];
        for (area, k) in &server0.per_type {
            println!("  server 0, area {area}: {k}");
        }
    }
    Ok(())
}
