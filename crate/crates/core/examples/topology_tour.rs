//! Build the symmetric and asymmetric three-server layouts and inspect them.

use msfed::config;
use msfed::topology::Topology;

fn main() -> msfed::Result<()> {
    let topo = Topology::build_symmetric(3, 15, 10, 10, 7)?;
    print!("{}", topo.summary());

    let c = topo.client(40);
    println!("client 40 is in area {} at {:.3} km from its servers", c.area, c.dist_regional.values().sum::<f64>() / c.dist_regional.len() as f64);
    println!("servers 0 and 1 overlap: {}", topo.overlaps(0, 1));

    let asym = config::asymmetric_layout().build(7)?;
    println!("\nasymmetric layout:");
    print!("{}", asym.summary());

    // A topology round-trips through its serialized document.
    let back = Topology::from_doc(&topo.to_doc())?;
    assert_eq!(back.canonical_json(), topo.canonical_json());
    Ok(())
}
