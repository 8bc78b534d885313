//! Compare analytic gradients with central differences for both model kinds.

use msfed::datagen::{generate_client, DataGenSpec};
use msfed::model::{self, ModelSpec};

fn main() -> msfed::Result<()> {
    let spec = DataGenSpec { classes: 4, feature_dim: 8, samples_per_client: 32, ..DataGenSpec::default() };
    let batch = generate_client(&spec, 3, 0);
    for ms in [ModelSpec::logistic(8, 4), ModelSpec::mlp(8, 4, 6)] {
        let w = ms.init(5);
        let g = model::grad(&w, &batch)?;
        let h = 1e-5;
        let mut worst = 0.0f64;
        for j in (0..w.len()).step_by(7) {
            let (mut p, mut m) = (w.clone(), w.clone());
            p.values[j] += h;
            m.values[j] -= h;
            let fd = (model::loss(&p, &batch)? - model::loss(&m, &batch)?) / (2.0 * h);
            worst = worst.max((fd - g.values[j]).abs() / fd.abs().max(g.values[j].abs()).max(1e-8));
        }
        println!("{:?}: {} params, worst relative error {worst:.2e}", ms.shape.kind, w.len());
    }
    Ok(())
}
