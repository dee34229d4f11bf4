//! Solves the reference inventory instance and prints `x, v*, a*, T*`.

use std::time::Instant;

use jumpobs::engine::value_iteration_with;
use jumpobs::inventory::InventoryModel;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let margin = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(30);
    let model = InventoryModel::reference(margin)?;
    let p = model.params.clone();
    let start = Instant::now();
    let (v, policy) = value_iteration_with(&model, p.initial_values(jumpobs::engine::ObservationMdp::window(&model)), p.eps_vi, 500, |k, r| {
        eprintln!("iter {k:3} residual {r:.3e} ({:.1?})", start.elapsed())
    })?;
    println!("x,v_star,a_star,T_star");
    for (x, c) in policy.iter() {
        println!("{x},{:.6},{:.4},{:.4}", v.get(x).unwrap(), c.action, c.interval);
    }
    let ratios: Vec<f64> = v.residual_history.windows(2).map(|w| w[1] / w[0]).collect();
    eprintln!("max ratio {:.8}", ratios.iter().copied().fold(0.0, f64::max));
    Ok(())
}
