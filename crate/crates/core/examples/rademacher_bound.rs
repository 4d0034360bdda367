//! Rademacher controls on `dx = u dt`, `J(u) = int x^2 dt`: the strict
//! sequence drives the cost to zero although no strict control attains it.

use std::sync::Arc;

use relaxctl::{embed_strict, estimate_cost, lookup_model, rademacher_control, simulate_strict};
use relaxctl::{ActionGrid, SimConfig, TimeGrid};

fn main() -> relaxctl::Result<()> {
    let model = lookup_model("rademacher_ode")?;
    let grid = Arc::new(ActionGrid::scalar(&[-1.0, 1.0])?);
    println!("{:>4} {:>14} {:>14} {:>14}", "n", "sup|X|", "J(u_n)", "1/n^2");
    for n in [1usize, 2, 4, 8, 16, 32, 64] {
        let time = TimeGrid::new(1.0, 64 * n)?;
        let u = rademacher_control(grid.clone(), n, time)?;
        let ens = simulate_strict(&model, &u, &SimConfig::new(1, 0))?;
        let j = estimate_cost(&model, &ens, &embed_strict(&u)?)?;
        println!(
            "{n:>4} {:>14.6e} {:>14.6e} {:>14.6e}",
            ens.sup_sq()[0].sqrt(),
            j.mean,
            1.0 / (n * n) as f64
        );
    }
    Ok(())
}
