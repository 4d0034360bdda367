//! Recovering the optimal relaxed control (delta_{-1} + delta_1) / 2 of the
//! Rademacher problem by lattice search and coordinate descent.

use std::sync::Arc;

use relaxctl::{coordinate_descent, grid_search, lookup_model};
use relaxctl::{ActionGrid, DescentConfig, SimConfig, SlidingControl, TimeGrid};

fn main() -> relaxctl::Result<()> {
    let model = lookup_model("rademacher_ode")?;
    let grid = Arc::new(ActionGrid::scalar(&[-1.0, 1.0])?);
    let time = TimeGrid::new(1.0, 100)?;
    let cfg = SimConfig::new(1, 0);

    let gs = grid_search(&model, grid.clone(), time, 4, 1, &cfg)?;
    for t in &gs.trace {
        println!("candidate {}: J = {:.5}", t.iteration, t.mean);
    }
    println!("grid search: {:?}, J = {:e}", gs.best_block_weights, gs.best_cost.mean);

    let init = SlidingControl::dirac(grid, time, 1)?;
    let cd = coordinate_descent(&model, &init, &DescentConfig { iterations: 50, step: 0.1, blocks: 2 }, &cfg)?;
    println!(
        "descent from Dirac(+1), 2 blocks: {:?}, J = {:e} after {} evaluations",
        cd.best_block_weights, cd.best_cost.mean, cd.budget
    );
    Ok(())
}
