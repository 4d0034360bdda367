//! Mean-variance portfolio selection with a mean-field variance penalty,
//! optimized over constant allocations and compared with the exact value
//! among deterministic allocations.

use std::sync::Arc;

use relaxctl::{grid_search, mean_variance, ActionGrid, MeanVarianceParams, SimConfig, TimeGrid};

fn main() -> relaxctl::Result<()> {
    let p = MeanVarianceParams::default();
    let model = mean_variance(p)?;
    let grid = Arc::new(ActionGrid::linspace(0.0, 1.5, 21)?);
    let time = TimeGrid::new(p.horizon, 128)?;
    let report = grid_search(&model, grid.clone(), time, 1, 1, &SimConfig::new(20_000, 13))?;
    let best = report.best_block_weights[0].iter().position(|&w| w == 1.0).unwrap();

    let theta = (p.appreciation - p.rate) / p.volatility;
    let exact = -p.x0 * (p.rate * p.horizon).exp() - theta * theta * p.horizon / (4.0 * p.penalty);
    println!("best constant allocation: {}", grid.atom(best)[0]);
    println!("J = {:.5} +- {:.5}, deterministic-allocation optimum {exact:.5}", report.best_cost.mean, report.best_cost.stderr);
    Ok(())
}
