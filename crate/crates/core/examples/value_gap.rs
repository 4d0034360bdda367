//! Strict vs. relaxed infimum on the Rademacher problem: the best constant
//! strict control stays away from zero while chattering the optimal relaxed
//! control closes the gap.

use std::sync::Arc;

use relaxctl::{lookup_model, value_gap, ActionGrid, SimConfig, TimeGrid, ValueGapConfig};

fn main() -> relaxctl::Result<()> {
    let model = lookup_model("rademacher_ode")?;
    let grid = Arc::new(ActionGrid::scalar(&[-1.0, 1.0])?);
    let rep = value_gap(&model, grid, TimeGrid::new(1.0, 128)?, &ValueGapConfig::default(), &SimConfig::new(1, 0))?;
    println!("best strict  J = {:.5} {:?}", rep.strict.best_cost.mean, rep.strict.best_block_weights);
    println!("best relaxed J = {:.5} {:?}", rep.relaxed.best_cost.mean, rep.relaxed.best_block_weights);
    println!("gap = {:.5}", rep.gap.mean);
    for row in &rep.bridge {
        println!("chatter n = {:<3} J = {:.3e}", row.n, row.cost.mean);
    }
    Ok(())
}
