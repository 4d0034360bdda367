//! Shrinking a 9-atom sliding control to at most d + d^2 + 2 atoms per step
//! with the same moments, then asking whether a strict control would do.

use std::sync::Arc;

use relaxctl::{extract_strict_if_convex, lookup_model, simulate_cost, simulate_relaxed, sliding_from_relaxed};
use relaxctl::{ActionGrid, Extraction, Scheme, SimConfig, SlidingControl, TimeGrid};

fn main() -> relaxctl::Result<()> {
    let model = lookup_model("diffusion_counterexample")?.with_terminal_cost(|x, _| x[0] * x[0]);
    let grid = Arc::new(ActionGrid::linspace(-1.0, 1.0, 9)?);
    let mu = SlidingControl::uniform(grid, TimeGrid::new(1.0, 32)?)?;
    let cfg = SimConfig::new(20_000, 3);
    let (ens, _) = simulate_relaxed(&model, &mu, &cfg)?;
    let (reduced, report) = sliding_from_relaxed(&model, &mu, &ens)?;
    println!("support per row: {} -> {}", report.support_before[0], report.support_after[0]);
    println!("row 0 weights: {:?}", reduced.row(0));
    println!("max moment residual: {:.2e}", report.max_moment_residual);
    let before = simulate_cost(&model, &mu, Scheme::MartingaleMeasure, &cfg)?;
    let after = simulate_cost(&model, &reduced, Scheme::MartingaleMeasure, &cfg)?;
    println!("J(mu) = {:.4} +- {:.4}, J(reduced) = {:.4} +- {:.4}", before.mean, before.stderr, after.mean, after.stderr);

    // The moment set {a^2 : a in grid} is not convex, so no single atom
    // reproduces E_mu[a^2] = 0.4167.
    match extract_strict_if_convex(&model, &mu, &ens)? {
        Extraction::Strict(u) => println!("strict control found: {:?}", &u.assignment()[..4]),
        Extraction::NotRepresentable { step, residual } => {
            println!("no strict control: step {step}, residual {residual:.3}")
        }
    }
    Ok(())
}
