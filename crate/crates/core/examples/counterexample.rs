//! `dx = u dW`: Rademacher controls, the naive average `sigma = E_mu[a] = 0`
//! and the martingale-measure dynamics under `mu = (delta_{-1} + delta_1) / 2`.
//!
//! `cargo run --release --example counterexample -- 100000` for the full size.

use std::sync::Arc;

use relaxctl::{lookup_model, rademacher_control, simulate, simulate_strict};
use relaxctl::{ActionGrid, Estimate, Scheme, SimConfig, SlidingControl, TimeGrid};

fn main() -> relaxctl::Result<()> {
    let particles = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let model = lookup_model("diffusion_counterexample")?;
    let grid = Arc::new(ActionGrid::scalar(&[-1.0, 1.0])?);
    let time = TimeGrid::new(1.0, 512)?;
    let cfg = SimConfig::new(particles, 7);
    let half = SlidingControl::uniform(grid.clone(), time)?;

    let naive = simulate(&model, &half, Scheme::Naive, &cfg)?;
    let relaxed = simulate(&model, &half, Scheme::MartingaleMeasure, &cfg)?;
    println!("E (X_T - x0)^2 with N = {particles}");
    for n in [1usize, 4, 16, 64] {
        let strict = simulate_strict(&model, &rademacher_control(grid.clone(), n, time)?, &cfg)?;
        let e = Estimate::from_samples(&strict.terminal_sq_displacement());
        println!("  strict Rademacher n = {n:<3} {:.4} +- {:.4}", e.mean, e.stderr);
    }
    let e = Estimate::from_samples(&relaxed.terminal_sq_displacement());
    println!("  martingale measure        {:.4} +- {:.4}", e.mean, e.stderr);
    let dev = naive.max_deviation().iter().copied().fold(0.0, f64::max);
    println!("  naive relaxation          max |X_t - x0| = {dev:e}");
    Ok(())
}
