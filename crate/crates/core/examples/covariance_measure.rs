//! The orthogonal martingale measure behind a sliding control: its quadratic
//! variation on `[0, t] x B` is the covariance measure `int_0^t mu_s(B) ds`.

use std::sync::Arc;

use relaxctl::{lookup_model, qv_estimate, simulate_relaxed, ActionGrid, SimConfig, SlidingControl, TimeGrid};

fn main() -> relaxctl::Result<()> {
    let model = lookup_model("diffusion_counterexample")?;
    let grid = Arc::new(ActionGrid::scalar(&[-1.0, 0.0, 1.0])?);
    let time = TimeGrid::new(1.0, 200)?;
    let mu = SlidingControl::from_fn(grid, time, |t| vec![0.5 * t, 0.5, 0.5 - 0.5 * t])?;
    let (_, driver) = simulate_relaxed(&model, &mu, &SimConfig::new(20_000, 1))?;

    for (label, subset) in [("{-1}", vec![0]), ("{0}", vec![1]), ("{1}", vec![2]), ("{-1,0,1}", vec![0, 1, 2])] {
        for t in [0.5, 1.0] {
            let expected: f64 = (0..time.index_of(t)?)
                .map(|k| time.dt() * subset.iter().map(|&i| mu.row(k)[i]).sum::<f64>())
                .sum();
            let q = qv_estimate(&driver, &mu, &subset, t)?;
            println!("B = {label:<9} t = {t}: {:.5} +- {:.5} (covariance measure {expected:.5})", q.mean, q.stderr);
        }
    }
    Ok(())
}
