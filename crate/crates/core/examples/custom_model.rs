//! Building a model in code: a two-dimensional flocking system where each
//! particle is pulled towards the population mean and steered by the control.

use std::sync::Arc;

use relaxctl::{simulate, ActionGrid, MeanField, ModelSpec, Scheme, SimConfig, SlidingControl, TimeGrid};

fn main() -> relaxctl::Result<()> {
    let model = ModelSpec::builder("flocking", 2, 2)
        .x0(vec![1.0, -1.0])
        .state_box(-5.0, 5.0)
        .drift(|_, x, y, a, out| {
            for c in 0..2 {
                out[c] = (y[c] - x[c]) + a[c];
            }
        })
        .diffusion(|_, _, _, _, out| {
            out.fill(0.0);
            out[0] = 0.3;
            out[3] = 0.3;
        })
        .mean_field(MeanField::Varphi, |x, out| out.copy_from_slice(x))
        .running_cost(|_, x, y, a| {
            let spread: f64 = x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum();
            spread + 0.1 * a.iter().map(|v| v * v).sum::<f64>()
        })
        .build()?;
    let grid = Arc::new(ActionGrid::new(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, -1.0]])?);
    let mu = SlidingControl::uniform(grid, TimeGrid::new(1.0, 100)?)?;
    let ens = simulate(&model, &mu, Scheme::MartingaleMeasure, &SimConfig::new(2_000, 4))?;
    let k = mu.time().steps();
    println!("mean state at T: {:?}", ens.mean_state(k));
    println!("variance at T:   {:?}", ens.variance_state(k));
    Ok(())
}
