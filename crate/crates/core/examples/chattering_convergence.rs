//! Chattered strict controls approach a sliding control in cost, on a model
//! with mean-field interaction. Writes the study table as CSV to stdout.

use std::sync::Arc;

use relaxctl::chattering::write_study_csv;
use relaxctl::{chatter_error, convergence_study, lookup_model, ActionGrid, SimConfig, SlidingControl, TimeGrid};

fn main() -> relaxctl::Result<()> {
    let model = lookup_model("lipschitz_mf_test")?;
    let grid = Arc::new(ActionGrid::scalar(&[-1.0, 1.0])?);
    let mu = SlidingControl::from_fn(grid, TimeGrid::new(1.0, 512)?, |t| vec![0.3 + 0.4 * t, 0.7 - 0.4 * t])?;
    let ns = [2, 4, 8, 16, 32, 64];
    let rows = convergence_study(&model, &mu, &ns, &SimConfig::new(5_000, 11))?;
    write_study_csv(&rows, std::io::stdout())?;
    for n in ns {
        eprintln!("n = {n:<3} sup_t |int a (mu - delta_u) ds| = {:.3e}", chatter_error(&mu, n, |_, a| a[0])?);
    }
    Ok(())
}
