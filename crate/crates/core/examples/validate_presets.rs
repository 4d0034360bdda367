//! Sampled boundedness and Lipschitz checks for every preset.

use relaxctl::{lookup_model, validate_model, PRESETS};

fn main() -> relaxctl::Result<()> {
    for name in PRESETS {
        let report = validate_model(&lookup_model(name)?, 2_000, 0)?;
        println!("{name:<26} bound {:>5} lipschitz {:>4} pass {}", report.bound, report.lipschitz, report.pass);
        for c in report.checks.iter().filter(|c| !(c.bound_ok && c.lipschitz_ok)) {
            println!("    {}: max |.| = {:.3}, max ratio = {:.3}", c.coefficient, c.max_abs, c.max_lipschitz_ratio);
        }
    }
    Ok(())
}
