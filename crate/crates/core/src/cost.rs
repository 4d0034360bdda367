//! Monte Carlo estimates of the strict and relaxed cost.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::SlidingControl;
use crate::error::{invalid, Result};
use crate::model::{MeanField, ModelSpec};
use crate::sim::{simulate, weighted_running_cost, ParticleEnsemble, Scheme, SimConfig};
use crate::stats::Estimate;

/// Mean realized cost with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub stderr: f64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(skip)]
    pub per_particle: Option<Vec<f64>>,
}

impl CostEstimate {
    pub fn from_samples(samples: Vec<f64>) -> Self {
        let e = Estimate::from_samples(&samples);
        Self {
            mean: e.mean,
            stderr: e.stderr,
            n: e.n,
            per_particle: Some(samples),
        }
    }

    pub fn estimate(&self) -> Estimate {
        Estimate {
            mean: self.mean,
            stderr: self.stderr,
            n: self.n,
        }
    }

    pub fn without_samples(mut self) -> Self {
        self.per_particle = None;
        self
    }
}

/// Per-particle costs `sum_k dt sum_i alpha_i h(t_k, X_k, m_phi(k), a_i) + g(X_K, m_lambda)`.
///
/// Mean-field arguments come from the ensemble's cached trajectories. Running
/// costs are recomputed from recorded paths when available and otherwise taken
/// from the accumulation done during simulation; both follow the same
/// summation order and agree bit for bit.
pub fn per_particle_costs(
    model: &ModelSpec,
    ensemble: &ParticleEnsemble,
    control: &SlidingControl,
) -> Result<Vec<f64>> {
    let man = &ensemble.manifest;
    if man.control_fingerprint != control.fingerprint() {
        return Err(invalid(
            "ensemble was simulated under a different control (manifest mismatch)",
        ));
    }
    if man.model != model.name || ensemble.dim() != model.dim {
        return Err(invalid(format!(
            "ensemble was simulated for model `{}`, not `{}`",
            man.model, model.name
        )));
    }
    let steps = control.time().steps();
    let dt = control.time().dt();
    let lambda = ensemble
        .cached_meanfield(MeanField::Lambda, steps)
        .expect("terminal mean field is always cached");
    let grid = control.grid().as_ref();
    let costs = (0..ensemble.particles())
        .into_par_iter()
        .map(|j| {
            let running = if ensemble.has_paths() {
                let mut acc = 0.0;
                for k in 0..steps {
                    let x = ensemble.state(j, k).unwrap();
                    let y = ensemble.cached_meanfield(MeanField::Varphi, k).unwrap();
                    acc += dt * weighted_running_cost(model, grid, control.row(k), control.time().time(k), x, y);
                }
                acc
            } else {
                ensemble.running_costs()[j]
            };
            running + model.terminal_cost(ensemble.state(j, steps).unwrap(), lambda)
        })
        .collect();
    Ok(costs)
}

/// Relaxed cost `J(mu)` estimated over an ensemble simulated under `control`.
pub fn estimate_cost(
    model: &ModelSpec,
    ensemble: &ParticleEnsemble,
    control: &SlidingControl,
) -> Result<CostEstimate> {
    Ok(CostEstimate::from_samples(per_particle_costs(model, ensemble, control)?))
}

/// Simulates under `scheme` and estimates the cost in one call.
pub fn simulate_cost(
    model: &ModelSpec,
    control: &SlidingControl,
    scheme: Scheme,
    cfg: &SimConfig,
) -> Result<CostEstimate> {
    let ens = simulate(model, control, scheme, cfg)?;
    estimate_cost(model, &ens, control)
}

/// `J(c1) - J(c2)` under common random numbers (martingale-measure dynamics).
pub fn paired_cost_difference(
    model: &ModelSpec,
    c1: &SlidingControl,
    c2: &SlidingControl,
    cfg: &SimConfig,
) -> Result<CostEstimate> {
    paired_difference_with(model, c1, Scheme::MartingaleMeasure, c2, Scheme::MartingaleMeasure, cfg)
}

/// Paired difference with an explicit scheme on each side.
pub fn paired_difference_with(
    model: &ModelSpec,
    c1: &SlidingControl,
    s1: Scheme,
    c2: &SlidingControl,
    s2: Scheme,
    cfg: &SimConfig,
) -> Result<CostEstimate> {
    if c1.time() != c2.time() {
        return Err(invalid("controls live on different time grids"));
    }
    if c1.grid() != c2.grid() {
        return Err(invalid("controls live on different action grids"));
    }
    let a = simulate_cost(model, c1, s1, cfg)?;
    let b = simulate_cost(model, c2, s2, cfg)?;
    Ok(difference(&a, &b))
}

/// Per-particle difference of two estimates computed on common random numbers.
pub fn difference(a: &CostEstimate, b: &CostEstimate) -> CostEstimate {
    let (pa, pb) = (
        a.per_particle.as_ref().expect("per-particle costs"),
        b.per_particle.as_ref().expect("per-particle costs"),
    );
    CostEstimate::from_samples(pa.iter().zip(pb).map(|(x, y)| x - y).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{embed_strict, rademacher_control, ActionGrid, TimeGrid};
    use crate::model::lookup_model;
    use crate::sim::{simulate_relaxed, simulate_strict};
    use std::sync::Arc;

    fn pm1() -> Arc<ActionGrid> {
        Arc::new(ActionGrid::scalar(&[-1.0, 1.0]).unwrap())
    }

    #[test]
    fn rademacher_cost_bound() {
        let model = lookup_model("rademacher_ode").unwrap();
        for n in [1usize, 2, 4, 8] {
            let tg = TimeGrid::new(1.0, 16 * n).unwrap();
            let u = rademacher_control(pm1(), n, tg).unwrap();
            let e = simulate_strict(&model, &u, &SimConfig::new(1, 0)).unwrap();
            let j = estimate_cost(&model, &e, &embed_strict(&u).unwrap()).unwrap();
            assert!(j.mean <= 1.0 / (n * n) as f64 && j.stderr == 0.0);
        }
    }

    #[test]
    fn optimal_relaxed_cost_is_zero() {
        let model = lookup_model("rademacher_ode").unwrap();
        let mu = SlidingControl::uniform(pm1(), TimeGrid::new(1.0, 50).unwrap()).unwrap();
        let (e, _) = simulate_relaxed(&model, &mu, &SimConfig::new(1, 0)).unwrap();
        assert_eq!(estimate_cost(&model, &e, &mu).unwrap().mean, 0.0);
    }

    #[test]
    fn constant_terminal_cost() {
        let model = lookup_model("diffusion_counterexample")
            .unwrap()
            .with_terminal_cost(|_, _| 1.0);
        let mu = SlidingControl::uniform(pm1(), TimeGrid::new(1.0, 8).unwrap()).unwrap();
        let c = simulate_cost(&model, &mu, Scheme::MartingaleMeasure, &SimConfig::new(100, 2)).unwrap();
        assert_eq!((c.mean, c.stderr, c.n), (1.0, 0.0, 100));
    }

    #[test]
    fn manifest_mismatch_is_rejected() {
        let model = lookup_model("rademacher_ode").unwrap();
        let tg = TimeGrid::new(1.0, 8).unwrap();
        let mu = SlidingControl::uniform(pm1(), tg).unwrap();
        let other = SlidingControl::dirac(pm1(), tg, 0).unwrap();
        let (e, _) = simulate_relaxed(&model, &mu, &SimConfig::new(2, 0)).unwrap();
        assert!(estimate_cost(&model, &e, &other).is_err());
        let wrong = lookup_model("fleming_drift").unwrap();
        assert!(estimate_cost(&wrong, &e, &mu).is_err());
    }

    #[test]
    fn paths_and_accumulators_agree_bitwise() {
        let model = lookup_model("lipschitz_mf_test").unwrap();
        let mu = SlidingControl::from_fn(pm1(), TimeGrid::new(1.0, 24).unwrap(), |t| {
            vec![0.3 + 0.4 * t, 0.7 - 0.4 * t]
        })
        .unwrap();
        let with = simulate(&model, &mu, Scheme::MartingaleMeasure, &SimConfig::new(50, 4).with_paths()).unwrap();
        let without = simulate(&model, &mu, Scheme::MartingaleMeasure, &SimConfig::new(50, 4)).unwrap();
        let a = per_particle_costs(&model, &with, &mu).unwrap();
        let b = per_particle_costs(&model, &without, &mu).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn paired_difference_examples() {
        let tg = TimeGrid::new(1.0, 16).unwrap();
        let model = lookup_model("lipschitz_mf_test").unwrap();
        let mu = SlidingControl::uniform(pm1(), tg).unwrap();
        let same = paired_cost_difference(&model, &mu, &mu, &SimConfig::new(100, 1)).unwrap();
        assert_eq!((same.mean, same.stderr), (0.0, 0.0));

        let dc = lookup_model("diffusion_counterexample")
            .unwrap()
            .with_running_cost(|_, _, _, a| a[0] * a[0]);
        let plus = SlidingControl::dirac(pm1(), tg, 1).unwrap();
        let d = paired_cost_difference(&dc, &mu, &plus, &SimConfig::new(100, 1)).unwrap();
        assert_eq!((d.mean, d.stderr), (0.0, 0.0));

        let ode = lookup_model("rademacher_ode").unwrap();
        let r4 = embed_strict(&rademacher_control(pm1(), 4, tg).unwrap()).unwrap();
        let d = paired_cost_difference(&ode, &mu, &r4, &SimConfig::new(1, 0)).unwrap();
        assert!(d.mean <= 0.0 && d.mean.abs() <= 1.0 / 16.0);

        let other = SlidingControl::uniform(pm1(), TimeGrid::new(1.0, 8).unwrap()).unwrap();
        assert!(paired_cost_difference(&ode, &mu, &other, &SimConfig::new(1, 0)).is_err());
    }

    #[test]
    fn cost_is_affine_in_running_cost() {
        let tg = TimeGrid::new(1.0, 16).unwrap();
        let base = lookup_model("lipschitz_mf_test").unwrap();
        let scaled = base.clone().with_running_cost(|_, x, _, a| 3.0 * (x[0] * x[0] + a[0] * a[0]));
        let no_run = base.clone().with_running_cost(|_, _, _, _| 0.0);
        let mu = SlidingControl::uniform(pm1(), tg).unwrap();
        let cfg = SimConfig::new(200, 8);
        let j1 = simulate_cost(&base, &mu, Scheme::MartingaleMeasure, &cfg).unwrap().mean;
        let j3 = simulate_cost(&scaled, &mu, Scheme::MartingaleMeasure, &cfg).unwrap().mean;
        let g = simulate_cost(&no_run, &mu, Scheme::MartingaleMeasure, &cfg).unwrap().mean;
        assert!(((j3 - g) - 3.0 * (j1 - g)).abs() < 1e-12);
    }
}
