//! Relaxed (sliding) controls for McKean-Vlasov stochastic differential equations.
//!
//! The crate simulates interacting particle systems driven by strict or
//! sliding controls on a finite action grid, estimates their costs, converts
//! sliding controls into strict ones by chattering, shrinks their supports by
//! Caratheodory reduction, and searches for good controls.
//!
//! ```
//! use std::sync::Arc;
//! use relaxctl::{lookup_model, simulate_cost, ActionGrid, Scheme, SimConfig, SlidingControl, TimeGrid};
//!
//! let model = lookup_model("rademacher_ode").unwrap();
//! let grid = Arc::new(ActionGrid::scalar(&[-1.0, 1.0]).unwrap());
//! let mu = SlidingControl::uniform(grid, TimeGrid::new(1.0, 64).unwrap()).unwrap();
//! let j = simulate_cost(&model, &mu, Scheme::MartingaleMeasure, &SimConfig::new(1, 0)).unwrap();
//! assert_eq!(j.mean, 0.0);
//! ```

pub mod caratheodory;
pub mod chattering;
pub mod cli;
pub mod control;
pub mod cost;
pub mod error;
pub mod model;
pub mod optimizer;
pub mod rng;
pub mod sim;
pub mod stats;

pub use caratheodory::{extract_strict_if_convex, reduce_support, sliding_from_relaxed, Extraction, ReductionReport};
pub use chattering::{chatter, chatter_error, convergence_study, StudyRow};
pub use control::{
    embed_strict, make_action_grid, pushforward_path, pushforward_test, rademacher_control, ActionGrid,
    SlidingControl, StrictControl, TimeGrid,
};
pub use cost::{estimate_cost, paired_cost_difference, per_particle_costs, simulate_cost, CostEstimate};
pub use error::{Error, Result};
pub use model::{lookup_model, mean_variance, validate_model, MeanField, MeanVarianceParams, ModelSpec, PRESETS};
pub use optimizer::{coordinate_descent, grid_search, value_gap, DescentConfig, OptimizationReport, ValueGapConfig};
pub use sim::{
    qv_estimate, simulate, simulate_naive_relaxed, simulate_relaxed, simulate_strict, ParticleEnsemble, Scheme,
    SimConfig,
};
pub use stats::Estimate;

/// Round-trippable scientific notation used in every CSV and JSON writer.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
