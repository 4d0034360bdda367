//! Chattering: strict controls that switch fast enough to mimic a sliding control.
//!
//! Slice `[kT/n, (k+1)T/n)` is cut into one block per atom, in atom order, with
//! block lengths given by largest-remainder rounding of the slice-averaged
//! weights times the number of sub-steps in the slice.

use std::io::Write;

use serde::Serialize;

use crate::control::{embed_strict, pushforward_path, SlidingControl, StrictControl};
use crate::cost::{difference, estimate_cost, CostEstimate};
use crate::error::{invalid, Result};
use crate::fmt_f64;
use crate::model::ModelSpec;
use crate::sim::{simulate, Scheme, SimConfig};
use crate::stats::Estimate;

/// Largest-remainder apportionment of `total` units to `weights` (which sum to 1).
///
/// Ties on the fractional part go to the smaller index.
pub fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let targets: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = targets.iter().map(|t| t.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = targets[a] - targets[a].floor();
        let fb = targets[b] - targets[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut left = total.saturating_sub(assigned);
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if weights[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    counts
}

fn check_divisible(mu: &SlidingControl, n: usize) -> Result<usize> {
    if n == 0 {
        return Err(invalid("chattering needs n >= 1"));
    }
    let steps = mu.time().steps();
    let unit = n * mu.atoms();
    if !steps.is_multiple_of(unit) {
        let least = steps.div_ceil(unit) * unit;
        return Err(invalid(format!(
            "K = {steps} is not divisible by n * p = {unit}; least compatible K is {least}"
        )));
    }
    Ok(steps / n)
}

/// Slice-averaged weights of `mu` over `n` equal slices.
pub fn slice_weights(mu: &SlidingControl, n: usize) -> Result<Vec<Vec<f64>>> {
    let per = check_divisible(mu, n)?;
    let p = mu.atoms();
    Ok((0..n)
        .map(|s| {
            let mut avg = vec![0.0; p];
            for k in s * per..(s + 1) * per {
                for (a, w) in avg.iter_mut().zip(mu.row(k)) {
                    *a += w;
                }
            }
            avg.iter_mut().for_each(|a| *a /= per as f64);
            avg
        })
        .collect())
}

/// Strict control switching through the atoms of `mu` on each of `n` slices.
pub fn chatter(mu: &SlidingControl, n: usize) -> Result<StrictControl> {
    let per = check_divisible(mu, n)?;
    let mut assignment = Vec::with_capacity(mu.time().steps());
    for avg in slice_weights(mu, n)? {
        let counts = largest_remainder(&avg, per);
        for (i, &c) in counts.iter().enumerate() {
            assignment.extend(std::iter::repeat_n(i, c));
        }
    }
    StrictControl::new(mu.grid().clone(), mu.time(), assignment)
}

/// `max_t |int_0^t g(s, u^n_s) ds - int_0^t int g(s, a) mu_s(da) ds|` over grid times.
pub fn chatter_error(mu: &SlidingControl, n: usize, g: impl Fn(f64, &[f64]) -> f64) -> Result<f64> {
    let strict = embed_strict(&chatter(mu, n)?)?;
    let a = pushforward_path(&g, &strict);
    let b = pushforward_path(&g, mu);
    Ok(a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}

/// One row of a chattering convergence study.
#[derive(Debug, Clone, Serialize)]
pub struct StudyRow {
    pub n: usize,
    pub strict: Estimate,
    pub relaxed: Estimate,
    pub diff: Estimate,
    /// `E sup_t |X^n_t|^2` under the chattered control.
    pub strict_sup_sq: Estimate,
    /// `E sup_t |X_t|^2` under the relaxed control.
    pub relaxed_sup_sq: Estimate,
    /// Coupled `E sup_t |X^n_t - X_t|^2`; only for control-free diffusions.
    pub coupled_sup_diff: Option<Estimate>,
}

/// Dynamics used by [`convergence_study`] for each side of the comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Coupling {
    /// Both sides share one Brownian driver (stream slot 0): strict `u^n`
    /// against the atom-averaged drift. Valid when `sigma` ignores the action,
    /// where the averaged and martingale-measure dynamics have the same law.
    SharedDriver,
    /// Strict dynamics against martingale-measure dynamics on common seeds;
    /// only costs and laws are comparable.
    CommonSeeds,
}

pub fn coupling_for(model: &ModelSpec) -> Coupling {
    if model.control_in_diffusion {
        Coupling::CommonSeeds
    } else {
        Coupling::SharedDriver
    }
}

/// Compares `chatter(mu, n)` with `mu` for every `n` in `ns`.
pub fn convergence_study(
    model: &ModelSpec,
    mu: &SlidingControl,
    ns: &[usize],
    cfg: &SimConfig,
) -> Result<Vec<StudyRow>> {
    for &n in ns {
        check_divisible(mu, n)?;
    }
    let coupling = coupling_for(model);
    let (strict_scheme, relaxed_scheme) = match coupling {
        Coupling::SharedDriver => (Scheme::Naive, Scheme::Naive),
        Coupling::CommonSeeds => (Scheme::Strict, Scheme::MartingaleMeasure),
    };
    let run_cfg = SimConfig {
        record_paths: coupling == Coupling::SharedDriver,
        ..*cfg
    };
    let relaxed_ens = simulate(model, mu, relaxed_scheme, &run_cfg)?;
    let relaxed = estimate_cost(model, &relaxed_ens, mu)?;
    let relaxed_sup = Estimate::from_samples(relaxed_ens.sup_sq());
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let un = embed_strict(&chatter(mu, n)?)?;
        let ens = simulate(model, &un, strict_scheme, &run_cfg)?;
        let strict: CostEstimate = estimate_cost(model, &ens, &un)?;
        let diff = difference(&strict, &relaxed);
        let coupled = (coupling == Coupling::SharedDriver).then(|| {
            let d = ens.dim();
            let steps = mu.time().steps();
            let sups: Vec<f64> = (0..ens.particles())
                .map(|j| {
                    (0..=steps)
                        .map(|k| {
                            let a = ens.state(j, k).unwrap();
                            let b = relaxed_ens.state(j, k).unwrap();
                            (0..d).map(|c| (a[c] - b[c]) * (a[c] - b[c])).sum::<f64>()
                        })
                        .fold(0.0, f64::max)
                })
                .collect();
            Estimate::from_samples(&sups)
        });
        rows.push(StudyRow {
            n,
            strict: strict.estimate(),
            relaxed: relaxed.estimate(),
            diff: diff.estimate(),
            strict_sup_sq: Estimate::from_samples(ens.sup_sq()),
            relaxed_sup_sq: relaxed_sup,
            coupled_sup_diff: coupled,
        });
    }
    Ok(rows)
}

/// Writes `(n, J_strict, stderr, J_relaxed, stderr, J_diff, diff_stderr, sup_diff_or_NA)`.
pub fn write_study_csv<W: Write>(rows: &[StudyRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "n",
        "J_strict",
        "stderr",
        "J_relaxed",
        "stderr",
        "J_diff",
        "diff_stderr",
        "sup_diff_or_NA",
    ])?;
    for r in rows {
        wr.write_record([
            r.n.to_string(),
            fmt_f64(r.strict.mean),
            fmt_f64(r.strict.stderr),
            fmt_f64(r.relaxed.mean),
            fmt_f64(r.relaxed.stderr),
            fmt_f64(r.diff.mean),
            fmt_f64(r.diff.stderr),
            r.coupled_sup_diff
                .map(|e| fmt_f64(e.mean))
                .unwrap_or_else(|| "NA".into()),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
