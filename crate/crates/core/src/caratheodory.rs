//! Carathéodory support reduction for sliding controls.
//!
//! A weight vector over `p` atoms with moment vectors in `R^D` is rewritten as a
//! convex combination of at most `D + 1` of them with the same weighted moment.
//! Each pass finds an affine dependence `sum c_i v_i = 0, sum c_i = 0` among the
//! current support, moves along `-c` until a weight hits zero and drops it.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::control::{SlidingControl, StrictControl};
use crate::error::Result;
use crate::model::{moment_map, MeanFieldArgs, ModelSpec, MomentVector};
use crate::sim::ParticleEnsemble;
use crate::model::MeanField;

/// Relative singular-value threshold below which a direction counts as null.
pub const DEGENERACY_TOL: f64 = 1e-12;
/// Per-component scaled tolerance for matching a single atom's moment.
pub const MATCH_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Reduction {
    pub weights: Vec<f64>,
    /// Set when no usable dependence could be found while the support was still too large.
    pub degenerate: bool,
}

impl Reduction {
    pub fn support(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }
}

/// Null vector of the `(D+1) x s` affine system over `cols`, if one exists numerically.
fn affine_dependence(vectors: &[&[f64]], cols: &[usize]) -> Option<Vec<f64>> {
    let dim = vectors[cols[0]].len();
    let rows = dim + 1;
    let s = cols.len();
    let size = rows.max(s);
    let mut a = DMatrix::<f64>::zeros(size, s);
    for (c, &i) in cols.iter().enumerate() {
        for r in 0..dim {
            a[(r, c)] = vectors[i][r];
        }
        a[(dim, c)] = 1.0;
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t?;
    let sv = &svd.singular_values;
    let largest = sv.iter().cloned().fold(0.0, f64::max);
    let (idx, smallest) = sv
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, &v)| if v < best.1 { (i, v) } else { best });
    if largest == 0.0 || smallest > DEGENERACY_TOL * largest {
        return None;
    }
    Some(vt.row(idx).iter().copied().collect())
}

/// Reduces `weights` to at most `D + 1` atoms while preserving `sum w_i v_i`.
///
/// Inputs already within `D + 1` atoms are returned unchanged. Otherwise the
/// reduction keeps going until the surviving moment vectors are affinely
/// independent, which can leave fewer than `D + 1` atoms (identical moments
/// collapse to one atom). Removal ties go to the smallest atom index.
pub fn reduce_support(weights: &[f64], vectors: &[&[f64]]) -> Reduction {
    assert_eq!(weights.len(), vectors.len(), "one moment vector per weight");
    let mut w = weights.to_vec();
    if vectors.is_empty() {
        return Reduction { weights: w, degenerate: false };
    }
    let dim = vectors[0].len();
    if w.len() <= dim + 1 {
        return Reduction { weights: w, degenerate: false };
    }
    loop {
        let support: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
        let s = support.len();
        let c = if s > dim + 1 {
            // Any dim + 2 columns are affinely dependent; slide the window on failure.
            let window = dim + 2;
            let found = (0..=s - window).find_map(|start| {
                affine_dependence(vectors, &support[start..start + window])
                    .map(|c| (start, c))
            });
            match found {
                Some((start, c)) => Some((support[start..start + window].to_vec(), c)),
                None => match affine_dependence(vectors, &support) {
                    Some(c) => Some((support.clone(), c)),
                    None => return Reduction { weights: w, degenerate: true },
                },
            }
        } else if s > 1 {
            affine_dependence(vectors, &support).map(|c| (support.clone(), c))
        } else {
            None
        };
        let Some((cols, mut c)) = c else { break };
        // Orient so the largest-magnitude entry is positive: keeps the step well scaled.
        let (_, big) = c
            .iter()
            .fold((0.0, 0.0), |(m, v), &x| if x.abs() > m { (x.abs(), x) } else { (m, v) });
        if big < 0.0 {
            c.iter_mut().for_each(|x| *x = -*x);
        }
        let scale = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mut theta = f64::INFINITY;
        let mut drop = usize::MAX;
        for (pos, &i) in cols.iter().enumerate() {
            if c[pos] > 1e-14 * scale {
                let ratio = w[i] / c[pos];
                if ratio < theta {
                    theta = ratio;
                    drop = i;
                }
            }
        }
        if drop == usize::MAX {
            return Reduction { weights: w, degenerate: true };
        }
        for (pos, &i) in cols.iter().enumerate() {
            w[i] -= theta * c[pos];
            if w[i] < 0.0 {
                w[i] = 0.0;
            }
        }
        w[drop] = 0.0;
    }
    Reduction { weights: w, degenerate: false }
}

/// Per-step support sizes and the largest moment residual of a reduction.
#[derive(Debug, Clone, Serialize)]
pub struct ReductionReport {
    pub support_before: Vec<usize>,
    pub support_after: Vec<usize>,
    /// Largest residual relative to `max(1, |target|)`.
    pub max_moment_residual: f64,
    /// Same for the mean action, over rows where it was kept.
    pub max_action_residual: f64,
    pub degenerate_steps: Vec<usize>,
    pub action_mean_dropped: Vec<usize>,
}

/// Moment vectors of every atom at step `k`, evaluated at the ensemble mean state.
pub fn step_moments(model: &ModelSpec, mu: &SlidingControl, ensemble: &ParticleEnsemble, k: usize) -> Vec<MomentVector> {
    let t = mu.time().time(k);
    let x = ensemble.mean_state(k);
    let y = MeanFieldArgs {
        psi: ensemble.cached_meanfield(MeanField::Psi, k).unwrap(),
        phi: ensemble.cached_meanfield(MeanField::Phi, k).unwrap(),
        varphi: ensemble.cached_meanfield(MeanField::Varphi, k).unwrap(),
    };
    mu.grid()
        .atoms()
        .iter()
        .map(|a| moment_map(model, t, x, y, a))
        .collect()
}

fn weighted(row: &[f64], vs: &[MomentVector]) -> Vec<f64> {
    let mut out = vec![0.0; vs[0].len()];
    for (w, v) in row.iter().zip(vs) {
        for (o, x) in out.iter_mut().zip(v.as_slice()) {
            *o += w * x;
        }
    }
    out
}

fn relative_residual(before: &[f64], after: &[f64]) -> f64 {
    let norm = before.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    before
        .iter()
        .zip(after)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
        / norm.max(1.0)
}

/// Reduces every row of `mu` to at most `d + d^2 + 2` atoms.
///
/// Moments are evaluated along the ensemble mean state and cached mean fields,
/// which yields one deterministic open-loop sliding control. Each row is first
/// reduced on the moment vector extended by the action itself, so the mean
/// action is kept as well; when that needs more than `d + d^2 + 2` atoms the
/// row is reduced on the moment vector alone and listed in
/// `action_mean_dropped`.
pub fn sliding_from_relaxed(
    model: &ModelSpec,
    mu: &SlidingControl,
    ensemble: &ParticleEnsemble,
) -> Result<(SlidingControl, ReductionReport)> {
    let steps = mu.time().steps();
    let cap = model.dim + model.dim * model.dim + 2;
    let atoms = mu.grid().atoms();
    let mut rows = Vec::with_capacity(steps);
    let mut report = ReductionReport {
        support_before: Vec::with_capacity(steps),
        support_after: Vec::with_capacity(steps),
        max_moment_residual: 0.0,
        max_action_residual: 0.0,
        degenerate_steps: vec![],
        action_mean_dropped: vec![],
    };
    for k in 0..steps {
        let vs = step_moments(model, mu, ensemble, k);
        let extended: Vec<MomentVector> = vs
            .iter()
            .zip(atoms)
            .map(|(v, a)| MomentVector(v.as_slice().iter().chain(a).copied().collect()))
            .collect();
        let row = mu.row(k);
        let refs: Vec<&[f64]> = extended.iter().map(|v| v.as_slice()).collect();
        let mut red = reduce_support(row, &refs);
        if red.support() > cap {
            let refs: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
            red = reduce_support(row, &refs);
            report.action_mean_dropped.push(k);
        }
        let resid = relative_residual(&weighted(row, &vs), &weighted(&red.weights, &vs));
        report.max_moment_residual = report.max_moment_residual.max(resid);
        let mean_action = |w: &[f64]| {
            let mut m = vec![0.0; mu.grid().dim()];
            for (wi, a) in w.iter().zip(atoms) {
                for (mc, ac) in m.iter_mut().zip(a) {
                    *mc += wi * ac;
                }
            }
            m
        };
        if !report.action_mean_dropped.contains(&k) {
            let r = relative_residual(&mean_action(row), &mean_action(&red.weights));
            report.max_action_residual = report.max_action_residual.max(r);
        }
        report.support_before.push(mu.support(k));
        report.support_after.push(red.support());
        if red.degenerate {
            report.degenerate_steps.push(k);
        }
        rows.push(red.weights);
    }
    Ok((mu.with_rows(rows)?, report))
}

/// Outcome of looking for a strict control with the same per-step moments.
#[derive(Debug, Clone, PartialEq)]
pub enum Extraction {
    Strict(StrictControl),
    NotRepresentable { step: usize, residual: f64 },
}

/// Finds, for every step, a single atom whose moment vector equals the
/// `mu`-averaged one (componentwise, scaled by the component's range over the grid).
pub fn extract_strict_if_convex(
    model: &ModelSpec,
    mu: &SlidingControl,
    ensemble: &ParticleEnsemble,
) -> Result<Extraction> {
    let steps = mu.time().steps();
    let mut assignment = Vec::with_capacity(steps);
    for k in 0..steps {
        let vs = step_moments(model, mu, ensemble, k);
        let target = weighted(mu.row(k), &vs);
        let dim = target.len();
        let scale: Vec<f64> = (0..dim)
            .map(|c| {
                let (lo, hi) = vs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v.0[c]), hi.max(v.0[c]))
                });
                let range = hi - lo;
                if range > 0.0 { range } else { 1.0 }
            })
            .collect();
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, v) in vs.iter().enumerate() {
            let r = (0..dim)
                .map(|c| (v.0[c] - target[c]).abs() / scale[c])
                .fold(0.0, f64::max);
            if r < best.1 {
                best = (i, r);
            }
        }
        if best.1 > MATCH_TOL {
            return Ok(Extraction::NotRepresentable {
                step: k,
                residual: best.1,
            });
        }
        assignment.push(best.0);
    }
    Ok(Extraction::Strict(StrictControl::new(
        mu.grid().clone(),
        mu.time(),
        assignment,
    )?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{ActionGrid, TimeGrid};
    use crate::model::lookup_model;
    use crate::sim::{simulate_relaxed, SimConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn moment(w: &[f64], vs: &[Vec<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; vs[0].len()];
        for (wi, v) in w.iter().zip(vs) {
            for (o, x) in out.iter_mut().zip(v) {
                *o += wi * x;
            }
        }
        out
    }

    #[test]
    fn identical_vectors_collapse_to_one_atom() {
        let vs = vec![vec![0.3, -1.2, 4.0]; 50];
        let refs: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
        let r = reduce_support(&[1.0 / 50.0; 50], &refs);
        assert_eq!(r.support(), 1);
        assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_inputs_are_untouched() {
        let vs = vec![vec![1.0, 1.0, 1.0]; 4];
        let refs: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
        let w = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(reduce_support(&w, &refs).weights, w.to_vec());
    }

    #[test]
    fn random_instance_preserves_moment() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vs: Vec<Vec<f64>> = (0..50).map(|_| (0..3).map(|_| rng.gen::<f64>()).collect()).collect();
        let refs: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
        let w = vec![1.0 / 50.0; 50];
        let r = reduce_support(&w, &refs);
        assert!(r.support() <= 4 && !r.degenerate);
        let a = moment(&w, &vs);
        let b = moment(&r.weights, &vs);
        let rel = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
            / a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(rel <= 1e-10, "{rel}");
        for (i, &wi) in r.weights.iter().enumerate() {
            assert!(wi >= 0.0);
            assert!(wi == 0.0 || w[i] > 0.0);
        }
    }

    #[test]
    fn extraction_examples() {
        let ode = lookup_model("rademacher_ode").unwrap();
        let tg = TimeGrid::new(1.0, 8).unwrap();
        let g3 = Arc::new(ActionGrid::scalar(&[-1.0, 0.0, 1.0]).unwrap());
        let mu = SlidingControl::constant(g3.clone(), tg, vec![0.5, 0.0, 0.5]).unwrap();
        let (e, _) = simulate_relaxed(&ode, &mu, &SimConfig::new(1, 0)).unwrap();
        match extract_strict_if_convex(&ode, &mu, &e).unwrap() {
            Extraction::Strict(u) => assert!(u.assignment().iter().all(|&i| i == 1)),
            other => panic!("{other:?}"),
        }
        let g2 = Arc::new(ActionGrid::scalar(&[-1.0, 1.0]).unwrap());
        let mu2 = SlidingControl::uniform(g2.clone(), tg).unwrap();
        let (e2, _) = simulate_relaxed(&ode, &mu2, &SimConfig::new(1, 0)).unwrap();
        assert!(matches!(
            extract_strict_if_convex(&ode, &mu2, &e2).unwrap(),
            Extraction::NotRepresentable { step: 0, .. }
        ));

        let dc = lookup_model("diffusion_counterexample").unwrap();
        let (e3, _) = simulate_relaxed(&dc, &mu2, &SimConfig::new(10, 0)).unwrap();
        match extract_strict_if_convex(&dc, &mu2, &e3).unwrap() {
            Extraction::Strict(u) => assert!(u.assignment().iter().all(|&i| i == 0)),
            other => panic!("{other:?}"),
        }

        let dirac = SlidingControl::dirac(g3, tg, 2).unwrap();
        let (e4, _) = simulate_relaxed(&ode, &dirac, &SimConfig::new(1, 0)).unwrap();
        match extract_strict_if_convex(&ode, &dirac, &e4).unwrap() {
            Extraction::Strict(u) => assert!(u.assignment().iter().all(|&i| i == 2)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dirac_rows_survive_reduction() {
        let model = lookup_model("lipschitz_mf_test").unwrap();
        let g = Arc::new(ActionGrid::linspace(-1.0, 1.0, 7).unwrap());
        let mu = SlidingControl::dirac(g, TimeGrid::new(1.0, 8).unwrap(), 3).unwrap();
        let (e, _) = simulate_relaxed(&model, &mu, &SimConfig::new(20, 0)).unwrap();
        let (red, rep) = sliding_from_relaxed(&model, &mu, &e).unwrap();
        assert_eq!(red, mu);
        assert!(rep.support_after.iter().all(|&s| s == 1));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn reduction_invariants(seed in 0u64..10_000, p in 5usize..30, dim in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vs: Vec<Vec<f64>> = (0..p).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..2.0)).collect()).collect();
            let raw: Vec<f64> = (0..p).map(|_| if rng.gen_bool(0.8) { rng.gen::<f64>() } else { 0.0 }).collect();
            let total: f64 = raw.iter().sum::<f64>() + 1e-9;
            let w: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let refs: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
            let r = reduce_support(&w, &refs);
            let a = moment(&w, &vs);
            let b = moment(&r.weights, &vs);
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let diff = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            prop_assert!(diff <= 1e-10 * na.max(1e-3));
            prop_assert!(r.weights.iter().all(|&x| x >= 0.0));
            prop_assert!((r.weights.iter().sum::<f64>() - w.iter().sum::<f64>()).abs() <= 1e-12);
            if p > dim + 1 {
                prop_assert!(r.support() <= dim + 1);
            }
            for (i, &x) in r.weights.iter().enumerate() {
                prop_assert!(x == 0.0 || w[i] > 0.0);
            }
            let again = reduce_support(&r.weights, &refs);
            prop_assert_eq!(again.weights, r.weights);
        }
    }
}
