//! Interacting-particle Euler-Maruyama simulation of the controlled mean-field SDE.
//!
//! Three dynamics share one engine:
//!
//! * [`Scheme::Strict`]: one atom per step, driven by that atom's Brownian stream.
//! * [`Scheme::Naive`]: atom-averaged drift and diffusion against a single
//!   Brownian driver (stream slot 0). This is the relaxation that changes the
//!   quadratic variation and does not extend the strict problem continuously.
//! * [`Scheme::MartingaleMeasure`]: the finite-atom martingale-measure form
//!
//!   ```text
//!   dX = sum_i alpha_i b(.., a_i) dt + sum_i sqrt(alpha_i) sigma(.., a_i) dB^i
//!   ```
//!
//!   with one independent `d`-dimensional driver per atom.
//!
//! Each step first computes the empirical mean fields over the whole ensemble
//! (deterministic pairwise reduction), then advances every particle. Driver
//! increments are addressed by `(seed, particle, step, atom, coordinate)`, so a
//! Dirac row in the martingale-measure scheme reproduces the strict scheme bit
//! for bit, and results do not depend on the rayon pool size.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{embed_strict, ActionGrid, SlidingControl, StrictControl, TimeGrid};
use crate::error::{invalid, Error, Result};
use crate::model::{MeanField, ModelSpec};
use crate::rng::{self, StreamKey, RNG_SCHEME};
use crate::stats::{pairwise_mean, Estimate};
use crate::fmt_f64;

/// Dynamics used to propagate particles under a control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Strict,
    Naive,
    MartingaleMeasure,
}

/// Ensemble size, seed and whether full paths are kept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub particles: usize,
    pub seed: u64,
    pub record_paths: bool,
}

impl SimConfig {
    pub fn new(particles: usize, seed: u64) -> Self {
        Self {
            particles,
            seed,
            record_paths: false,
        }
    }

    pub fn with_paths(mut self) -> Self {
        self.record_paths = true;
        self
    }
}

/// Everything needed to pair an ensemble with its control and reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub model: String,
    pub scheme: Scheme,
    pub seed: u64,
    pub rng_scheme: String,
    pub particles: usize,
    pub steps: usize,
    pub horizon: f64,
    pub control_fingerprint: u64,
}

/// Explosion guard multiplier: abort once `|X| > STATE_GUARD (1 + |x0|)`.
pub const STATE_GUARD: f64 = 1e6;

/// Simulated particles plus cached mean-field trajectories.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub manifest: RunManifest,
    dim: usize,
    time: TimeGrid,
    x0: Vec<f64>,
    model: ModelSpec,
    /// Step-major `(K+1) x N x d` when recorded.
    paths: Option<Vec<f64>>,
    terminal: Vec<f64>,
    mean_state: Vec<f64>,
    var_state: Vec<f64>,
    psi: Vec<f64>,
    phi: Vec<f64>,
    varphi: Vec<f64>,
    lambda: Vec<f64>,
    running_cost: Vec<f64>,
    sup_sq: Vec<f64>,
    max_deviation: Vec<f64>,
    quadratic_variation: Vec<f64>,
    box_exits: u64,
}

impl ParticleEnsemble {
    pub fn particles(&self) -> usize {
        self.manifest.particles
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn time(&self) -> TimeGrid {
        self.time
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn has_paths(&self) -> bool {
        self.paths.is_some()
    }

    /// State of particle `j` at step `k`; needs recorded paths except at `k = 0` and `k = K`.
    pub fn state(&self, j: usize, k: usize) -> Option<&[f64]> {
        let (n, d) = (self.particles(), self.dim);
        if k == self.time.steps() {
            return Some(&self.terminal[j * d..(j + 1) * d]);
        }
        match &self.paths {
            Some(p) => Some(&p[(k * n + j) * d..(k * n + j + 1) * d]),
            None if k == 0 => Some(&self.x0),
            None => None,
        }
    }

    /// `N x d` terminal states.
    pub fn terminal_states(&self) -> &[f64] {
        &self.terminal
    }

    /// Empirical mean of the state at step `k`.
    pub fn mean_state(&self, k: usize) -> &[f64] {
        &self.mean_state[k * self.dim..(k + 1) * self.dim]
    }

    /// Empirical (biased) variance per coordinate at step `k`.
    pub fn variance_state(&self, k: usize) -> &[f64] {
        &self.var_state[k * self.dim..(k + 1) * self.dim]
    }

    /// Cached empirical mean field. `Lambda` is only cached at the terminal step.
    pub fn cached_meanfield(&self, which: MeanField, k: usize) -> Option<&[f64]> {
        let d = self.dim;
        match which {
            MeanField::Psi => Some(&self.psi[k * d..(k + 1) * d]),
            MeanField::Phi => Some(&self.phi[k * d..(k + 1) * d]),
            MeanField::Varphi => Some(&self.varphi[k * d..(k + 1) * d]),
            MeanField::Lambda => (k == self.time.steps()).then_some(&self.lambda[..]),
        }
    }

    /// Per-particle running cost accumulated under the simulated control.
    pub fn running_costs(&self) -> &[f64] {
        &self.running_cost
    }

    /// Per-particle `sup_k |X_k|^2`.
    pub fn sup_sq(&self) -> &[f64] {
        &self.sup_sq
    }

    /// Per-particle `sup_k max_c |X_k - x0|`.
    pub fn max_deviation(&self) -> &[f64] {
        &self.max_deviation
    }

    /// Per-particle realized quadratic variation `sum_k |X_{k+1} - X_k|^2`.
    pub fn realized_qv(&self) -> &[f64] {
        &self.quadratic_variation
    }

    /// Particle-steps spent outside the model's declared state box.
    pub fn box_exits(&self) -> u64 {
        self.box_exits
    }

    /// Terminal samples of `|X_T - x0|^2`.
    pub fn terminal_sq_displacement(&self) -> Vec<f64> {
        let d = self.dim;
        self.terminal
            .chunks(d)
            .map(|x| x.iter().zip(&self.x0).map(|(a, b)| (a - b) * (a - b)).sum())
            .collect()
    }

    /// Writes `(step, time, mean, variance, meanfield_psi, meanfield_phi)` rows.
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let d = self.dim;
        let cols = |base: &str| -> Vec<String> {
            if d == 1 {
                vec![base.to_string()]
            } else {
                (1..=d).map(|c| format!("{base}_{c}")).collect()
            }
        };
        let mut header = vec!["step".to_string(), "time".to_string()];
        for base in ["mean", "variance", "meanfield_psi", "meanfield_phi"] {
            header.extend(cols(base));
        }
        wr.write_record(&header)?;
        for k in 0..=self.time.steps() {
            let mut rec = vec![k.to_string(), fmt_f64(self.time.time(k))];
            for block in [
                self.mean_state(k),
                self.variance_state(k),
                &self.psi[k * d..(k + 1) * d],
                &self.phi[k * d..(k + 1) * d],
            ] {
                rec.extend(block.iter().map(|&v| fmt_f64(v)));
            }
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Writes `(particle, step, time, x_1..x_d)` rows; requires recorded paths.
    pub fn write_paths_csv<W: Write>(&self, w: W) -> Result<()> {
        if self.paths.is_none() {
            return Err(invalid("paths were not recorded for this ensemble"));
        }
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["particle".to_string(), "step".into(), "time".into()];
        header.extend((1..=self.dim).map(|c| format!("x_{c}")));
        wr.write_record(&header)?;
        for j in 0..self.particles() {
            for k in 0..=self.time.steps() {
                let mut rec = vec![j.to_string(), k.to_string(), fmt_f64(self.time.time(k))];
                rec.extend(self.state(j, k).unwrap().iter().map(|&v| fmt_f64(v)));
                wr.write_record(&rec)?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// `(1/N) sum_j map(X^j_k)`, recomputed from the stored states.
///
/// Needs recorded paths for interior steps; steps `0` and `K` are always available.
pub fn empirical_meanfield(ensemble: &ParticleEnsemble, which: MeanField, k: usize) -> Result<Vec<f64>> {
    let steps = ensemble.time.steps();
    if k > steps {
        return Err(Error::Domain(format!("step {k} outside 0..={steps}")));
    }
    let n = ensemble.particles();
    let d = ensemble.dim;
    if ensemble.state(0, k).is_none() {
        return Err(invalid(format!("step {k} not recorded; simulate with paths")));
    }
    let mut vals = vec![0.0; n * d];
    vals.par_chunks_mut(d).enumerate().for_each(|(j, out)| {
        ensemble.model.map(which, ensemble.state(j, k).unwrap(), out);
    });
    Ok(column_means(&vals, n, d))
}

fn column_means(vals: &[f64], n: usize, d: usize) -> Vec<f64> {
    if d == 1 {
        return vec![pairwise_mean(vals)];
    }
    (0..d)
        .map(|c| {
            let col: Vec<f64> = (0..n).map(|j| vals[j * d + c]).collect();
            pairwise_mean(&col)
        })
        .collect()
}

/// `sum_i alpha_i h(t, x, y, a_i)`, skipping zero weights.
#[inline]
pub(crate) fn weighted_running_cost(
    model: &ModelSpec,
    grid: &ActionGrid,
    row: &[f64],
    t: f64,
    x: &[f64],
    y: &[f64],
) -> f64 {
    let mut acc = 0.0;
    for (i, &w) in row.iter().enumerate() {
        if w > 0.0 {
            acc += w * model.running_cost(t, x, y, grid.atom(i));
        }
    }
    acc
}

/// Lazily addressed driver increments `Delta B^{i,j}_k ~ N(0, dt)`.
///
/// Values are regenerated on demand from the seed, so holding the driver costs
/// nothing even for `N K p d` in the hundreds of millions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverIncrements {
    pub seed: u64,
    pub particles: usize,
    pub steps: usize,
    pub atoms: usize,
    pub dim: usize,
    pub dt: f64,
}

impl DriverIncrements {
    #[inline]
    pub fn increment(&self, particle: usize, step: usize, atom: usize, coord: usize) -> f64 {
        self.dt.sqrt() * rng::standard_normal(self.seed, StreamKey::new(particle, step, atom, coord))
    }

    /// Dense `N x K x p x d` array.
    pub fn materialize(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.particles * self.steps * self.atoms * self.dim);
        for j in 0..self.particles {
            for k in 0..self.steps {
                for i in 0..self.atoms {
                    for c in 0..self.dim {
                        out.push(self.increment(j, k, i, c));
                    }
                }
            }
        }
        out
    }

    /// Mean of all increments, in units of its standard error.
    pub fn mean_z_score(&self) -> f64 {
        let xs = self.materialize();
        let n = xs.len() as f64;
        let mean = pairwise_mean(&xs);
        mean / (self.dt / n).sqrt()
    }
}

/// Per-particle realized quadratic variation of `M([0, t] x B)`.
pub fn qv_samples(
    driver: &DriverIncrements,
    mu: &SlidingControl,
    subset: &[usize],
    t: f64,
) -> Result<Vec<f64>> {
    let kend = mu.time().index_of(t)?;
    if mu.atoms() != driver.atoms || mu.time().steps() != driver.steps {
        return Err(invalid("driver and control have different shapes"));
    }
    if let Some(&i) = subset.iter().find(|&&i| i >= driver.atoms) {
        return Err(invalid(format!("atom index {i} out of range")));
    }
    let d = driver.dim;
    let samples = (0..driver.particles)
        .into_par_iter()
        .map(|j| {
            let mut total = 0.0;
            for k in 0..kend {
                let row = mu.row(k);
                let mut sq = 0.0;
                for c in 0..d {
                    let mut m = 0.0;
                    for &i in subset {
                        if row[i] > 0.0 {
                            m += row[i].sqrt() * driver.increment(j, k, i, c);
                        }
                    }
                    sq += m * m;
                }
                total += sq / d as f64;
            }
            total
        })
        .collect();
    Ok(samples)
}

/// Realized quadratic variation of `M([0, t] x B)` averaged over particles.
///
/// Its expectation is `sum_{t_k < t} dt sum_{i in B} alpha_i(t_k)`, the covariance
/// measure of `[0, t] x B`. An empty subset gives exactly zero.
pub fn qv_estimate(driver: &DriverIncrements, mu: &SlidingControl, subset: &[usize], t: f64) -> Result<Estimate> {
    if subset.is_empty() {
        mu.time().index_of(t)?;
        return Ok(Estimate {
            mean: 0.0,
            stderr: 0.0,
            n: driver.particles,
        });
    }
    Ok(Estimate::from_samples(&qv_samples(driver, mu, subset, t)?))
}

/// Strict dynamics under `u`.
pub fn simulate_strict(model: &ModelSpec, u: &StrictControl, cfg: &SimConfig) -> Result<ParticleEnsemble> {
    simulate(model, &embed_strict(u)?, Scheme::Strict, cfg)
}

/// Atom-averaged coefficients against a single Brownian driver.
pub fn simulate_naive_relaxed(
    model: &ModelSpec,
    mu: &SlidingControl,
    cfg: &SimConfig,
) -> Result<ParticleEnsemble> {
    simulate(model, mu, Scheme::Naive, cfg)
}

/// Martingale-measure relaxed dynamics; also returns the addressed driver.
pub fn simulate_relaxed(
    model: &ModelSpec,
    mu: &SlidingControl,
    cfg: &SimConfig,
) -> Result<(ParticleEnsemble, DriverIncrements)> {
    let ens = simulate(model, mu, Scheme::MartingaleMeasure, cfg)?;
    let driver = DriverIncrements {
        seed: cfg.seed,
        particles: cfg.particles,
        steps: mu.time().steps(),
        atoms: mu.atoms(),
        dim: model.dim,
        dt: mu.time().dt(),
    };
    Ok((ens, driver))
}

#[derive(Debug, Clone, Copy, Default)]
struct Acc {
    running: f64,
    sup_sq: f64,
    max_dev: f64,
    qv: f64,
    exits: u32,
    bad: bool,
}

struct Scratch {
    b: Vec<f64>,
    sig: Vec<f64>,
    drift: Vec<f64>,
    diff: Vec<f64>,
    sig_avg: Vec<f64>,
    dw: Vec<f64>,
}

impl Scratch {
    fn new(d: usize) -> Self {
        Self {
            b: vec![0.0; d],
            sig: vec![0.0; d * d],
            drift: vec![0.0; d],
            diff: vec![0.0; d],
            sig_avg: vec![0.0; d * d],
            dw: vec![0.0; d],
        }
    }
}

/// Mean-field arguments at one step.
struct StepFields<'a> {
    t: f64,
    k: usize,
    psi: &'a [f64],
    phi: &'a [f64],
    varphi: &'a [f64],
}

/// Runs the particle system under `control` with the given dynamics.
pub fn simulate(
    model: &ModelSpec,
    control: &SlidingControl,
    scheme: Scheme,
    cfg: &SimConfig,
) -> Result<ParticleEnsemble> {
    let n = cfg.particles;
    if n == 0 {
        return Err(invalid("need at least one particle"));
    }
    let grid = control.grid().as_ref();
    if grid.dim() != model.action_dim {
        return Err(invalid(format!(
            "control atoms have dimension {} but the model expects {}",
            grid.dim(),
            model.action_dim
        )));
    }
    let assignment: Option<Vec<usize>> = match scheme {
        Scheme::Strict => Some(
            control
                .as_strict()
                .ok_or_else(|| invalid("strict dynamics need a control with Dirac rows"))?
                .assignment()
                .to_vec(),
        ),
        _ => None,
    };
    let d = model.dim;
    let time = control.time();
    let steps = time.steps();
    let dt = time.dt();
    let sqrt_dt = dt.sqrt();
    let guard = STATE_GUARD * (1.0 + model.x0.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    let (box_lo, box_hi) = model.state_box;

    let mut states: Vec<f64> = (0..n).flat_map(|_| model.x0.iter().copied()).collect();
    let mut accs = vec![Acc::default(); n];
    let mut paths = cfg.record_paths.then(|| Vec::with_capacity((steps + 1) * n * d));
    let mut mean_state = Vec::with_capacity((steps + 1) * d);
    let mut var_state = Vec::with_capacity((steps + 1) * d);
    let mut psi = Vec::with_capacity((steps + 1) * d);
    let mut phi = Vec::with_capacity((steps + 1) * d);
    let mut varphi = Vec::with_capacity((steps + 1) * d);
    let mut vals = vec![0.0; n * d];

    let x0 = model.x0.as_slice();
    let x0_sq: f64 = x0.iter().map(|v| v * v).sum();
    accs.iter_mut().for_each(|a| a.sup_sq = x0_sq);

    let field = |which: MeanField, states: &[f64], vals: &mut Vec<f64>| -> Vec<f64> {
        vals.par_chunks_mut(d)
            .zip(states.par_chunks(d))
            .for_each(|(o, x)| model.map(which, x, o));
        column_means(vals, n, d)
    };

    for k in 0..=steps {
        if let Some(p) = paths.as_mut() {
            if k < steps {
                p.extend_from_slice(&states);
            }
        }
        let mean = column_means(&states, n, d);
        vals.par_chunks_mut(d)
            .zip(states.par_chunks(d))
            .for_each(|(o, x)| {
                for c in 0..d {
                    o[c] = (x[c] - mean[c]) * (x[c] - mean[c]);
                }
            });
        var_state.extend(column_means(&vals, n, d));
        mean_state.extend(mean);
        let m_psi = field(MeanField::Psi, &states, &mut vals);
        let m_phi = field(MeanField::Phi, &states, &mut vals);
        let m_varphi = field(MeanField::Varphi, &states, &mut vals);
        psi.extend_from_slice(&m_psi);
        phi.extend_from_slice(&m_phi);
        varphi.extend_from_slice(&m_varphi);
        if k == steps {
            break;
        }

        let fields = StepFields {
            t: time.time(k),
            k,
            psi: &m_psi,
            phi: &m_phi,
            varphi: &m_varphi,
        };
        let row = control.row(k);
        let strict_atom = assignment.as_ref().map(|a| a[k]);
        states
            .par_chunks_mut(d)
            .zip(accs.par_iter_mut())
            .enumerate()
            .for_each_init(
                || Scratch::new(d),
                |s, (j, (x, acc))| {
                    acc.running +=
                        dt * weighted_running_cost(model, grid, row, fields.t, x, fields.varphi);
                    match scheme {
                        Scheme::Strict => step_strict(
                            model, grid, strict_atom.unwrap(), &fields, x, j, cfg.seed, sqrt_dt, dt, s,
                        ),
                        Scheme::Naive => step_naive(model, grid, row, &fields, x, j, cfg.seed, sqrt_dt, dt, s),
                        Scheme::MartingaleMeasure => {
                            step_mm(model, grid, row, &fields, x, j, cfg.seed, sqrt_dt, dt, s)
                        }
                    }
                    let mut sq = 0.0;
                    let mut inc_sq = 0.0;
                    let mut outside = false;
                    for c in 0..d {
                        let v = x[c];
                        if !v.is_finite() || v.abs() > guard {
                            acc.bad = true;
                        }
                        outside |= v < box_lo || v > box_hi;
                        sq += v * v;
                        acc.max_dev = acc.max_dev.max((v - x0[c]).abs());
                        inc_sq += s.dw[c];
                    }
                    acc.qv += inc_sq;
                    acc.sup_sq = acc.sup_sq.max(sq);
                    acc.exits += outside as u32;
                },
            );
        if let Some(j) = accs.iter().position(|a| a.bad) {
            return Err(Error::Simulation {
                step: k + 1,
                particle: j,
                reason: format!(
                    "state left the guard region |X| <= {guard:e} (value {:?})",
                    &states[j * d..(j + 1) * d]
                ),
            });
        }
    }

    let lambda = field(MeanField::Lambda, &states, &mut vals);
    let box_exits = accs.iter().map(|a| a.exits as u64).sum();
    Ok(ParticleEnsemble {
        manifest: RunManifest {
            model: model.name.clone(),
            scheme,
            seed: cfg.seed,
            rng_scheme: RNG_SCHEME.to_string(),
            particles: n,
            steps,
            horizon: time.horizon(),
            control_fingerprint: control.fingerprint(),
        },
        dim: d,
        time,
        x0: model.x0.clone(),
        model: model.clone(),
        paths,
        terminal: states,
        mean_state,
        var_state,
        psi,
        phi,
        varphi,
        lambda,
        running_cost: accs.iter().map(|a| a.running).collect(),
        sup_sq: accs.iter().map(|a| a.sup_sq).collect(),
        max_deviation: accs.iter().map(|a| a.max_dev).collect(),
        quadratic_variation: accs.iter().map(|a| a.qv).collect(),
        box_exits,
    })
}

// Each step_* leaves the new state in `x` and the squared increment per
// coordinate in `s.dw` (reused as scratch once the noise has been applied).

#[allow(clippy::too_many_arguments)]
#[inline]
fn step_strict(
    model: &ModelSpec,
    grid: &ActionGrid,
    atom: usize,
    f: &StepFields<'_>,
    x: &mut [f64],
    j: usize,
    seed: u64,
    sqrt_dt: f64,
    dt: f64,
    s: &mut Scratch,
) {
    let d = x.len();
    let a = grid.atom(atom);
    model.drift(f.t, x, f.psi, a, &mut s.b);
    model.diffusion(f.t, x, f.phi, a, &mut s.sig);
    for c in 0..d {
        s.dw[c] = sqrt_dt * rng::standard_normal(seed, StreamKey::new(j, f.k, atom, c));
    }
    for c in 0..d {
        let mut noise = 0.0;
        for l in 0..d {
            noise += s.sig[c * d + l] * s.dw[l];
        }
        s.diff[c] = noise;
    }
    apply(x, &s.b, &s.diff, dt, &mut s.dw);
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn step_naive(
    model: &ModelSpec,
    grid: &ActionGrid,
    row: &[f64],
    f: &StepFields<'_>,
    x: &mut [f64],
    j: usize,
    seed: u64,
    sqrt_dt: f64,
    dt: f64,
    s: &mut Scratch,
) {
    let d = x.len();
    s.drift.fill(0.0);
    s.sig_avg.fill(0.0);
    for (i, &w) in row.iter().enumerate() {
        if w > 0.0 {
            let a = grid.atom(i);
            model.drift(f.t, x, f.psi, a, &mut s.b);
            model.diffusion(f.t, x, f.phi, a, &mut s.sig);
            for c in 0..d {
                s.drift[c] += w * s.b[c];
            }
            for e in 0..d * d {
                s.sig_avg[e] += w * s.sig[e];
            }
        }
    }
    for c in 0..d {
        s.dw[c] = sqrt_dt * rng::standard_normal(seed, StreamKey::new(j, f.k, 0, c));
    }
    for c in 0..d {
        let mut noise = 0.0;
        for l in 0..d {
            noise += s.sig_avg[c * d + l] * s.dw[l];
        }
        s.diff[c] = noise;
    }
    apply(x, &s.drift, &s.diff, dt, &mut s.dw);
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn step_mm(
    model: &ModelSpec,
    grid: &ActionGrid,
    row: &[f64],
    f: &StepFields<'_>,
    x: &mut [f64],
    j: usize,
    seed: u64,
    sqrt_dt: f64,
    dt: f64,
    s: &mut Scratch,
) {
    let d = x.len();
    s.drift.fill(0.0);
    s.diff.fill(0.0);
    for (i, &w) in row.iter().enumerate() {
        if w > 0.0 {
            let a = grid.atom(i);
            model.drift(f.t, x, f.psi, a, &mut s.b);
            model.diffusion(f.t, x, f.phi, a, &mut s.sig);
            for c in 0..d {
                s.dw[c] = sqrt_dt * rng::standard_normal(seed, StreamKey::new(j, f.k, i, c));
            }
            let root = w.sqrt();
            for c in 0..d {
                s.drift[c] += w * s.b[c];
                let mut noise = 0.0;
                for l in 0..d {
                    noise += s.sig[c * d + l] * s.dw[l];
                }
                s.diff[c] += root * noise;
            }
        }
    }
    apply(x, &s.drift, &s.diff, dt, &mut s.dw);
}

#[inline]
fn apply(x: &mut [f64], drift: &[f64], diff: &[f64], dt: f64, inc_sq: &mut [f64]) {
    for c in 0..x.len() {
        let next = x[c] + drift[c] * dt + diff[c];
        let inc = next - x[c];
        inc_sq[c] = inc * inc;
        x[c] = next;
    }
}
