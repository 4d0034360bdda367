//! Strict and sliding controls on finite action grids.
//!
//! A relaxed control `mu_t(da) dt` is represented by its finite-atom form: at
//! every step of a uniform [`TimeGrid`] a probability vector over the atoms of
//! an [`ActionGrid`]. Strict controls pick one atom per step and embed as
//! Dirac rows.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Rows whose sum is within this distance of one are renormalized on construction.
pub const RENORMALIZE_TOL: f64 = 1e-9;
/// Simplex tolerance every stored row satisfies.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Finite set of distinct action points in `R^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionGrid {
    atoms: Vec<Vec<f64>>,
    dim: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ActionGrid {
    /// Builds a grid whose bounding box is the componentwise hull of the points.
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| invalid("action grid needs at least one atom"))?;
        let dim = first.len();
        if dim == 0 {
            return Err(invalid("action atoms must have dimension >= 1"));
        }
        let mut lower = vec![f64::INFINITY; dim];
        let mut upper = vec![f64::NEG_INFINITY; dim];
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(invalid(format!(
                    "atom {i} has dimension {} but atom 0 has {dim}",
                    p.len()
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("atom {i} is not finite")));
            }
            for c in 0..dim {
                lower[c] = lower[c].min(p[c]);
                upper[c] = upper[c].max(p[c]);
            }
            if let Some(j) = points[..i].iter().position(|q| q == p) {
                return Err(invalid(format!("atoms {j} and {i} coincide")));
            }
        }
        Ok(Self {
            atoms: points,
            dim,
            lower,
            upper,
        })
    }

    /// Like [`ActionGrid::new`] but checks every atom against a declared box.
    pub fn with_bounds(points: Vec<Vec<f64>>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let mut grid = Self::new(points)?;
        if lower.len() != grid.dim || upper.len() != grid.dim {
            return Err(invalid("bounding box dimension does not match atoms"));
        }
        for (i, a) in grid.atoms.iter().enumerate() {
            for c in 0..grid.dim {
                if a[c] < lower[c] || a[c] > upper[c] {
                    return Err(invalid(format!("atom {i} lies outside the declared box")));
                }
            }
        }
        grid.lower = lower;
        grid.upper = upper;
        Ok(grid)
    }

    /// One-dimensional grid from scalar atoms.
    pub fn scalar(points: &[f64]) -> Result<Self> {
        Self::new(points.iter().map(|&p| vec![p]).collect())
    }

    /// `n` evenly spaced scalar atoms on `[lo, hi]`.
    pub fn linspace(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("linspace needs n >= 1"));
        }
        if n == 1 {
            return Self::scalar(&[lo]);
        }
        let step = (hi - lo) / (n - 1) as f64;
        Self::scalar(
            &(0..n)
                .map(|i| if i + 1 == n { hi } else { lo + step * i as f64 })
                .collect::<Vec<_>>(),
        )
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.atoms[i]
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.lower, &self.upper)
    }

    /// Index of the atom equal to `point`, if any.
    pub fn index_of(&self, point: &[f64]) -> Option<usize> {
        self.atoms.iter().position(|a| a.as_slice() == point)
    }
}

/// Uniform discretization `t_k = k T / K` of `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(invalid("time grid needs K >= 1"));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt()
    }

    /// Step index of a grid time; errors off-grid or outside `[0, T]`.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let tol = 1e-9 * self.horizon;
        if !(t >= -tol && t <= self.horizon + tol) {
            return Err(Error::Domain(format!(
                "t = {t} outside [0, {}]",
                self.horizon
            )));
        }
        let k = (t / self.dt()).round();
        if (k * self.dt() - t).abs() > tol {
            return Err(Error::Domain(format!("t = {t} is not a grid point")));
        }
        Ok(k as usize)
    }
}

/// Piecewise-constant control taking one atom per step.
#[derive(Debug, Clone, PartialEq)]
pub struct StrictControl {
    grid: Arc<ActionGrid>,
    time: TimeGrid,
    assignment: Vec<usize>,
}

impl StrictControl {
    pub fn new(grid: Arc<ActionGrid>, time: TimeGrid, assignment: Vec<usize>) -> Result<Self> {
        if assignment.len() != time.steps() {
            return Err(invalid(format!(
                "assignment has {} entries for K = {}",
                assignment.len(),
                time.steps()
            )));
        }
        if let Some((k, &i)) = assignment.iter().enumerate().find(|(_, &i)| i >= grid.len()) {
            return Err(invalid(format!(
                "step {k} assigns atom {i} but the grid has {} atoms",
                grid.len()
            )));
        }
        Ok(Self {
            grid,
            time,
            assignment,
        })
    }

    /// The same atom at every step.
    pub fn constant(grid: Arc<ActionGrid>, time: TimeGrid, atom: usize) -> Result<Self> {
        Self::new(grid, time, vec![atom; time.steps()])
    }

    pub fn grid(&self) -> &Arc<ActionGrid> {
        &self.grid
    }

    pub fn time(&self) -> TimeGrid {
        self.time
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Atom applied on `[t_k, t_{k+1})`.
    pub fn action(&self, k: usize) -> &[f64] {
        self.grid.atom(self.assignment[k])
    }
}

/// Finite-atom relaxed control: row `k` is the weight vector on `[t_k, t_{k+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlidingControl {
    grid: Arc<ActionGrid>,
    time: TimeGrid,
    weights: Vec<f64>,
}

impl SlidingControl {
    /// Validates rows against the simplex; near-unit rows are renormalized.
    pub fn new(grid: Arc<ActionGrid>, time: TimeGrid, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != time.steps() {
            return Err(invalid(format!(
                "{} weight rows for K = {}",
                rows.len(),
                time.steps()
            )));
        }
        let p = grid.len();
        let mut weights = Vec::with_capacity(p * rows.len());
        for (k, row) in rows.into_iter().enumerate() {
            weights.extend(normalize_row(row, p).map_err(|e| invalid(format!("row {k}: {e}")))?);
        }
        Ok(Self {
            grid,
            time,
            weights,
        })
    }

    /// Same weight vector at every step.
    pub fn constant(grid: Arc<ActionGrid>, time: TimeGrid, row: Vec<f64>) -> Result<Self> {
        let rows = vec![row; time.steps()];
        Self::new(grid, time, rows)
    }

    /// Equal weight on every atom.
    pub fn uniform(grid: Arc<ActionGrid>, time: TimeGrid) -> Result<Self> {
        let p = grid.len();
        Self::constant(grid, time, vec![1.0 / p as f64; p])
    }

    /// Dirac mass on one atom at every step.
    pub fn dirac(grid: Arc<ActionGrid>, time: TimeGrid, atom: usize) -> Result<Self> {
        embed_strict(&StrictControl::constant(grid, time, atom)?)
    }

    /// Row `k` given by `f(t_k)`.
    pub fn from_fn(
        grid: Arc<ActionGrid>,
        time: TimeGrid,
        f: impl Fn(f64) -> Vec<f64>,
    ) -> Result<Self> {
        let rows = (0..time.steps()).map(|k| f(time.time(k))).collect();
        Self::new(grid, time, rows)
    }

    pub fn grid(&self) -> &Arc<ActionGrid> {
        &self.grid
    }

    pub fn time(&self) -> TimeGrid {
        self.time
    }

    pub fn atoms(&self) -> usize {
        self.grid.len()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let p = self.grid.len();
        &self.weights[k * p..(k + 1) * p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.weights.chunks(self.grid.len())
    }

    /// Atom index carrying all the mass on step `k`, if the row is a Dirac row.
    pub fn dirac_atom(&self, k: usize) -> Option<usize> {
        let row = self.row(k);
        let i = row.iter().position(|&w| w == 1.0)?;
        row.iter()
            .enumerate()
            .all(|(j, &w)| j == i || w == 0.0)
            .then_some(i)
    }

    /// Per-step atom indices when every row is a Dirac row.
    pub fn as_strict(&self) -> Option<StrictControl> {
        let assignment = (0..self.time.steps())
            .map(|k| self.dirac_atom(k))
            .collect::<Option<Vec<_>>>()?;
        StrictControl::new(self.grid.clone(), self.time, assignment).ok()
    }

    /// Support size of row `k`.
    pub fn support(&self, k: usize) -> usize {
        self.row(k).iter().filter(|&&w| w > 0.0).count()
    }

    /// Stable identifier of (atoms, grid, weights) used to pair ensembles with controls.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.time.horizon.to_bits().hash(&mut h);
        self.time.steps.hash(&mut h);
        for a in self.grid.atoms() {
            for v in a {
                v.to_bits().hash(&mut h);
            }
        }
        for w in &self.weights {
            w.to_bits().hash(&mut h);
        }
        h.finish()
    }

    /// Replaces row weights wholesale; rows are validated as in [`SlidingControl::new`].
    pub fn with_rows(&self, rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(self.grid.clone(), self.time, rows)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(|r| r.to_vec()).collect()
    }
}

fn normalize_row(mut row: Vec<f64>, p: usize) -> std::result::Result<Vec<f64>, String> {
    if row.len() != p {
        return Err(format!("expected {p} weights, got {}", row.len()));
    }
    for w in row.iter_mut() {
        if !w.is_finite() {
            return Err("non-finite weight".into());
        }
        if *w < 0.0 {
            if *w < -ROW_SUM_TOL {
                return Err(format!("negative weight {w}"));
            }
            *w = 0.0;
        }
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > RENORMALIZE_TOL {
        return Err(format!("weights sum to {sum}"));
    }
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        row.iter_mut().for_each(|w| *w /= sum);
    }
    Ok(row)
}

/// Validates a grid built from raw points.
pub fn make_action_grid(points: Vec<Vec<f64>>) -> Result<ActionGrid> {
    ActionGrid::new(points)
}

/// `u_n(t) = (-1)^k` on the `k`-th of `n` equal slices of `[0, T]`.
pub fn rademacher_control(grid: Arc<ActionGrid>, n: usize, time: TimeGrid) -> Result<StrictControl> {
    if n == 0 {
        return Err(invalid("Rademacher index n must be >= 1"));
    }
    if grid.dim() != 1 {
        return Err(invalid("Rademacher controls need a scalar action grid"));
    }
    let plus = grid
        .index_of(&[1.0])
        .ok_or_else(|| invalid("Rademacher controls need the atom +1"))?;
    let minus = grid
        .index_of(&[-1.0])
        .ok_or_else(|| invalid("Rademacher controls need the atom -1"))?;
    let k_total = time.steps();
    if !k_total.is_multiple_of(n) {
        return Err(invalid(format!(
            "K = {k_total} is not divisible by n = {n}; slice boundaries must be grid points"
        )));
    }
    let per_slice = k_total / n;
    let assignment = (0..k_total)
        .map(|k| if (k / per_slice).is_multiple_of(2) { plus } else { minus })
        .collect();
    StrictControl::new(grid, time, assignment)
}

/// Dirac embedding `u_t -> dt delta_{u_t}(da)`.
pub fn embed_strict(u: &StrictControl) -> Result<SlidingControl> {
    let p = u.grid.len();
    let mut weights = vec![0.0; p * u.time.steps()];
    for (k, &i) in u.assignment.iter().enumerate() {
        weights[k * p + i] = 1.0;
    }
    Ok(SlidingControl {
        grid: u.grid.clone(),
        time: u.time,
        weights,
    })
}

/// Cumulative `int_0^{t_k} int g(s, a) mu_s(da) ds` at every grid time, left-endpoint rule.
pub fn pushforward_path(g: impl Fn(f64, &[f64]) -> f64, control: &SlidingControl) -> Vec<f64> {
    let time = control.time;
    let dt = time.dt();
    let mut out = Vec::with_capacity(time.steps() + 1);
    let mut acc = 0.0;
    out.push(acc);
    for k in 0..time.steps() {
        let t = time.time(k);
        let inner: f64 = control
            .row(k)
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(i, &w)| w * g(t, control.grid.atom(i)))
            .fold(0.0, |a, b| a + b);
        acc += dt * inner;
        out.push(acc);
    }
    out
}

/// `int_0^t int g(s, a) mu_s(da) ds` for a grid time `t`.
pub fn pushforward_test(
    g: impl Fn(f64, &[f64]) -> f64,
    control: &SlidingControl,
    t: f64,
) -> Result<f64> {
    let k = control.time.index_of(t)?;
    let time = control.time;
    let dt = time.dt();
    let mut acc = 0.0;
    for step in 0..k {
        let s = time.time(step);
        let inner: f64 = control
            .row(step)
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(i, &w)| w * g(s, control.grid.atom(i)))
            .fold(0.0, |a, b| a + b);
        acc += dt * inner;
    }
    Ok(acc)
}

#[derive(Serialize, Deserialize)]
struct SlidingWire {
    atoms: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
    #[serde(rename = "T")]
    horizon: f64,
    #[serde(rename = "K")]
    steps: usize,
}

#[derive(Serialize, Deserialize)]
struct StrictWire {
    atoms: Vec<Vec<f64>>,
    assignment: Vec<usize>,
    #[serde(rename = "T")]
    horizon: f64,
    #[serde(rename = "K")]
    steps: usize,
}

impl Serialize for SlidingControl {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SlidingWire {
            atoms: self.grid.atoms().to_vec(),
            weights: self.to_rows(),
            horizon: self.time.horizon,
            steps: self.time.steps,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SlidingControl {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let w = SlidingWire::deserialize(d)?;
        let build = || -> Result<Self> {
            let grid = Arc::new(ActionGrid::new(w.atoms)?);
            SlidingControl::new(grid, TimeGrid::new(w.horizon, w.steps)?, w.weights)
        };
        build().map_err(serde::de::Error::custom)
    }
}

impl Serialize for StrictControl {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        StrictWire {
            atoms: self.grid.atoms().to_vec(),
            assignment: self.assignment.clone(),
            horizon: self.time.horizon,
            steps: self.time.steps,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for StrictControl {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let w = StrictWire::deserialize(d)?;
        let build = || -> Result<Self> {
            let grid = Arc::new(ActionGrid::new(w.atoms)?);
            StrictControl::new(grid, TimeGrid::new(w.horizon, w.steps)?, w.assignment)
        };
        build().map_err(serde::de::Error::custom)
    }
}
