//! Search over sliding controls that are constant on time blocks.
//!
//! `grid_search` enumerates every lattice weight vector (multiples of `1/r`)
//! per block and is the exact oracle at small scale; `coordinate_descent`
//! refines a control by projected coordinate moves accepted only when the
//! paired cost difference beats one standard error. All candidates of a run
//! share the same seed, so comparisons are on common random numbers.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::chattering::chatter;
use crate::control::{embed_strict, ActionGrid, SlidingControl, TimeGrid};
use crate::cost::{difference, simulate_cost, CostEstimate};
use crate::error::{invalid, Result};
use crate::fmt_f64;
use crate::model::ModelSpec;
use crate::sim::{Scheme, SimConfig};
use crate::stats::Estimate;

/// Upper bound on the number of lattice candidates a grid search may evaluate.
pub const MAX_CANDIDATES: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizationReport {
    pub method: String,
    /// Number of cost evaluations spent.
    pub budget: usize,
    pub blocks: usize,
    pub best_block_weights: Vec<Vec<f64>>,
    pub best_cost: CostEstimate,
    pub trace: Vec<TraceEntry>,
    #[serde(skip)]
    pub best_control: SlidingControl,
}

impl OptimizationReport {
    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["iteration", "mean", "stderr"])?;
        for t in &self.trace {
            wr.write_record([t.iteration.to_string(), fmt_f64(t.mean), fmt_f64(t.stderr)])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

/// All weight vectors with entries in `{0, 1/r, ..., 1}` summing to one, in
/// ascending lexicographic order.
pub fn lattice(p: usize, r: usize) -> Vec<Vec<f64>> {
    fn rec(p: usize, left: usize, r: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if cur.len() + 1 == p {
            cur.push(left);
            out.push(cur.iter().map(|&c| c as f64 / r as f64).collect());
            cur.pop();
            return;
        }
        for c in 0..=left {
            cur.push(c);
            rec(p, left - c, r, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if p == 0 || r == 0 {
        return out;
    }
    rec(p, r, r, &mut Vec::with_capacity(p), &mut out);
    out
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

fn block_of(k: usize, steps: usize, blocks: usize) -> usize {
    k * blocks / steps
}

/// Control whose rows on block `b` equal `block_weights[b]`.
pub fn blocked_control(
    grid: Arc<ActionGrid>,
    time: TimeGrid,
    block_weights: &[Vec<f64>],
) -> Result<SlidingControl> {
    let b = block_weights.len();
    if b == 0 || b > time.steps() {
        return Err(invalid(format!("need 1 <= blocks <= K, got {b}")));
    }
    let rows = (0..time.steps())
        .map(|k| block_weights[block_of(k, time.steps(), b)].clone())
        .collect();
    SlidingControl::new(grid, time, rows)
}

fn block_averages(mu: &SlidingControl, blocks: usize) -> Vec<Vec<f64>> {
    let steps = mu.time().steps();
    let p = mu.atoms();
    let mut sums = vec![vec![0.0; p]; blocks];
    let mut counts = vec![0usize; blocks];
    for k in 0..steps {
        let b = block_of(k, steps, blocks);
        counts[b] += 1;
        for (s, w) in sums[b].iter_mut().zip(mu.row(k)) {
            *s += w;
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| {
            let v: Vec<f64> = s.iter().map(|x| x / c as f64).collect();
            let t: f64 = v.iter().sum();
            v.iter().map(|x| x / t).collect()
        })
        .collect()
}

/// Exhaustive search over block-constant lattice controls.
pub fn grid_search(
    model: &ModelSpec,
    grid: Arc<ActionGrid>,
    time: TimeGrid,
    resolution: usize,
    blocks: usize,
    cfg: &SimConfig,
) -> Result<OptimizationReport> {
    if resolution == 0 || blocks == 0 || blocks > time.steps() {
        return Err(invalid("grid search needs r >= 1 and 1 <= B <= K"));
    }
    let p = grid.len();
    let per_block = binomial(resolution + p - 1, p - 1);
    let count = (0..blocks).try_fold(1usize, |acc, _| acc.checked_mul(per_block));
    let count = match count {
        Some(c) if c <= MAX_CANDIDATES => c,
        _ => {
            return Err(invalid(format!(
                "grid search would evaluate {per_block}^{blocks} candidates (limit {MAX_CANDIDATES})"
            )))
        }
    };
    let points = lattice(p, resolution);
    let decode = |mut idx: usize| -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new(); blocks];
        for b in (0..blocks).rev() {
            out[b] = points[idx % per_block].clone();
            idx /= per_block;
        }
        out
    };
    let results: Vec<Result<CostEstimate>> = (0..count)
        .into_par_iter()
        .map(|idx| {
            let c = blocked_control(grid.clone(), time, &decode(idx))?;
            simulate_cost(model, &c, Scheme::MartingaleMeasure, cfg).map(CostEstimate::without_samples)
        })
        .collect();
    let mut best: Option<(usize, CostEstimate)> = None;
    let mut trace = Vec::with_capacity(count);
    for (idx, r) in results.into_iter().enumerate() {
        let c = r?;
        trace.push(TraceEntry {
            iteration: idx,
            mean: c.mean,
            stderr: c.stderr,
        });
        if best.as_ref().is_none_or(|(_, b)| c.mean < b.mean) {
            best = Some((idx, c));
        }
    }
    let (idx, best_cost) = best.expect("at least one candidate");
    let weights = decode(idx);
    Ok(OptimizationReport {
        method: "grid_search".into(),
        budget: count,
        blocks,
        best_control: blocked_control(grid, time, &weights)?,
        best_block_weights: weights,
        best_cost,
        trace,
    })
}

/// Coordinate-descent settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DescentConfig {
    pub iterations: usize,
    pub step: f64,
    pub blocks: usize,
}

/// Cyclic projected coordinate moves with a one-standard-error acceptance rule.
pub fn coordinate_descent(
    model: &ModelSpec,
    init: &SlidingControl,
    opts: &DescentConfig,
    cfg: &SimConfig,
) -> Result<OptimizationReport> {
    if !(opts.step > 0.0 && opts.step <= 1.0) {
        return Err(invalid(format!("step must lie in (0, 1], got {}", opts.step)));
    }
    let time = init.time();
    if opts.blocks == 0 || opts.blocks > time.steps() {
        return Err(invalid("need 1 <= blocks <= K"));
    }
    let grid = init.grid().clone();
    let p = grid.len();
    let mut weights = block_averages(init, opts.blocks);
    let mut control = blocked_control(grid.clone(), time, &weights)?;
    let mut current = simulate_cost(model, &control, Scheme::MartingaleMeasure, cfg)?;
    let mut evaluations = 1;
    let mut trace = vec![TraceEntry {
        iteration: 0,
        mean: current.mean,
        stderr: current.stderr,
    }];
    for it in 1..=opts.iterations {
        let mut accepted = false;
        for b in 0..opts.blocks {
            for i in 0..p {
                for sign in [1.0, -1.0] {
                    let mut moved = weights[b].clone();
                    moved[i] += sign * opts.step;
                    let cand = project_simplex(&moved);
                    if cand
                        .iter()
                        .zip(&weights[b])
                        .all(|(x, y)| (x - y).abs() < 1e-15)
                    {
                        continue;
                    }
                    let mut trial = weights.clone();
                    trial[b] = cand;
                    let trial_control = blocked_control(grid.clone(), time, &trial)?;
                    let cost = simulate_cost(model, &trial_control, Scheme::MartingaleMeasure, cfg)?;
                    evaluations += 1;
                    let diff = difference(&cost, &current);
                    if diff.mean < -diff.stderr {
                        weights = trial;
                        control = trial_control;
                        current = cost;
                        accepted = true;
                    }
                }
            }
        }
        trace.push(TraceEntry {
            iteration: it,
            mean: current.mean,
            stderr: current.stderr,
        });
        if !accepted {
            break;
        }
    }
    Ok(OptimizationReport {
        method: "coordinate_descent".into(),
        budget: evaluations,
        blocks: opts.blocks,
        best_control: control,
        best_block_weights: weights,
        best_cost: current.without_samples(),
        trace,
    })
}

/// Settings for [`value_gap`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueGapConfig {
    pub strict_blocks: usize,
    pub relaxed_blocks: usize,
    pub resolution: usize,
    pub descent: Option<DescentConfig>,
    pub chatter_ns: Vec<usize>,
    /// Cap on candidates per grid search.
    pub budget: usize,
}

impl Default for ValueGapConfig {
    fn default() -> Self {
        Self {
            strict_blocks: 1,
            relaxed_blocks: 1,
            resolution: 4,
            descent: None,
            chatter_ns: vec![4, 16, 64],
            budget: 10_000,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChatterBridgeRow {
    pub n: usize,
    pub cost: Estimate,
    /// `J(chatter(mu*, n)) - J(mu*)` on common random numbers.
    pub excess: Estimate,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValueGapReport {
    pub strict: OptimizationReport,
    pub relaxed: OptimizationReport,
    /// `J(best strict) - J(best relaxed)` on common random numbers.
    pub gap: Estimate,
    pub bridge: Vec<ChatterBridgeRow>,
}

/// Best strict vs. best relaxed cost plus the chattering bridge between them.
pub fn value_gap(
    model: &ModelSpec,
    grid: Arc<ActionGrid>,
    time: TimeGrid,
    opts: &ValueGapConfig,
    cfg: &SimConfig,
) -> Result<ValueGapReport> {
    let guard = |r: usize, b: usize| -> Result<()> {
        let per = binomial(r + grid.len() - 1, grid.len() - 1);
        let n = (0..b).try_fold(1usize, |acc, _| acc.checked_mul(per));
        match n {
            Some(n) if n <= opts.budget => Ok(()),
            _ => Err(invalid(format!(
                "search with r = {r}, B = {b} exceeds the budget of {} candidates",
                opts.budget
            ))),
        }
    };
    guard(1, opts.strict_blocks)?;
    guard(opts.resolution, opts.relaxed_blocks)?;
    let strict = grid_search(model, grid.clone(), time, 1, opts.strict_blocks, cfg)?;
    let mut relaxed = grid_search(model, grid.clone(), time, opts.resolution, opts.relaxed_blocks, cfg)?;
    if let Some(d) = &opts.descent {
        let refined = coordinate_descent(model, &relaxed.best_control, d, cfg)?;
        if refined.best_cost.mean < relaxed.best_cost.mean {
            relaxed = OptimizationReport {
                budget: relaxed.budget + refined.budget,
                ..refined
            };
        }
    }
    let js = simulate_cost(model, &strict.best_control, Scheme::MartingaleMeasure, cfg)?;
    let jr = simulate_cost(model, &relaxed.best_control, Scheme::MartingaleMeasure, cfg)?;
    let gap = difference(&js, &jr).estimate();
    let mut bridge = Vec::with_capacity(opts.chatter_ns.len());
    for &n in &opts.chatter_ns {
        let un = embed_strict(&chatter(&relaxed.best_control, n)?)?;
        let jn = simulate_cost(model, &un, Scheme::Strict, cfg)?;
        bridge.push(ChatterBridgeRow {
            n,
            cost: jn.estimate(),
            excess: difference(&jn, &jr).estimate(),
        });
    }
    Ok(ValueGapReport {
        strict,
        relaxed,
        gap,
        bridge,
    })
}
