//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Run with `cargo test --release --test acceptance`.

mod common;

use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use common::{mean_variance_baseline, MEAN_VARIANCE_ORACLE};
use relaxctl::caratheodory::reduce_support;
use relaxctl::cli::sup_running_cost;
use relaxctl::sim::{qv_estimate, simulate};
use relaxctl::stats::{combined_stderr, ols_slope};
use relaxctl::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn pm1() -> Arc<ActionGrid> {
    Arc::new(ActionGrid::scalar(&[-1.0, 1.0]).unwrap())
}

fn rademacher_bound() -> Verdict {
    let model = lookup_model("rademacher_ode").unwrap();
    let mut worst = String::new();
    let mut pass = true;
    for n in [1usize, 2, 4, 8, 16, 32, 64] {
        let time = TimeGrid::new(1.0, 64 * n).unwrap();
        let u = rademacher_control(pm1(), n, time).unwrap();
        let ens = simulate_strict(&model, &u, &SimConfig::new(1, 0)).unwrap();
        let sup = ens.sup_sq()[0].sqrt();
        let j = estimate_cost(&model, &ens, &embed_strict(&u).unwrap()).unwrap().mean;
        let bound = 1.0 / n as f64;
        let ok = sup <= bound && j <= bound * bound;
        pass &= ok;
        if n == 64 || !ok {
            worst = format!("n={n}: sup|X|={sup:.6e} (<= {bound:.6e}), J={j:.6e} (<= {:.6e})", bound * bound);
        }
    }
    verdict(pass, worst)
}

fn counterexample_and_qv() -> (Verdict, Verdict) {
    let model = lookup_model("diffusion_counterexample").unwrap();
    let time = TimeGrid::new(1.0, 512).unwrap();
    let cfg = SimConfig::new(100_000, 7);
    let half = SlidingControl::uniform(pm1(), time).unwrap();

    let naive = simulate(&model, &half, Scheme::Naive, &cfg).unwrap();
    let naive_dev = naive.max_deviation().iter().copied().fold(0.0, f64::max);
    let u64 = rademacher_control(pm1(), 64, time).unwrap();
    let strict = simulate_strict(&model, &u64, &cfg).unwrap();
    let strict_sq = Estimate::from_samples(&strict.terminal_sq_displacement());
    let gap: Vec<f64> = strict
        .terminal_states()
        .iter()
        .zip(naive.terminal_states())
        .map(|(a, b)| (a - b) * (a - b))
        .collect();
    let gap = Estimate::from_samples(&gap);
    let (relaxed, driver) = simulate_relaxed(&model, &half, &cfg).unwrap();
    let relaxed_sq = Estimate::from_samples(&relaxed.terminal_sq_displacement());
    let c2 = verdict(
        naive_dev <= 1e-12 && strict_sq.within(1.0, 3.0) && relaxed_sq.within(1.0, 3.0) && gap.within(1.0, 3.0),
        format!(
            "naive max dev={naive_dev:.3e}, strict E(X_T-x0)^2={:.4}+-{:.4}, relaxed={:.4}+-{:.4}, E|X^n-X^naive|^2={:.4}+-{:.4}",
            strict_sq.mean, strict_sq.stderr, relaxed_sq.mean, relaxed_sq.stderr, gap.mean, gap.stderr
        ),
    );

    let q_minus = qv_estimate(&driver, &half, &[0], 1.0).unwrap();
    let q_plus = qv_estimate(&driver, &half, &[1], 1.0).unwrap();
    let q_all = qv_estimate(&driver, &half, &[0, 1], 1.0).unwrap();
    let add_err = (q_minus.mean + q_plus.mean - q_all.mean).abs();
    let add_se = combined_stderr(&[q_minus.stderr, q_plus.stderr, q_all.stderr]);
    let c3 = verdict(
        q_minus.within(0.5, 3.0) && add_err <= 3.0 * add_se,
        format!(
            "qv({{-1}})={:.5}+-{:.5} (target 0.5), additivity error {add_err:.3e} (3SE={:.3e})",
            q_minus.mean,
            q_minus.stderr,
            3.0 * add_se
        ),
    );
    (c2, c3)
}

fn chattering_convergence() -> Verdict {
    let model = lookup_model("lipschitz_mf_test").unwrap();
    let time = TimeGrid::new(1.0, 1024).unwrap();
    let mu = SlidingControl::from_fn(pm1(), time, |t| vec![0.3 + 0.4 * t, 0.7 - 0.4 * t]).unwrap();
    let rows = convergence_study(&model, &mu, &[2, 32], &SimConfig::new(20_000, 11)).unwrap();
    let (d2, d32) = (rows[0].diff.mean.abs(), rows[1].diff.mean.abs());

    let fine = TimeGrid::new(1.0, 2 * 64 * 64).unwrap();
    let mu_fine = SlidingControl::from_fn(pm1(), fine, |t| vec![0.3 + 0.4 * t, 0.7 - 0.4 * t]).unwrap();
    let ns = [2usize, 4, 8, 16, 32, 64];
    let errs: Vec<f64> = ns.iter().map(|&n| chatter_error(&mu_fine, n, |_, a| a[0]).unwrap()).collect();
    let lx: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let slope = ols_slope(&lx, &ly);
    verdict(
        d32 * 4.0 <= d2 && slope <= -0.8,
        format!(
            "|J_2-J|={d2:.4e}+-{:.1e}, |J_32-J|={d32:.4e}+-{:.1e} (ratio {:.1}), chatter_error slope={slope:.3}",
            rows[0].diff.stderr,
            rows[1].diff.stderr,
            d2 / d32
        ),
    )
}

fn caratheodory() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_resid = 0.0f64;
    let mut worst_support = 0;
    for _ in 0..1000 {
        let pts: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let raw: Vec<f64> = (0..50).map(|_| rng.gen_range(0.0..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let red = reduce_support(&w, &refs);
        let moment = |w: &[f64]| -> Vec<f64> {
            (0..3).map(|c| w.iter().zip(&pts).map(|(a, p)| a * p[c]).sum()).collect()
        };
        let (m0, m1) = (moment(&w), moment(&red.weights));
        let norm = m0.iter().map(|x| x * x).sum::<f64>().sqrt();
        let resid = m0.iter().zip(&m1).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() / norm;
        worst_resid = worst_resid.max(resid);
        worst_support = worst_support.max(red.support());
    }

    // Terminal cost x^2 so the cost comparison is not trivially 0 = 0.
    let model = lookup_model("diffusion_counterexample")
        .unwrap()
        .with_terminal_cost(|x, _| x[0] * x[0]);
    let grid = Arc::new(ActionGrid::linspace(-1.0, 1.0, 9).unwrap());
    let time = TimeGrid::new(1.0, 64).unwrap();
    let mu = SlidingControl::from_fn(grid.clone(), time, |t| {
        let raw: Vec<f64> = (0..9).map(|i| 1.0 + (i as f64 * (1.0 + 3.0 * t)).sin().powi(2)).collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|x| x / s).collect()
    })
    .unwrap();
    let cfg = SimConfig::new(20_000, 3);
    let (ens, _) = simulate_relaxed(&model, &mu, &cfg).unwrap();
    let (reduced, report) = sliding_from_relaxed(&model, &mu, &ens).unwrap();
    let mut row_err = 0.0f64;
    for k in 0..time.steps() {
        for power in [1, 2] {
            let m = |w: &[f64]| -> f64 { w.iter().zip(grid.atoms()).map(|(a, x)| a * x[0].powi(power)).sum() };
            row_err = row_err.max((m(mu.row(k)) - m(reduced.row(k))).abs());
        }
    }
    let before = estimate_cost(&model, &ens, &mu).unwrap();
    let after = simulate_cost(&model, &reduced, Scheme::MartingaleMeasure, &cfg).unwrap();
    let se = combined_stderr(&[before.stderr, after.stderr]);
    let max_support = report.support_after.iter().copied().max().unwrap();
    verdict(
        worst_resid <= 1e-10 && worst_support <= 4 && row_err <= 1e-10 && max_support <= 3 && (before.mean - after.mean).abs() <= 3.0 * se,
        format!(
            "random: max rel err {worst_resid:.2e}, max support {worst_support}; diffusion_counterexample: row moment err {row_err:.2e}, support {max_support}, J {:.4} vs {:.4} (3SE={:.4})",
            before.mean,
            after.mean,
            3.0 * se
        ),
    )
}

fn optimal_relaxed() -> Verdict {
    let model = lookup_model("rademacher_ode").unwrap();
    let time = TimeGrid::new(1.0, 100).unwrap();
    let cfg = SimConfig::new(1, 0);
    let gs = grid_search(&model, pm1(), time, 4, 1, &cfg).unwrap();
    let opts = DescentConfig { iterations: 50, step: 0.1, blocks: 1 };
    let cd = coordinate_descent(&model, &gs.best_control, &opts, &cfg).unwrap();
    let from_dirac = coordinate_descent(&model, &SlidingControl::dirac(pm1(), time, 1).unwrap(), &opts, &cfg).unwrap();
    let ok = |r: &OptimizationReport| {
        let w = &r.best_block_weights[0];
        (w[0] - 0.5).abs() <= 0.05 && (w[1] - 0.5).abs() <= 0.05 && r.best_cost.mean <= 1e-3
    };
    verdict(
        ok(&cd) && ok(&from_dirac),
        format!(
            "grid+descent weights {:?} J={:.2e}; descent from Dirac(+1) weights {:?} J={:.2e}",
            cd.best_block_weights[0], cd.best_cost.mean, from_dirac.best_block_weights[0], from_dirac.best_cost.mean
        ),
    )
}

fn mean_variance_recovery() -> Verdict {
    let params = MeanVarianceParams::default();
    let model = mean_variance(params).unwrap();
    let grid = Arc::new(ActionGrid::linspace(0.0, 1.5, 21).unwrap());
    let time = TimeGrid::new(params.horizon, 256).unwrap();
    let cfg = SimConfig::new(100_000, 13);
    let gs = grid_search(&model, grid.clone(), time, 1, 1, &cfg).unwrap();
    let cd = coordinate_descent(
        &model,
        &gs.best_control,
        &DescentConfig { iterations: 1, step: 0.5, blocks: 1 },
        &cfg,
    )
    .unwrap();
    let j = cd.best_cost.mean;
    let rel = (j - MEAN_VARIANCE_ORACLE).abs() / MEAN_VARIANCE_ORACLE.abs();
    // The zero allocation already lands within 5% when x0 = 1, so also compare
    // the improvement over it.
    let zero = SlidingControl::dirac(grid.clone(), time, 0).unwrap();
    let gain = paired_cost_difference(&model, &cd.best_control, &zero, &cfg).unwrap();
    let oracle_gain = MEAN_VARIANCE_ORACLE - mean_variance_baseline(&params);
    let gain_ok = (gain.mean - oracle_gain).abs() <= 0.05 * oracle_gain.abs() + 3.0 * gain.stderr;
    let mean_alloc: f64 = cd.best_control.row(0).iter().zip(grid.atoms()).map(|(w, a)| w * a[0]).sum();
    verdict(
        rel <= 0.05 && gain_ok,
        format!(
            "J={j:.6}+-{:.1e} vs oracle {MEAN_VARIANCE_ORACLE:.6} (rel {:.2e}); gain over a=0 {:.5}+-{:.1e} vs {oracle_gain:.5}; mean allocation {mean_alloc:.3}",
            cd.best_cost.stderr, rel, gain.mean, gain.stderr
        ),
    )
}

fn run_cli(out: &Path, args: &[&str], threads: usize) -> i32 {
    let status = Command::new(env!("CARGO_BIN_EXE_relaxctl"))
        .args(args)
        .arg("--out")
        .arg(out)
        .arg("--threads")
        .arg(threads.to_string())
        .env_remove("RELAXCTL_SEED")
        .stdout(std::process::Stdio::null())
        .status()
        .expect("spawn relaxctl");
    status.code().unwrap_or(-1)
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Verdict {
    let runs: [&[&str]; 8] = [
        &["simulate", "--model", "diffusion_counterexample", "--control", "dirac:1", "--N", "10", "--K", "16", "--seed", "1", "--paths"],
        &["cost", "--model", "lipschitz_mf_test", "--N", "2000", "--K", "32", "--seed", "3"],
        &["chatter", "--model", "lipschitz_mf_test", "--N", "500", "--K", "64", "--ns", "2,8,32"],
        &["reduce", "--N", "500", "--K", "16", "--seed", "2"],
        &["optimize", "--model", "rademacher_ode", "--atoms", "-1,1", "--resolution", "4", "--blocks", "1", "--N", "1"],
        &["counterexample", "--N", "2000", "--K", "128", "--seed", "7"],
        &["value-gap", "--N", "1", "--K", "128"],
        &["validate-model", "--model", "fleming_drift", "--samples", "200"],
    ];
    let base = tempfile::tempdir().unwrap();
    let mut failures = vec![];
    for (i, args) in runs.iter().enumerate() {
        let mut reference: Option<Vec<(String, Vec<u8>)>> = None;
        for (rep, threads) in [(0, 1usize), (1, 1), (2, 4), (3, 8)] {
            let out = base.path().join(format!("{i}-{rep}"));
            let code = run_cli(&out, args, threads);
            let bytes = dir_bytes(&out);
            if code != 0 {
                failures.push(format!("{} exited {code}", args[0]));
            }
            match &reference {
                None => reference = Some(bytes),
                Some(r) if *r != bytes => failures.push(format!("{} differs at threads={threads}", args[0])),
                Some(_) => {}
            }
        }
    }
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            "8 subcommands x (repeat, threads 1/4/8): all outputs byte-identical".into()
        } else {
            failures.join("; ")
        },
    )
}

fn value_gap_bridge() -> Verdict {
    let model = lookup_model("rademacher_ode").unwrap();
    let time = TimeGrid::new(1.0, 128).unwrap();
    let rep = value_gap(&model, pm1(), time, &ValueGapConfig::default(), &SimConfig::new(1, 0)).unwrap();
    let sup_h = sup_running_cost(&model, &ActionGrid::scalar(&[-1.0, 1.0]).unwrap(), 1.0);
    let mut pass = rep.gap.mean > 0.0;
    let mut parts = vec![];
    for r in &rep.bridge {
        let bound = 2.0 * sup_h * time.horizon() / r.n as f64 + 3.0 * r.excess.stderr;
        pass &= r.excess.mean.abs() <= bound;
        parts.push(format!("n={}: {:.3e} (<= {bound:.3e})", r.n, r.excess.mean));
    }
    pass &= rep.bridge.windows(2).all(|w| w[1].cost.mean <= w[0].cost.mean);
    verdict(
        pass,
        format!(
            "J_strict={:.4}, J_relaxed={:.2e}, gap={:.4}; J(chatter)-J(mu*): {}",
            rep.strict.best_cost.mean,
            rep.relaxed.best_cost.mean,
            rep.gap.mean,
            parts.join(", ")
        ),
    )
}

fn main() {
    // libtest-style flags from `cargo test` are accepted and ignored.
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut results: Vec<(usize, &str, Verdict, f64)> = vec![];
    let wanted = |name: &str| filter.as_deref().is_none_or(|f| name.contains(f));

    let mut run = |id: usize, name: &'static str, f: &dyn Fn() -> Verdict| {
        if wanted(name) {
            let start = Instant::now();
            let v = f();
            let secs = start.elapsed().as_secs_f64();
            println!("[{}] criterion {id} {name}: {} ({secs:.1}s)", if v.pass { "PASS" } else { "FAIL" }, v.detail);
            results.push((id, name, v, secs));
        }
    };
    run(1, "rademacher_bound", &rademacher_bound);
    if wanted("counterexample") || wanted("covariance_measure") {
        let start = Instant::now();
        let (c2, c3) = counterexample_and_qv();
        let secs = start.elapsed().as_secs_f64();
        for (id, name, v) in [(2, "counterexample", c2), (3, "covariance_measure", c3)] {
            println!("[{}] criterion {id} {name}: {} ({secs:.1}s shared)", if v.pass { "PASS" } else { "FAIL" }, v.detail);
            results.push((id, name, v, secs));
        }
    }
    let mut run = |id: usize, name: &'static str, f: &dyn Fn() -> Verdict| {
        if wanted(name) {
            let start = Instant::now();
            let v = f();
            let secs = start.elapsed().as_secs_f64();
            println!("[{}] criterion {id} {name}: {} ({secs:.1}s)", if v.pass { "PASS" } else { "FAIL" }, v.detail);
            results.push((id, name, v, secs));
        }
    };
    run(4, "chattering_convergence", &chattering_convergence);
    run(5, "caratheodory", &caratheodory);
    run(6, "optimal_relaxed", &optimal_relaxed);
    run(7, "mean_variance", &mean_variance_recovery);
    run(8, "determinism", &determinism);
    run(9, "value_gap", &value_gap_bridge);

    let failed: Vec<_> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed",
        results.len() - failed.len(),
        failed.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
