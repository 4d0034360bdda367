use std::sync::Arc;

use relaxctl::sim::simulate;
use relaxctl::stats::combined_stderr;
use relaxctl::*;

fn grid(points: &[f64]) -> Arc<ActionGrid> {
    Arc::new(ActionGrid::scalar(points).unwrap())
}

fn bits(xs: &[f64]) -> Vec<u64> {
    xs.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn dirac_collapse_on_every_preset() {
    for name in PRESETS {
        let model = lookup_model(name).unwrap();
        let g = if name == "mean_variance" { grid(&[0.0, 0.75, 1.5]) } else { grid(&[-1.0, 0.0, 1.0]) };
        let time = TimeGrid::new(model.horizon, 20).unwrap();
        let assignment = (0..20).map(|k| (k * 7) % 3).collect();
        let u = StrictControl::new(g, time, assignment).unwrap();
        let cfg = SimConfig::new(64, 9).with_paths();
        let strict = simulate_strict(&model, &u, &cfg).unwrap();
        let (relaxed, _) = simulate_relaxed(&model, &embed_strict(&u).unwrap(), &cfg).unwrap();
        for k in 0..=20 {
            for j in 0..64 {
                assert_eq!(bits(strict.state(j, k).unwrap()), bits(relaxed.state(j, k).unwrap()), "{name}");
            }
        }
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let model = lookup_model("lipschitz_mf_test").unwrap();
    let mu = SlidingControl::uniform(grid(&[-1.0, 1.0]), TimeGrid::new(1.0, 32).unwrap()).unwrap();
    // Large enough to cross the parallel summation threshold.
    let cfg = SimConfig::new(40_000, 2);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate_cost(&model, &mu, Scheme::MartingaleMeasure, &cfg).unwrap())
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a.mean.to_bits(), b.mean.to_bits());
    assert_eq!(bits(a.per_particle.as_ref().unwrap()), bits(b.per_particle.as_ref().unwrap()));
}

#[test]
fn stderr_shrinks_at_monte_carlo_rate() {
    let model = lookup_model("lipschitz_mf_test").unwrap();
    let mu = SlidingControl::uniform(grid(&[-1.0, 1.0]), TimeGrid::new(1.0, 16).unwrap()).unwrap();
    let ns = [500usize, 2_000, 8_000, 32_000];
    let ses: Vec<f64> = ns
        .iter()
        .map(|&n| simulate_cost(&model, &mu, Scheme::MartingaleMeasure, &SimConfig::new(n, 4)).unwrap().stderr)
        .collect();
    let lx: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = ses.iter().map(|s| s.ln()).collect();
    let slope = stats::ols_slope(&lx, &ly);
    assert!((slope + 0.5).abs() < 0.1, "slope {slope}");
}

#[test]
fn second_moment_is_stable_under_refinement() {
    let model = lookup_model("lipschitz_mf_test").unwrap();
    let est = |k: usize| {
        let mu = SlidingControl::uniform(grid(&[-1.0, 1.0]), TimeGrid::new(1.0, k).unwrap()).unwrap();
        let ens = simulate(&model, &mu, Scheme::MartingaleMeasure, &SimConfig::new(20_000, 6)).unwrap();
        let sq: Vec<f64> = ens.terminal_states().iter().map(|x| x * x).collect();
        Estimate::from_samples(&sq)
    };
    let (a, b) = (est(64), est(128));
    assert!((a.mean - b.mean).abs() < 5.0 * combined_stderr(&[a.stderr, b.stderr]));
}

#[test]
fn qv_is_additive_over_disjoint_subsets() {
    let model = lookup_model("diffusion_counterexample").unwrap();
    let g = grid(&[-1.0, 0.0, 1.0]);
    let mu = SlidingControl::from_fn(g, TimeGrid::new(1.0, 50).unwrap(), |t| vec![0.2, 0.3 + 0.2 * t, 0.5 - 0.2 * t]).unwrap();
    let (_, driver) = simulate_relaxed(&model, &mu, &SimConfig::new(20_000, 1)).unwrap();
    let a = qv_estimate(&driver, &mu, &[0], 1.0).unwrap();
    let b = qv_estimate(&driver, &mu, &[1, 2], 1.0).unwrap();
    let all = qv_estimate(&driver, &mu, &[0, 1, 2], 1.0).unwrap();
    assert!(a.within(0.2, 3.0), "{a:?}");
    assert!(all.within(1.0, 3.0));
    assert!((a.mean + b.mean - all.mean).abs() <= 3.0 * combined_stderr(&[a.stderr, b.stderr, all.stderr]));
}

#[test]
fn chattered_costs_trend_to_relaxed_cost() {
    let model = lookup_model("lipschitz_mf_test").unwrap();
    let mu = SlidingControl::from_fn(grid(&[-1.0, 1.0]), TimeGrid::new(1.0, 512).unwrap(), |t| {
        vec![0.3 + 0.4 * t, 0.7 - 0.4 * t]
    })
    .unwrap();
    let rows = convergence_study(&model, &mu, &[2, 4, 8, 16, 32], &SimConfig::new(4_000, 3)).unwrap();
    let gaps: Vec<f64> = rows.iter().map(|r| r.diff.mean.abs()).collect();
    assert!(gaps.windows(2).all(|w| w[1] <= w[0] + 3.0 * rows[0].diff.stderr), "{gaps:?}");
    assert!(gaps[4] < gaps[0] / 4.0);
    for r in &rows {
        let sup = r.coupled_sup_diff.unwrap();
        assert!(sup.mean.is_finite());
    }
    assert!(rows[4].coupled_sup_diff.unwrap().mean < rows[0].coupled_sup_diff.unwrap().mean);
}

#[test]
fn controlled_diffusion_laws_converge_under_chattering() {
    let model = lookup_model("diffusion_counterexample").unwrap();
    let mu = SlidingControl::uniform(grid(&[-1.0, 0.0, 1.0]), TimeGrid::new(1.0, 384).unwrap()).unwrap();
    let cfg = SimConfig::new(20_000, 5);
    let (relaxed, _) = simulate_relaxed(&model, &mu, &cfg).unwrap();
    let strict = simulate_strict(&model, &chatter(&mu, 32).unwrap(), &cfg).unwrap();
    let r = Estimate::from_samples(&relaxed.terminal_sq_displacement());
    let s = Estimate::from_samples(&strict.terminal_sq_displacement());
    assert!((r.mean - s.mean).abs() <= 3.0 * combined_stderr(&[r.stderr, s.stderr]));
    assert!(r.within(2.0 / 3.0, 3.0));
}

#[test]
fn extraction_never_fabricates() {
    let model = lookup_model("rademacher_ode").unwrap();
    let g = grid(&[-1.0, 0.0, 1.0]);
    let time = TimeGrid::new(1.0, 40).unwrap();
    let mu = SlidingControl::constant(g, time, vec![0.5, 0.0, 0.5]).unwrap();
    let cfg = SimConfig::new(1, 0);
    let (ens, _) = simulate_relaxed(&model, &mu, &cfg).unwrap();
    match extract_strict_if_convex(&model, &mu, &ens).unwrap() {
        Extraction::Strict(u) => {
            assert!(u.assignment().iter().all(|&i| i == 1));
            let ju = simulate_cost(&model, &embed_strict(&u).unwrap(), Scheme::Strict, &cfg).unwrap();
            let jm = simulate_cost(&model, &mu, Scheme::MartingaleMeasure, &cfg).unwrap();
            assert_eq!(ju.mean, jm.mean);
        }
        other => panic!("expected a strict control, got {other:?}"),
    }
}

#[test]
fn relaxed_search_never_loses_to_strict_search() {
    for name in ["rademacher_ode", "fleming_drift_squared", "lipschitz_mf_test"] {
        let model = lookup_model(name).unwrap();
        let cfg = ValueGapConfig { resolution: 2, chatter_ns: vec![], ..Default::default() };
        let rep = value_gap(&model, grid(&[-1.0, 1.0]), TimeGrid::new(1.0, 32).unwrap(), &cfg, &SimConfig::new(500, 1)).unwrap();
        assert!(rep.gap.mean >= -3.0 * rep.gap.stderr, "{name}");
    }
}

#[test]
fn fleming_variants_differ_as_documented() {
    let g = grid(&[-1.0, 1.0]);
    let time = TimeGrid::new(1.0, 256).unwrap();
    let cfg = SimConfig::new(2_000, 2);
    let cost = |name: &str, n: usize| {
        let u = embed_strict(&rademacher_control(g.clone(), n, time).unwrap()).unwrap();
        simulate_cost(&lookup_model(name).unwrap(), &u, Scheme::Strict, &cfg).unwrap().mean
    };
    // (1 - a)^2 pays 4 on every a = -1 slice, so the literal cost stays near 2.
    assert!(cost("fleming_drift", 64) > 1.5);
    // (1 - a^2)^2 vanishes on both atoms; only the small mean-field term remains.
    assert!(cost("fleming_drift_squared", 64) < 0.05);
    assert!(cost("fleming_drift_squared", 64) < cost("fleming_drift_squared", 1));
}

#[test]
fn qv_standard_errors_are_calibrated() {
    let model = lookup_model("diffusion_counterexample").unwrap();
    let g = grid(&[-1.0, 0.0, 1.0]);
    let mu = SlidingControl::from_fn(g, TimeGrid::new(1.0, 50).unwrap(), |t| vec![0.2, 0.3 + 0.2 * t, 0.5 - 0.2 * t]).unwrap();
    let zs: Vec<f64> = (0..200)
        .map(|seed| {
            let (_, driver) = simulate_relaxed(&model, &mu, &SimConfig::new(500, seed)).unwrap();
            let a = qv_estimate(&driver, &mu, &[0], 1.0).unwrap();
            (a.mean - 0.2) / a.stderr
        })
        .collect();
    let m = zs.iter().sum::<f64>() / zs.len() as f64;
    let v = zs.iter().map(|z| (z - m) * (z - m)).sum::<f64>() / (zs.len() - 1) as f64;
    assert!(m.abs() < 0.25 && (0.7..1.35).contains(&v), "mean z {m}, var z {v}");
}
