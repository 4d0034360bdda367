//! Reference solutions shared by the integration tests.
#![allow(dead_code)]

use relaxctl::MeanVarianceParams;

/// Optimal cost of the mean-variance preset (default parameters) over
/// deterministic allocations, as computed by [`mean_variance_oracle`] with
/// 100 000 RK4 steps. Frozen so that later code changes cannot move it.
pub const MEAN_VARIANCE_ORACLE: f64 = -1.0427013400267715;

/// Cost of the zero allocation, `-x0 e^{rho T}`.
pub fn mean_variance_baseline(p: &MeanVarianceParams) -> f64 {
    -p.x0 * (p.rate * p.horizon).exp()
}

fn rk4(y: f64, t: f64, h: f64, f: impl Fn(f64, f64) -> f64) -> f64 {
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * h, y + 0.5 * h * k1);
    let k3 = f(t + 0.5 * h, y + 0.5 * h * k2);
    let k4 = f(t + h, y + h * k3);
    y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Adjoint solution of the mean-variance problem over deterministic allocations.
///
/// The adjoints of the mean and of the variance solve `p_m' = -rho p_m`,
/// `p_m(T) = -1` and `p_v' = -2 rho p_v`, `p_v(T) = penalty`; the Hamiltonian
/// `p_m a (b - rho) + p_v a^2 sigma^2` is minimized by
/// `a*(t) = -p_m (b - rho) / (2 p_v sigma^2)`. The forward moment equations
/// `m' = rho m + a* (b - rho)`, `v' = 2 rho v + a*^2 sigma^2` then give the
/// cost `-m(T) + penalty v(T)`. Returns `(cost, a*(0), a*(T))`.
pub fn mean_variance_oracle(p: &MeanVarianceParams, steps: usize) -> (f64, f64, f64) {
    let (rho, b, sigma, pen, t_end) = (p.rate, p.appreciation, p.volatility, p.penalty, p.horizon);
    let h = t_end / steps as f64;
    // Backward sweep for the adjoints, stored on the grid.
    let mut pm = vec![0.0; steps + 1];
    let mut pv = vec![0.0; steps + 1];
    pm[steps] = -1.0;
    pv[steps] = pen;
    for k in (0..steps).rev() {
        let t = (k + 1) as f64 * h;
        pm[k] = rk4(pm[k + 1], t, -h, |_, y| -rho * y);
        pv[k] = rk4(pv[k + 1], t, -h, |_, y| -2.0 * rho * y);
    }
    let alloc = |k: usize| -pm[k] * (b - rho) / (2.0 * pv[k] * sigma * sigma);
    // Forward sweep; the allocation is linear-interpolated between grid points.
    let (mut m, mut v) = (p.x0, 0.0);
    for k in 0..steps {
        let t0 = k as f64 * h;
        let (a0, a1) = (alloc(k), alloc(k + 1));
        let a = |t: f64| a0 + (a1 - a0) * (t - t0) / h;
        m = rk4(m, t0, h, |t, y| rho * y + a(t) * (b - rho));
        v = rk4(v, t0, h, |t, y| 2.0 * rho * y + a(t) * a(t) * sigma * sigma);
    }
    (-m + pen * v, alloc(0), alloc(steps))
}
