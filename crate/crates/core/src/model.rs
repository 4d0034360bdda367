//! Coefficient bundles for controlled mean-field SDEs and named presets.
//!
//! A [`ModelSpec`] carries the drift `b(t, x, y, a)`, diffusion `sigma(t, x, y, a)`,
//! the mean-field maps `Psi`, `Phi` (dynamics) and `phi`, `lambda` (cost), the
//! running cost `h` and the terminal cost `g`. The `y` argument of each
//! coefficient is the empirical mean of the matching map over the ensemble.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// `(t, x, y, a, out)`: vector field written into `out`.
pub type FieldFn = Arc<dyn Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// `(x, out)`: mean-field map `R^d -> R^d`.
pub type MapFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// `(t, x, y, a)`: running cost.
pub type RunningFn = Arc<dyn Fn(f64, &[f64], &[f64], &[f64]) -> f64 + Send + Sync>;
/// `(x, y)`: terminal cost.
pub type TerminalFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Names accepted by [`lookup_model`].
pub const PRESETS: [&str; 6] = [
    "rademacher_ode",
    "fleming_drift",
    "fleming_drift_squared",
    "diffusion_counterexample",
    "mean_variance",
    "lipschitz_mf_test",
];

/// Coefficients of a controlled mean-field SDE plus its cost.
#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub dim: usize,
    pub action_dim: usize,
    pub x0: Vec<f64>,
    pub horizon: f64,
    /// Declared bound on `|b|, |sigma|, |Psi|, |Phi|, |h|` inside the boxes.
    pub bound: f64,
    /// Declared Lipschitz constant in `(x, y)`.
    pub lipschitz: f64,
    /// Per-coordinate state box `[lo, hi]` used by validation and exit accounting.
    pub state_box: (f64, f64),
    /// Per-coordinate action box used by validation sampling.
    pub action_box: (f64, f64),
    /// False when `sigma` does not depend on the action.
    pub control_in_diffusion: bool,
    drift: FieldFn,
    diffusion: FieldFn,
    psi: MapFn,
    phi: MapFn,
    varphi: MapFn,
    lambda: MapFn,
    running: RunningFn,
    terminal: TerminalFn,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("action_dim", &self.action_dim)
            .field("x0", &self.x0)
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

fn identity_map() -> MapFn {
    Arc::new(|x: &[f64], out: &mut [f64]| out.copy_from_slice(x))
}

impl ModelSpec {
    /// Starts a model with zero coefficients, identity mean-field maps and zero costs.
    pub fn builder(name: impl Into<String>, dim: usize, action_dim: usize) -> ModelBuilder {
        ModelBuilder {
            spec: ModelSpec {
                name: name.into(),
                dim,
                action_dim,
                x0: vec![0.0; dim],
                horizon: 1.0,
                bound: f64::INFINITY,
                lipschitz: f64::INFINITY,
                state_box: (-1.0, 1.0),
                action_box: (-1.0, 1.0),
                control_in_diffusion: true,
                drift: Arc::new(|_, _, _, _, out: &mut [f64]| out.fill(0.0)),
                diffusion: Arc::new(|_, _, _, _, out: &mut [f64]| out.fill(0.0)),
                psi: identity_map(),
                phi: identity_map(),
                varphi: identity_map(),
                lambda: identity_map(),
                running: Arc::new(|_, _, _, _| 0.0),
                terminal: Arc::new(|_, _| 0.0),
            },
        }
    }

    #[inline]
    pub fn drift(&self, t: f64, x: &[f64], y: &[f64], a: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, y, a, out)
    }

    /// Row-major `d x d` diffusion matrix.
    #[inline]
    pub fn diffusion(&self, t: f64, x: &[f64], y: &[f64], a: &[f64], out: &mut [f64]) {
        (self.diffusion)(t, x, y, a, out)
    }

    #[inline]
    pub fn map(&self, which: MeanField, x: &[f64], out: &mut [f64]) {
        match which {
            MeanField::Psi => (self.psi)(x, out),
            MeanField::Phi => (self.phi)(x, out),
            MeanField::Varphi => (self.varphi)(x, out),
            MeanField::Lambda => (self.lambda)(x, out),
        }
    }

    #[inline]
    pub fn running_cost(&self, t: f64, x: &[f64], y: &[f64], a: &[f64]) -> f64 {
        (self.running)(t, x, y, a)
    }

    #[inline]
    pub fn terminal_cost(&self, x: &[f64], y: &[f64]) -> f64 {
        (self.terminal)(x, y)
    }

    /// Copy with a different initial state.
    pub fn with_x0(mut self, x0: Vec<f64>) -> Self {
        self.x0 = x0;
        self
    }

    /// Copy with a different running cost.
    pub fn with_running_cost(
        mut self,
        h: impl Fn(f64, &[f64], &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.running = Arc::new(h);
        self
    }

    /// Copy with a different terminal cost.
    pub fn with_terminal_cost(
        mut self,
        g: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.terminal = Arc::new(g);
        self
    }
}

/// Which mean-field map an empirical mean refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MeanField {
    Psi,
    Phi,
    Varphi,
    Lambda,
}

pub struct ModelBuilder {
    spec: ModelSpec,
}

impl ModelBuilder {
    pub fn x0(mut self, x0: Vec<f64>) -> Self {
        self.spec.x0 = x0;
        self
    }

    pub fn horizon(mut self, t: f64) -> Self {
        self.spec.horizon = t;
        self
    }

    pub fn bound(mut self, b: f64) -> Self {
        self.spec.bound = b;
        self
    }

    pub fn lipschitz(mut self, l: f64) -> Self {
        self.spec.lipschitz = l;
        self
    }

    pub fn state_box(mut self, lo: f64, hi: f64) -> Self {
        self.spec.state_box = (lo, hi);
        self
    }

    pub fn action_box(mut self, lo: f64, hi: f64) -> Self {
        self.spec.action_box = (lo, hi);
        self
    }

    pub fn control_in_diffusion(mut self, yes: bool) -> Self {
        self.spec.control_in_diffusion = yes;
        self
    }

    pub fn drift(
        mut self,
        f: impl Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.spec.drift = Arc::new(f);
        self
    }

    pub fn diffusion(
        mut self,
        f: impl Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.spec.diffusion = Arc::new(f);
        self
    }

    pub fn mean_field(
        mut self,
        which: MeanField,
        f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        let f: MapFn = Arc::new(f);
        match which {
            MeanField::Psi => self.spec.psi = f,
            MeanField::Phi => self.spec.phi = f,
            MeanField::Varphi => self.spec.varphi = f,
            MeanField::Lambda => self.spec.lambda = f,
        }
        self
    }

    pub fn running_cost(
        mut self,
        h: impl Fn(f64, &[f64], &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.spec.running = Arc::new(h);
        self
    }

    pub fn terminal_cost(mut self, g: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.spec.terminal = Arc::new(g);
        self
    }

    pub fn build(self) -> Result<ModelSpec> {
        let s = &self.spec;
        if s.dim == 0 || s.action_dim == 0 {
            return Err(Error::Validation("state and action dimensions must be >= 1".into()));
        }
        if s.x0.len() != s.dim {
            return Err(Error::Validation(format!(
                "x0 has {} entries for d = {}",
                s.x0.len(),
                s.dim
            )));
        }
        if !(s.horizon.is_finite() && s.horizon > 0.0) {
            return Err(Error::Validation("horizon must be positive".into()));
        }
        if !(s.state_box.0 < s.state_box.1 && s.action_box.0 <= s.action_box.1) {
            return Err(Error::Validation("empty state or action box".into()));
        }
        Ok(self.spec)
    }
}

/// Market parameters of the mean-variance preset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanVarianceParams {
    /// Bond rate `rho_t`.
    pub rate: f64,
    /// Stock appreciation rate `b_t`.
    pub appreciation: f64,
    /// Stock volatility `sigma_t`.
    pub volatility: f64,
    /// Variance penalty.
    pub penalty: f64,
    pub x0: f64,
    pub horizon: f64,
}

impl Default for MeanVarianceParams {
    fn default() -> Self {
        Self {
            rate: 0.02,
            appreciation: 0.08,
            volatility: 0.2,
            penalty: 1.0,
            x0: 1.0,
            horizon: 1.0,
        }
    }
}

/// Wealth dynamics `dx = (rho x + a (b - rho)) dt + a sigma dW` with the
/// mean-field cost `E[-x_T + penalty (x_T - E x_T)^2]`.
pub fn mean_variance(p: MeanVarianceParams) -> Result<ModelSpec> {
    let MeanVarianceParams {
        rate,
        appreciation,
        volatility,
        penalty,
        ..
    } = p;
    ModelSpec::builder("mean_variance", 1, 1)
        .x0(vec![p.x0])
        .horizon(p.horizon)
        .state_box(0.0, 3.0)
        .action_box(0.0, 1.5)
        .bound((rate.abs() * 3.0 + 1.5 * (appreciation - rate).abs()).max(3.0))
        .lipschitz(rate.abs().max(1.0))
        .drift(move |_, x, _, a, out| out[0] = rate * x[0] + a[0] * (appreciation - rate))
        .diffusion(move |_, _, _, a, out| out[0] = a[0] * volatility)
        .terminal_cost(move |x, y| -x[0] + penalty * (x[0] - y[0]) * (x[0] - y[0]))
        .build()
}

/// Returns the named preset or lists the available ones.
pub fn lookup_model(name: &str) -> Result<ModelSpec> {
    match name {
        "rademacher_ode" => ModelSpec::builder(name, 1, 1)
            .state_box(-1.0, 1.0)
            .bound(1.0)
            .lipschitz(2.0)
            .control_in_diffusion(false)
            .drift(|_, _, _, a, out| out[0] = a[0])
            .running_cost(|_, x, _, _| x[0] * x[0])
            .build(),
        "fleming_drift" => fleming(name, |a| (1.0 - a) * (1.0 - a)),
        "fleming_drift_squared" => fleming(name, |a| (1.0 - a * a) * (1.0 - a * a)),
        "diffusion_counterexample" => ModelSpec::builder(name, 1, 1)
            .state_box(-5.0, 5.0)
            .bound(5.0)
            .lipschitz(1.0)
            .diffusion(|_, _, _, a, out| out[0] = a[0])
            .build(),
        "mean_variance" => mean_variance(MeanVarianceParams::default()),
        "lipschitz_mf_test" => ModelSpec::builder(name, 1, 1)
            .x0(vec![0.5])
            .state_box(-1.0, 1.0)
            .bound(2.5)
            .lipschitz(2.0)
            .control_in_diffusion(false)
            .drift(|_, x, y, a, out| out[0] = x[0].tanh() + 0.5 * y[0].tanh() + a[0])
            .diffusion(|_, x, y, _, out| out[0] = 1.0 + 0.5 * x[0].cos() + 0.25 * y[0].sin())
            .mean_field(MeanField::Psi, |x, out| out[0] = x[0].tanh())
            .mean_field(MeanField::Phi, |x, out| out[0] = x[0].tanh())
            .running_cost(|_, x, _, a| x[0] * x[0] + a[0] * a[0])
            .terminal_cost(|x, _| x[0] * x[0])
            .build(),
        _ => Err(Error::UnknownModel {
            name: name.to_string(),
            available: PRESETS.to_vec(),
        }),
    }
}

fn fleming(name: &str, action_cost: fn(f64) -> f64) -> Result<ModelSpec> {
    ModelSpec::builder(name, 1, 1)
        .state_box(-3.0, 3.0)
        .bound(13.0)
        .lipschitz(6.0)
        .control_in_diffusion(false)
        .drift(|_, _, _, a, out| out[0] = a[0])
        .diffusion(|_, _, _, _, out| out[0] = 1.0)
        .running_cost(move |_, _, y, a| y[0] * y[0] + action_cost(a[0]))
        .build()
}

/// Concatenation `(b, vec(sigma sigma^T), h)` at one point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentVector(pub Vec<f64>);

impl MomentVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Mean-field arguments of the coefficients at one time.
#[derive(Debug, Clone, Copy)]
pub struct MeanFieldArgs<'a> {
    pub psi: &'a [f64],
    pub phi: &'a [f64],
    pub varphi: &'a [f64],
}

/// Moment vector of dimension `d + d^2 + 1` at `(t, x, y, a)`.
pub fn moment_map(model: &ModelSpec, t: f64, x: &[f64], y: MeanFieldArgs<'_>, a: &[f64]) -> MomentVector {
    let d = model.dim;
    let mut out = vec![0.0; d + d * d + 1];
    model.drift(t, x, y.psi, a, &mut out[..d]);
    let mut sig = vec![0.0; d * d];
    model.diffusion(t, x, y.phi, a, &mut sig);
    for r in 0..d {
        for c in 0..d {
            out[d + r * d + c] = (0..d).map(|l| sig[r * d + l] * sig[c * d + l]).sum();
        }
    }
    out[d + d * d] = model.running_cost(t, x, y.varphi, a);
    MomentVector(out)
}

/// Worst observation of one coefficient during sampled validation.
#[derive(Debug, Clone, Serialize)]
pub struct CoefficientCheck {
    pub coefficient: &'static str,
    pub max_abs: f64,
    pub bound_witness: Vec<f64>,
    pub max_lipschitz_ratio: f64,
    pub lipschitz_witness: Vec<f64>,
    pub bound_ok: bool,
    pub lipschitz_ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub model: String,
    pub samples: usize,
    pub seed: u64,
    pub bound: f64,
    pub lipschitz: f64,
    pub checks: Vec<CoefficientCheck>,
    pub pass: bool,
}

impl ValidationReport {
    pub fn check(&self, coefficient: &str) -> Option<&CoefficientCheck> {
        self.checks.iter().find(|c| c.coefficient == coefficient)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Sampled boundedness and Lipschitz check inside the model's declared boxes.
///
/// Each sample draws `(t, x, y, a, x', y')`; for every coefficient the value at
/// `(x, y)` is compared against the declared bound and the increment against
/// `L (|x - x'| + |y - y'|)` with `t` and `a` held fixed. Violations are report
/// content; the call itself only fails on `samples == 0`.
pub fn validate_model(model: &ModelSpec, samples: usize, seed: u64) -> Result<ValidationReport> {
    if samples == 0 {
        return Err(Error::Validation("validation needs samples >= 1".into()));
    }
    let d = model.dim;
    let m = model.action_dim;
    let names = ["b", "sigma", "Psi", "Phi", "h"];
    let mut checks: Vec<CoefficientCheck> = names
        .iter()
        .map(|&n| CoefficientCheck {
            coefficient: n,
            max_abs: 0.0,
            bound_witness: vec![],
            max_lipschitz_ratio: 0.0,
            lipschitz_witness: vec![],
            bound_ok: true,
            lipschitz_ok: true,
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (slo, shi) = model.state_box;
    let (alo, ahi) = model.action_box;
    let draw = |rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64| -> Vec<f64> {
        (0..n)
            .map(|_| if hi > lo { rng.gen_range(lo..=hi) } else { lo })
            .collect()
    };
    let eval = |which: usize, t: f64, x: &[f64], y: &[f64], a: &[f64]| -> Vec<f64> {
        match which {
            0 => {
                let mut o = vec![0.0; d];
                model.drift(t, x, y, a, &mut o);
                o
            }
            1 => {
                let mut o = vec![0.0; d * d];
                model.diffusion(t, x, y, a, &mut o);
                o
            }
            2 => {
                let mut o = vec![0.0; d];
                model.map(MeanField::Psi, x, &mut o);
                o
            }
            3 => {
                let mut o = vec![0.0; d];
                model.map(MeanField::Phi, x, &mut o);
                o
            }
            _ => vec![model.running_cost(t, x, y, a)],
        }
    };
    for _ in 0..samples {
        let t = rng.gen_range(0.0..=model.horizon);
        let x = draw(&mut rng, d, slo, shi);
        let y = draw(&mut rng, d, slo, shi);
        let a = draw(&mut rng, m, alo, ahi);
        let x2 = draw(&mut rng, d, slo, shi);
        let y2 = draw(&mut rng, d, slo, shi);
        let witness: Vec<f64> = std::iter::once(t)
            .chain(x.iter().copied())
            .chain(y.iter().copied())
            .chain(a.iter().copied())
            .collect();
        let sep = dist(&x, &x2) + dist(&y, &y2);
        for (w, check) in checks.iter_mut().enumerate() {
            let f1 = eval(w, t, &x, &y, &a);
            let f2 = eval(w, t, &x2, &y2, &a);
            let size = norm(&f1);
            if size > check.max_abs || check.bound_witness.is_empty() {
                check.max_abs = size;
                check.bound_witness = witness.clone();
            }
            if size > model.bound * (1.0 + 1e-12) {
                check.bound_ok = false;
            }
            if sep > 0.0 {
                let ratio = dist(&f1, &f2) / sep;
                if ratio > check.max_lipschitz_ratio || check.lipschitz_witness.is_empty() {
                    check.max_lipschitz_ratio = ratio;
                    check.lipschitz_witness = witness
                        .iter()
                        .copied()
                        .chain(x2.iter().copied())
                        .chain(y2.iter().copied())
                        .collect();
                }
                if ratio > model.lipschitz * (1.0 + 1e-12) {
                    check.lipschitz_ok = false;
                }
            }
        }
    }
    let pass = checks.iter().all(|c| c.bound_ok && c.lipschitz_ok);
    Ok(ValidationReport {
        model: model.name.clone(),
        samples,
        seed,
        bound: model.bound,
        lipschitz: model.lipschitz,
        checks,
        pass,
    })
}
