//! The drift-diffusion-jump operator on test functions, and the
//! statistical checks built on it: the expectation identity for
//! `f(X_t, alpha(t))` and the short-time transition law of the switching
//! component.

use rayon::prelude::*;
use serde::Serialize;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::history::Segment;
use crate::integrator::{run_path, PathObserver, PathStatus, ProcessKind, SimConfig};
use crate::model::{HybridModel, Regime};
use crate::rng::derive_seed;
use crate::stats::{binomial_se, estimate_from_values, McEstimate};

type ValueFn = Box<dyn Fn(&[f64], Regime) -> f64 + Send + Sync>;
type GradientFn = Box<dyn Fn(&[f64], Regime, &mut [f64]) + Send + Sync>;
type HessianFn = Box<dyn Fn(&[f64], Regime, &mut [f64]) + Send + Sync>;

/// A bounded test function with analytic gradient and Hessian. The
/// derivatives are supplied, not differenced, so the hot path stays
/// cheap; `self_check` guards against inconsistent user input.
pub struct TestFunction {
    value: ValueFn,
    gradient: GradientFn,
    hessian: HessianFn,
    /// Asserted sup of |value|, used to bound truncated jump-series tails.
    pub bound: f64,
}

impl TestFunction {
    pub fn new(
        value: impl Fn(&[f64], Regime) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64], Regime, &mut [f64]) + Send + Sync + 'static,
        hessian: impl Fn(&[f64], Regime, &mut [f64]) + Send + Sync + 'static,
        bound: f64,
    ) -> Self {
        TestFunction {
            value: Box::new(value),
            gradient: Box::new(gradient),
            hessian: Box::new(hessian),
            bound,
        }
    }

    #[inline]
    pub fn value(&self, x: &[f64], i: Regime) -> f64 {
        (self.value)(x, i)
    }

    #[inline]
    pub fn gradient_into(&self, x: &[f64], i: Regime, out: &mut [f64]) {
        (self.gradient)(x, i, out);
    }

    #[inline]
    pub fn hessian_into(&self, x: &[f64], i: Regime, out: &mut [f64]) {
        (self.hessian)(x, i, out);
    }

    /// Central-difference consistency check of the supplied derivatives at
    /// the given points, relative tolerance `1e-4`.
    pub fn self_check(&self, points: &[Vec<f64>], regimes: &[Regime]) -> Result<()> {
        let tol = 1e-4;
        for x in points {
            let n = x.len();
            let h = 1e-5;
            let mut grad = vec![0.0; n];
            let mut hess = vec![0.0; n * n];
            for &i in regimes {
                self.gradient_into(x, i, &mut grad);
                self.hessian_into(x, i, &mut hess);
                let mut xp = x.clone();
                let mut xm = x.clone();
                for k in 0..n {
                    xp[k] = x[k] + h;
                    xm[k] = x[k] - h;
                    let fd = (self.value(&xp, i) - self.value(&xm, i)) / (2.0 * h);
                    let scale = grad[k].abs().max(fd.abs()).max(1.0);
                    if (fd - grad[k]).abs() > tol * scale {
                        return Err(Error::Parameter(format!(
                            "gradient component {k} disagrees with finite differences \
                             at {x:?}, regime {i}: analytic {}, fd {fd}",
                            grad[k]
                        )));
                    }
                    // second derivative, diagonal only
                    let fdd = (self.value(&xp, i) - 2.0 * self.value(x, i) + self.value(&xm, i))
                        / (h * h);
                    let scale = hess[k * n + k].abs().max(fdd.abs()).max(1.0);
                    if (fdd - hess[k * n + k]).abs() > tol * scale.max(1.0) * 10.0 {
                        return Err(Error::Parameter(format!(
                            "hessian diagonal {k} disagrees with finite differences \
                             at {x:?}, regime {i}: analytic {}, fd {fdd}",
                            hess[k * n + k]
                        )));
                    }
                    xp[k] = x[k];
                    xm[k] = x[k];
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GeneratorValue {
    pub value: f64,
    /// Bound on the dropped jump-series tail: twice the function bound
    /// times the unenumerated intensity mass.
    pub jump_tail_bound: f64,
}

pub struct GeneratorWorkspace {
    grad: Vec<f64>,
    hess: Vec<f64>,
    drift: Vec<f64>,
    diff: Vec<f64>,
}

impl GeneratorWorkspace {
    pub fn new(model: &HybridModel) -> Self {
        let n = model.dim_n();
        let d = model.dim_d();
        GeneratorWorkspace {
            grad: vec![0.0; n],
            hess: vec![0.0; n * n],
            drift: vec![0.0; n],
            diff: vec![0.0; n * d],
        }
    }
}

/// Evaluate the operator: gradient term, half-trace diffusion term, and
/// the regime-jump series truncated once partial intensity sums reach the
/// declared total within the model's tail tolerance.
pub fn apply_generator(
    f: &TestFunction,
    model: &HybridModel,
    seg: &Segment,
    i: Regime,
) -> Result<GeneratorValue> {
    let mut ws = GeneratorWorkspace::new(model);
    apply_generator_ws(f, model, seg, i, &mut ws)
}

pub fn apply_generator_ws(
    f: &TestFunction,
    model: &HybridModel,
    seg: &Segment,
    i: Regime,
    ws: &mut GeneratorWorkspace,
) -> Result<GeneratorValue> {
    let n = model.dim_n();
    let d = model.dim_d();
    let x = seg.latest();
    f.gradient_into(x, i, &mut ws.grad);
    model.drift_into(x, i, &mut ws.drift);
    let mut acc: f64 = ws.grad.iter().zip(&ws.drift).map(|(g, b)| g * b).sum();

    f.hessian_into(x, i, &mut ws.hess);
    model.diffusion_into(x, i, &mut ws.diff);
    // (1/2) trace(hess * sigma sigma^T)
    for k in 0..n {
        let row_k = &ws.diff[k * d..(k + 1) * d];
        for l in 0..n {
            let row_l = &ws.diff[l * d..(l + 1) * d];
            let a_kl: f64 = row_k.iter().zip(row_l).map(|(u, v)| u * v).sum();
            if a_kl != 0.0 {
                acc += 0.5 * ws.hess[k * n + l] * a_kl;
            }
        }
    }

    // Jump series, lazily enumerated against the declared total.
    let total = model.total_intensity(seg, i);
    if !total.is_finite() || total < 0.0 {
        return Err(Error::NonFinite(format!("total intensity {total} at regime {i}")));
    }
    let mut tail = 0.0;
    if total > model.tail_tolerance() {
        let f_here = f.value(x, i);
        let mut mass = 0.0;
        let mut reached = false;
        for j in (1..).filter(|&j| j != i.get()).take(model.j_max() as usize) {
            let j = Regime::of(j);
            let q = model.intensity(seg, i, j);
            if !q.is_finite() || q < 0.0 {
                return Err(Error::NegativeIntensity { from: i.get(), to: j.get(), value: q });
            }
            if q > 0.0 {
                acc += q * (f.value(x, j) - f_here);
                mass += q;
            }
            if mass >= total - model.tail_tolerance() {
                reached = true;
                break;
            }
        }
        if !reached {
            return Err(Error::Truncation(format!(
                "jump series from regime {i} left mass {:e} after {} targets",
                total - mass,
                model.j_max()
            )));
        }
        tail = 2.0 * f.bound * (total - mass).max(0.0);
    }
    Ok(GeneratorValue { value: acc, jump_tail_bound: tail })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DynkinEstimate {
    /// Monte Carlo residual of the expectation identity; compatible with
    /// zero when the engine realizes the generator's law up to
    /// discretization bias.
    pub residual: McEstimate,
    pub truncated: u64,
}

struct DynkinObserver<'a> {
    f: &'a TestFunction,
    model: &'a HybridModel,
    ws: GeneratorWorkspace,
    dt: f64,
    n_steps: usize,
    integral: f64,
    terminal: f64,
    error: Option<Error>,
}

impl PathObserver for DynkinObserver<'_> {
    fn on_grid(&mut self, step: usize, _t: f64, seg: &Segment, regime: Regime) {
        if self.error.is_some() {
            return;
        }
        if step < self.n_steps {
            match apply_generator_ws(self.f, self.model, seg, regime, &mut self.ws) {
                Ok(gv) => self.integral += gv.value * self.dt,
                Err(e) => self.error = Some(e),
            }
        }
        self.terminal = self.f.value(seg.latest(), regime);
    }
}

/// Monte Carlo residual of the expectation identity
/// `E f(X_T, alpha_T) - f(x_0, i_0) - E int_0^T Lf(X_s, alpha(s-)) ds`,
/// with both expectations over the same paths (common random numbers) and
/// the integral by the left-endpoint rule at grid resolution.
pub fn dynkin_residual(
    f: &TestFunction,
    model: &HybridModel,
    phi0: &Segment,
    i0: Regime,
    cfg: &SimConfig,
    n: u64,
) -> Result<DynkinEstimate> {
    let f0 = f.value(phi0.latest(), i0);
    let truncated = AtomicU64::new(0);
    let values: Vec<Option<f64>> = (0..n)
        .into_par_iter()
        .map(|path| {
            let mut obs = DynkinObserver {
                f,
                model,
                ws: GeneratorWorkspace::new(model),
                dt: cfg.dt_eff(),
                n_steps: cfg.n_steps(),
                integral: 0.0,
                terminal: 0.0,
                error: None,
            };
            match run_path(model, phi0, i0, cfg, path, ProcessKind::Hybrid, &mut obs) {
                Ok(out) if out.status == PathStatus::Completed && obs.error.is_none() => {
                    Some(obs.terminal - f0 - obs.integral)
                }
                _ => {
                    truncated.fetch_add(1, Ordering::Relaxed);
                    None
                }
            }
        })
        .collect();
    let residual = estimate_from_values(&values, cfg.master_seed, n)?;
    Ok(DynkinEstimate { residual, truncated: truncated.into_inner() })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct IntensityProbeRow {
    pub delta: f64,
    /// Estimate of `P{alpha(delta) = j} / delta`.
    pub rate_estimate: f64,
    pub rate_se: f64,
    /// Estimate of `(1 - P{alpha(delta) = i}) / delta`, the diagonal law.
    pub exit_rate_estimate: f64,
    pub exit_rate_se: f64,
    pub n: u64,
}

/// Short-time transition-rate probe: for each horizon `delta`, run `n`
/// short simulations from the sampled initial function and estimate the
/// off-diagonal and diagonal transition rates. Each row integrates on a
/// single grid step of size `delta`; switching candidates inside the step
/// are still placed at their exact times.
pub fn intensity_probe<F>(
    model: &HybridModel,
    initial: F,
    i: Regime,
    j: Regime,
    deltas: &[f64],
    n: u64,
    master_seed: u64,
) -> Result<Vec<IntensityProbeRow>>
where
    F: Fn(f64, &mut [f64]) + Sync,
{
    if i == j {
        return Err(Error::Parameter("probe requires j != i".into()));
    }
    let mut rows = Vec::with_capacity(deltas.len());
    for (idx, &delta) in deltas.iter().enumerate() {
        if !(delta > 0.0) {
            return Err(Error::Parameter(format!("delta must be positive, got {delta}")));
        }
        let cfg = SimConfig::new(delta, delta, derive_seed(master_seed, idx as u64))?;
        let phi0 = cfg.initial_segment(&initial, model.delay_r(), model.dim_n())?;
        let hits = AtomicU64::new(0);
        let exits = AtomicU64::new(0);
        let kept = AtomicU64::new(0);
        (0..n).into_par_iter().try_for_each(|path| -> Result<()> {
            let mut obs = crate::stats::TerminalObserver::new(i);
            let out = run_path(model, &phi0, i, &cfg, path, ProcessKind::Hybrid, &mut obs)?;
            if out.status == PathStatus::Completed {
                kept.fetch_add(1, Ordering::Relaxed);
                if obs.regime == j {
                    hits.fetch_add(1, Ordering::Relaxed);
                }
                if obs.regime != i {
                    exits.fetch_add(1, Ordering::Relaxed);
                }
            }
            Ok(())
        })?;
        let m = kept.into_inner();
        if m == 0 {
            return Err(Error::DegenerateEstimate { n });
        }
        let p_hit = hits.into_inner() as f64 / m as f64;
        let p_exit = exits.into_inner() as f64 / m as f64;
        rows.push(IntensityProbeRow {
            delta,
            rate_estimate: p_hit / delta,
            rate_se: binomial_se(p_hit, m) / delta,
            exit_rate_estimate: p_exit / delta,
            exit_rate_se: binomial_se(p_exit, m) / delta,
            n: m,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quiet_model(kernel_12: f64) -> HybridModel {
        HybridModel::builder(1, 1, 0.0)
            .drift(|_, _, out| out[0] = 0.0)
            .diffusion(|_, _, out| out[0] = 1.0)
            .intensity(move |_, i, j| {
                if i.get() == 1 && j.get() == 2 {
                    kernel_12
                } else {
                    0.0
                }
            })
            .total_intensity(move |_, i| if i.get() == 1 { kernel_12 } else { 0.0 })
            .global_bound(kernel_12.max(1.0))
            .build()
            .unwrap()
    }

    fn x_squared() -> TestFunction {
        TestFunction::new(
            |x, _| x[0] * x[0],
            |x, _, g| g[0] = 2.0 * x[0],
            |_, _, h| h[0] = 2.0,
            f64::INFINITY,
        )
    }

    #[test]
    fn generator_second_order_term() {
        // f = x^2, b = 0, sigma = 1, no switching: Lf = 1.
        let model = quiet_model(0.0);
        let seg = Segment::constant(&[0.3], 0.0, 0.1).unwrap();
        let gv = apply_generator(&x_squared(), &model, &seg, Regime::of(1)).unwrap();
        assert_relative_eq!(gv.value, 1.0, max_relative = 1e-14);
    }

    #[test]
    fn generator_first_order_term() {
        // f = x, b(x) = 2x at x = 3: Lf = 6.
        let model = HybridModel::builder(1, 1, 0.0)
            .drift(|x, _, out| out[0] = 2.0 * x[0])
            .diffusion(|_, _, out| out[0] = 0.7)
            .intensity(|_, _, _| 0.0)
            .total_intensity(|_, _| 0.0)
            .global_bound(0.0)
            .build()
            .unwrap();
        let f = TestFunction::new(
            |x, _| x[0],
            |_, _, g| g[0] = 1.0,
            |_, _, h| h[0] = 0.0,
            f64::INFINITY,
        );
        let seg = Segment::constant(&[3.0], 0.0, 0.1).unwrap();
        let gv = apply_generator(&f, &model, &seg, Regime::of(1)).unwrap();
        assert_relative_eq!(gv.value, 6.0, max_relative = 1e-14);
    }

    #[test]
    fn generator_jump_term() {
        // f = 1{i = 2}, b = sigma = 0, q_12 = 0.7: Lf(., 1) = 0.7.
        let model = HybridModel::builder(1, 1, 0.0)
            .drift(|_, _, out| out[0] = 0.0)
            .diffusion(|_, _, out| out[0] = 0.0)
            .intensity(|_, i, j| if i.get() == 1 && j.get() == 2 { 0.7 } else { 0.0 })
            .total_intensity(|_, i| if i.get() == 1 { 0.7 } else { 0.0 })
            .global_bound(0.7)
            .build()
            .unwrap();
        let f = TestFunction::new(
            |_, i| if i.get() == 2 { 1.0 } else { 0.0 },
            |_, _, g| g[0] = 0.0,
            |_, _, h| h[0] = 0.0,
            1.0,
        );
        let seg = Segment::constant(&[0.0], 0.0, 0.1).unwrap();
        let gv = apply_generator(&f, &model, &seg, Regime::of(1)).unwrap();
        assert_relative_eq!(gv.value, 0.7, max_relative = 1e-14);
        assert!(gv.jump_tail_bound <= 2.0 * 1e-12);
    }

    #[test]
    fn generator_is_linear() {
        let model = quiet_model(0.4);
        let seg = Segment::constant(&[0.7], 0.0, 0.1).unwrap();
        let f = TestFunction::new(
            |x, i| x[0].sin() + i.get() as f64,
            |x, _, g| g[0] = x[0].cos(),
            |x, _, h| h[0] = -x[0].sin(),
            10.0,
        );
        let g = x_squared();
        let (a, b) = (2.5, -1.25);
        let combo = TestFunction::new(
            move |x, i| a * (x[0].sin() + i.get() as f64) + b * (x[0] * x[0]),
            move |x, _, gr| gr[0] = a * x[0].cos() + b * 2.0 * x[0],
            move |x, _, h| h[0] = -a * x[0].sin() + b * 2.0,
            f64::INFINITY,
        );
        let i = Regime::of(1);
        let lf = apply_generator(&f, &model, &seg, i).unwrap().value;
        let lg = apply_generator(&g, &model, &seg, i).unwrap().value;
        let lc = apply_generator(&combo, &model, &seg, i).unwrap().value;
        assert_relative_eq!(lc, a * lf + b * lg, max_relative = 1e-12);
    }

    #[test]
    fn generator_vanishes_on_constants() {
        let model = quiet_model(0.9);
        let seg = Segment::constant(&[0.2], 0.0, 0.1).unwrap();
        let c = TestFunction::new(|_, _| 4.2, |_, _, g| g[0] = 0.0, |_, _, h| h[0] = 0.0, 4.2);
        let gv = apply_generator(&c, &model, &seg, Regime::of(1)).unwrap();
        assert_eq!(gv.value, 0.0);
    }

    #[test]
    fn self_check_accepts_consistent_and_rejects_wrong_gradient() {
        let good = TestFunction::new(
            |x, _| (x[0] * 0.7).sin(),
            |x, _, g| g[0] = 0.7 * (x[0] * 0.7).cos(),
            |x, _, h| h[0] = -0.49 * (x[0] * 0.7).sin(),
            1.0,
        );
        let pts = vec![vec![0.0], vec![0.5], vec![-1.2]];
        good.self_check(&pts, &[Regime::of(1)]).unwrap();

        let bad = TestFunction::new(
            |x, _| (x[0] * 0.7).sin(),
            |x, _, g| g[0] = (x[0] * 0.7).cos(), // missing chain factor
            |x, _, h| h[0] = -0.49 * (x[0] * 0.7).sin(),
            1.0,
        );
        assert!(bad.self_check(&pts, &[Regime::of(1)]).is_err());
    }

    #[test]
    fn dynkin_residual_zero_for_deterministic_constant_path() {
        // b = sigma = 0 and no switching: the residual is exactly zero.
        let model = HybridModel::builder(1, 1, 0.0)
            .drift(|_, _, out| out[0] = 0.0)
            .diffusion(|_, _, out| out[0] = 0.0)
            .intensity(|_, _, _| 0.0)
            .total_intensity(|_, _| 0.0)
            .global_bound(0.0)
            .build()
            .unwrap();
        let cfg = SimConfig::new(0.05, 1.0, 3).unwrap();
        let phi0 = cfg.constant_segment(&[1.0], 0.0).unwrap();
        let est = dynkin_residual(&x_squared(), &model, &phi0, Regime::of(1), &cfg, 16).unwrap();
        assert_eq!(est.residual.mean, 0.0);
        assert_eq!(est.residual.se, 0.0);
    }

    #[test]
    fn intensity_probe_zero_kernel() {
        let model = quiet_model(0.0);
        let rows = intensity_probe(
            &model,
            |_, out| out[0] = 1.0,
            Regime::of(1),
            Regime::of(2),
            &[0.01],
            200,
            5,
        )
        .unwrap();
        assert_eq!(rows[0].rate_estimate, 0.0);
        assert_eq!(rows[0].exit_rate_estimate, 0.0);
    }
}
