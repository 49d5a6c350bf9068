//! Ready-made model builders: a stochastic-logistic population model with
//! birth-death switching driven by weighted history integrals, a pollution
//! accumulation model with consumption policy and welfare functional, and
//! a regime-switching linear-quadratic system with fixed feedback gain.
//! A configurable constant-kernel model rounds these out for tests and
//! scenario files.

use rayon::prelude::*;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::history::Segment;
use crate::integrator::{run_path, PathObserver, PathStatus, ProcessKind, SimConfig};
use crate::model::{BoundSpec, HybridModel, Regime};
use crate::stats::{estimate_from_values, McEstimate};

type RegimeMap = Box<dyn Fn(Regime) -> f64 + Send + Sync>;
type WeightMap = Box<dyn Fn(Regime, f64) -> f64 + Send + Sync>;
type StateMap = Box<dyn Fn(f64, Regime) -> f64 + Send + Sync>;

/// Parameters of the logistic population model. The micro-species density
/// follows a logistic diffusion whose coefficients switch with the macro
/// population, and the macro population is a birth-death process whose
/// rates integrate the recent density history against per-regime weights:
/// up-rate `int_{-r}^{0} beta(i, t) X(t) dt`, down-rate the same with
/// `delta`. Regime 1 is the population floor: its down-rate is suppressed.
pub struct LogisticParams {
    pub growth: RegimeMap,
    pub competition: RegimeMap,
    pub noise: RegimeMap,
    pub beta_weight: WeightMap,
    pub delta_weight: WeightMap,
    /// Declared sup of the weight functions, backing the local intensity
    /// bound.
    pub beta_weight_sup: f64,
    pub delta_weight_sup: f64,
    pub delay_r: f64,
}

impl LogisticParams {
    /// Constant coefficients and constant weights.
    pub fn constant(
        a: f64,
        b: f64,
        sigma: f64,
        beta: f64,
        delta: f64,
        delay_r: f64,
    ) -> Self {
        LogisticParams {
            growth: Box::new(move |_| a),
            competition: Box::new(move |_| b),
            noise: Box::new(move |_| sigma),
            beta_weight: Box::new(move |_, _| beta),
            delta_weight: Box::new(move |_, _| delta),
            beta_weight_sup: beta,
            delta_weight_sup: delta,
            delay_r,
        }
    }
}

/// Trapezoid weight of grid index `k` in a segment of length `len`.
#[inline]
fn trapezoid_weight(k: usize, len: usize, dt: f64) -> f64 {
    if len == 1 {
        0.0
    } else if k == 0 || k + 1 == len {
        0.5 * dt
    } else {
        dt
    }
}

fn validate_weights(p: &LogisticParams) -> Result<()> {
    let probes = 33;
    for i in 1..=8u32 {
        let i = Regime::of(i);
        if (p.growth)(i) <= 0.0 || (p.competition)(i) <= 0.0 || (p.noise)(i) <= 0.0 {
            return Err(Error::Parameter(format!(
                "logistic coefficients must be positive at regime {i}"
            )));
        }
        for k in 0..probes {
            let lag = -p.delay_r * k as f64 / (probes - 1) as f64;
            let b = (p.beta_weight)(i, lag);
            let d = (p.delta_weight)(i, lag);
            if b < 0.0 || d < 0.0 {
                return Err(Error::Parameter(format!(
                    "negative weight at regime {i}, lag {lag}: beta {b}, delta {d}"
                )));
            }
            if b > p.beta_weight_sup * (1.0 + 1e-9) || d > p.delta_weight_sup * (1.0 + 1e-9) {
                return Err(Error::Parameter(format!(
                    "weight exceeds its declared sup at regime {i}, lag {lag}"
                )));
            }
        }
    }
    Ok(())
}

/// Weighted history integral of the (density-scale) segment by the
/// trapezoid rule; `log_transformed` exponentiates stored values first.
fn weighted_integral(
    seg: &Segment,
    i: Regime,
    weight: &(dyn Fn(Regime, f64) -> f64 + Send + Sync),
    log_transformed: bool,
) -> f64 {
    let len = seg.len();
    let dt = seg.grid_dt();
    let mut acc = 0.0;
    for k in 0..len {
        let w = trapezoid_weight(k, len, dt);
        if w == 0.0 {
            continue;
        }
        let v = seg.grid_value(k)[0];
        let density = if log_transformed { v.exp() } else { v };
        acc += w * weight(i, seg.lag_at(k)) * density;
    }
    acc
}

/// Build the logistic model. With `log_transformed` the state is the log
/// density: drift `a - sigma^2/2 - b e^y` with additive noise, and the
/// kernels integrate `e^y`, so densities stay positive by construction.
pub fn build_logistic(p: LogisticParams, log_transformed: bool) -> Result<HybridModel> {
    validate_weights(&p)?;
    let LogisticParams {
        growth,
        competition,
        noise,
        beta_weight,
        delta_weight,
        beta_weight_sup,
        delta_weight_sup,
        delay_r,
    } = p;
    let growth = Arc::new(growth);
    let competition = Arc::new(competition);
    let noise = Arc::new(noise);
    let beta_weight = Arc::new(beta_weight);
    let delta_weight = Arc::new(delta_weight);

    let weight_sup = beta_weight_sup + delta_weight_sup;
    let bound: BoundSpec = if log_transformed {
        let r = delay_r;
        BoundSpec::Local { bound_fn: Box::new(move |h| weight_sup * r * h.exp()) }
    } else {
        let r = delay_r;
        BoundSpec::Local { bound_fn: Box::new(move |h| weight_sup * r * h) }
    };

    let drift: Box<dyn Fn(&[f64], Regime, &mut [f64]) + Send + Sync> = if log_transformed {
        let growth = growth.clone();
        let competition = competition.clone();
        let noise = noise.clone();
        Box::new(move |x, i, out| {
            let s = noise(i);
            out[0] = growth(i) - 0.5 * s * s - competition(i) * x[0].exp();
        })
    } else {
        let growth = growth.clone();
        let competition = competition.clone();
        Box::new(move |x, i, out| {
            out[0] = x[0] * (growth(i) - competition(i) * x[0]);
        })
    };
    let diffusion: Box<dyn Fn(&[f64], Regime, &mut [f64]) + Send + Sync> = if log_transformed {
        let noise = noise.clone();
        Box::new(move |_, i, out| out[0] = noise(i))
    } else {
        let noise = noise.clone();
        Box::new(move |x, i, out| out[0] = noise(i) * x[0])
    };

    let bw = beta_weight.clone();
    let dw = delta_weight.clone();
    let intensity = move |seg: &Segment, i: Regime, j: Regime| -> f64 {
        if j.get() == i.get() + 1 {
            weighted_integral(seg, i, bw.as_ref().as_ref(), log_transformed)
        } else if j.get() + 1 == i.get() && i.get() >= 2 {
            weighted_integral(seg, i, dw.as_ref().as_ref(), log_transformed)
        } else {
            0.0
        }
    };
    let bw = beta_weight.clone();
    let dw = delta_weight.clone();
    let total = move |seg: &Segment, i: Regime| -> f64 {
        let up = weighted_integral(seg, i, bw.as_ref().as_ref(), log_transformed);
        let down = if i.get() >= 2 {
            weighted_integral(seg, i, dw.as_ref().as_ref(), log_transformed)
        } else {
            0.0
        };
        up + down
    };

    let mut builder = HybridModel::builder(1, 1, delay_r)
        .intensity(intensity)
        .total_intensity(total)
        .tail_tolerance(crate::model::DEFAULT_TAIL_TOLERANCE);
    builder = match bound {
        BoundSpec::Global { m } => builder.global_bound(m),
        BoundSpec::Local { bound_fn } => {
            let f = bound_fn;
            builder.local_bound(move |h| f(h))
        }
    };
    builder
        .drift(move |x, i, out| drift(x, i, out))
        .diffusion(move |x, i, out| diffusion(x, i, out))
        .build()
}

/// Parameters of the pollution accumulation model: the stock decays at a
/// regime-dependent rate and grows with the consumption policy; welfare
/// is utility of consumption net of disutility of the stock.
pub struct PollutionParams {
    pub decay: RegimeMap,
    pub noise: StateMap,
    /// Feedback consumption policy, constrained to `[0, consumption_cap]`.
    pub policy: StateMap,
    pub consumption_cap: f64,
    /// Utility exponent in `U(c) = c^kappa / kappa`, in (0, 1).
    pub utility_kappa: f64,
    /// Disutility of the stock; default `x^2`.
    pub disutility: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub kernel: Box<dyn Fn(&Segment, Regime, Regime) -> f64 + Send + Sync>,
    pub kernel_total: Box<dyn Fn(&Segment, Regime) -> f64 + Send + Sync>,
    pub bound: BoundSpec,
    pub delay_r: f64,
}

/// Parameters are consumed because the model owns the closures; the
/// welfare ingredients come back alongside the model.
pub fn build_pollution(p: PollutionParams) -> Result<(HybridModel, WelfareSpec)> {
    if !(p.consumption_cap > 0.0) {
        return Err(Error::Parameter("consumption cap must be positive".into()));
    }
    if !(p.utility_kappa > 0.0 && p.utility_kappa < 1.0) {
        return Err(Error::Parameter("utility exponent must lie in (0, 1)".into()));
    }
    for i in 1..=8u32 {
        let i = Regime::of(i);
        if (p.decay)(i) <= 0.0 {
            return Err(Error::Parameter(format!("decay rate must be positive at regime {i}")));
        }
        for &x in &[0.0, 0.5, 1.0, 2.0, 5.0] {
            let c = (p.policy)(x, i);
            if !(0.0..=p.consumption_cap * (1.0 + 1e-12)).contains(&c) {
                return Err(Error::Parameter(format!(
                    "policy value {c} at (x = {x}, regime {i}) outside [0, {}]",
                    p.consumption_cap
                )));
            }
        }
    }
    let policy = Arc::new(p.policy);
    let decay = p.decay;
    let noise = p.noise;
    let drift_policy = policy.clone();
    let model = HybridModel::builder(1, 1, p.delay_r)
        .drift(move |x, i, out| out[0] = drift_policy(x[0], i) - decay(i) * x[0])
        .diffusion(move |x, i, out| out[0] = noise(x[0], i))
        .intensity(p.kernel)
        .total_intensity(p.kernel_total);
    let model = match p.bound {
        BoundSpec::Global { m } => model.global_bound(m),
        BoundSpec::Local { bound_fn } => model.local_bound(move |h| bound_fn(h)),
    }
    .build()?;
    let kappa = p.utility_kappa;
    Ok((
        model,
        WelfareSpec { policy, utility_kappa: kappa, disutility: Arc::new(p.disutility) },
    ))
}

/// The welfare functional's ingredients, shared with the evaluator.
#[derive(Clone)]
pub struct WelfareSpec {
    pub policy: Arc<StateMap>,
    pub utility_kappa: f64,
    pub disutility: Arc<Box<dyn Fn(f64) -> f64 + Send + Sync>>,
}

impl WelfareSpec {
    pub fn utility(&self, c: f64) -> f64 {
        if c <= 0.0 {
            0.0
        } else {
            c.powf(self.utility_kappa) / self.utility_kappa
        }
    }
}

struct RunningIntegral<'a> {
    dt: f64,
    n_steps: usize,
    acc: f64,
    integrand: &'a (dyn Fn(&[f64], Regime) -> f64 + Sync),
    terminal: Option<(Vec<f64>, Regime)>,
}

impl PathObserver for RunningIntegral<'_> {
    fn on_grid(&mut self, step: usize, _t: f64, seg: &Segment, regime: Regime) {
        if step < self.n_steps {
            self.acc += (self.integrand)(seg.latest(), regime) * self.dt;
        }
        match &mut self.terminal {
            Some((x, r)) => {
                x.copy_from_slice(seg.latest());
                *r = regime;
            }
            None => self.terminal = Some((seg.latest().to_vec(), regime)),
        }
    }
}

fn path_integral_estimate(
    model: &HybridModel,
    phi0: &Segment,
    i0: Regime,
    cfg: &SimConfig,
    n: u64,
    integrand: &(dyn Fn(&[f64], Regime) -> f64 + Sync),
    terminal: &(dyn Fn(&[f64], Regime) -> f64 + Sync),
    time_average: bool,
) -> Result<(McEstimate, u64)> {
    let truncated = AtomicU64::new(0);
    let values: Vec<Option<f64>> = (0..n)
        .into_par_iter()
        .map(|path| {
            let mut obs = RunningIntegral {
                dt: cfg.dt_eff(),
                n_steps: cfg.n_steps(),
                acc: 0.0,
                integrand,
                terminal: None,
            };
            match run_path(model, phi0, i0, cfg, path, ProcessKind::Hybrid, &mut obs) {
                Ok(out) if out.status == PathStatus::Completed => {
                    let (x, r) = obs.terminal.as_ref().expect("visited nodes");
                    let mut v = obs.acc + terminal(x, *r);
                    if time_average {
                        v /= cfg.horizon_t;
                    }
                    Some(v)
                }
                _ => {
                    truncated.fetch_add(1, Ordering::Relaxed);
                    None
                }
            }
        })
        .collect();
    let est = estimate_from_values(&values, cfg.master_seed, n)?;
    Ok((est, truncated.into_inner()))
}

/// Time-average welfare `(1/T) E int_0^T [U(c(X,alpha)) - D(X)] dt` under
/// the fixed policy, by the left-endpoint rule.
pub fn evaluate_welfare(
    model: &HybridModel,
    spec: &WelfareSpec,
    phi0: &Segment,
    i0: Regime,
    cfg: &SimConfig,
    n: u64,
) -> Result<(McEstimate, u64)> {
    let spec = spec.clone();
    let integrand =
        move |x: &[f64], i: Regime| spec.utility((spec.policy)(x[0], i)) - (spec.disutility)(x[0]);
    path_integral_estimate(model, phi0, i0, cfg, n, &integrand, &|_, _| 0.0, true)
}

/// Regime-switching linear system with fixed feedback `u = -gain x`.
/// Per-regime matrix tables are indexed from regime 1; regimes beyond the
/// table reuse its last entry.
pub struct LqgParams {
    pub n1: usize,
    pub n2: usize,
    pub d: usize,
    /// State matrices `A(i)`, row-major `n1 x n1`.
    pub a_mats: Vec<Vec<f64>>,
    /// Input matrices `B(i)`, `n1 x n2`.
    pub b_mats: Vec<Vec<f64>>,
    /// Noise matrices, `n1 x d`.
    pub sigma_mats: Vec<Vec<f64>>,
    /// Running state cost `M(i)`, positive semidefinite `n1 x n1`.
    pub state_cost: Vec<Vec<f64>>,
    /// Running control cost `N(i)`, positive definite `n2 x n2`.
    pub control_cost: Vec<Vec<f64>>,
    /// Terminal cost, positive semidefinite `n1 x n1`.
    pub terminal_cost: Vec<f64>,
    /// Feedback gains, `n2 x n1`.
    pub gain: Vec<Vec<f64>>,
    pub kernel: Box<dyn Fn(&Segment, Regime, Regime) -> f64 + Send + Sync>,
    pub kernel_total: Box<dyn Fn(&Segment, Regime) -> f64 + Send + Sync>,
    pub bound: BoundSpec,
}

fn table_entry<T>(table: &[T], i: Regime) -> &T {
    let idx = (i.get() as usize - 1).min(table.len() - 1);
    &table[idx]
}

fn check_dims(name: &str, table: &[Vec<f64>], rows: usize, cols: usize) -> Result<()> {
    if table.is_empty() {
        return Err(Error::Parameter(format!("{name}: at least one regime entry required")));
    }
    for (k, m) in table.iter().enumerate() {
        if m.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{name}[{k}]: expected {rows}x{cols} = {} entries, got {}",
                rows * cols,
                m.len()
            )));
        }
    }
    Ok(())
}

fn is_positive_definite(m: &[f64], n: usize, strict: bool) -> bool {
    use nalgebra::DMatrix;
    let mat = DMatrix::from_row_slice(n, n, m);
    let sym = (&mat + mat.transpose()) * 0.5;
    match sym.clone().cholesky() {
        Some(_) => true,
        None => {
            if strict {
                false
            } else {
                // semidefinite: shift by a tiny ridge and retry
                let ridge = DMatrix::identity(n, n) * 1e-10;
                (sym + ridge).cholesky().is_some()
            }
        }
    }
}

pub fn build_lqg(p: LqgParams) -> Result<(HybridModel, LqgCost)> {
    let (n1, n2, d) = (p.n1, p.n2, p.d);
    check_dims("A", &p.a_mats, n1, n1)?;
    check_dims("B", &p.b_mats, n1, n2)?;
    check_dims("Sigma", &p.sigma_mats, n1, d)?;
    check_dims("M", &p.state_cost, n1, n1)?;
    check_dims("N", &p.control_cost, n2, n2)?;
    check_dims("gain", &p.gain, n2, n1)?;
    if p.terminal_cost.len() != n1 * n1 {
        return Err(Error::Dimension("terminal cost must be n1 x n1".into()));
    }
    for (k, m) in p.state_cost.iter().enumerate() {
        if !is_positive_definite(m, n1, false) {
            return Err(Error::Parameter(format!("state cost M[{k}] is not PSD")));
        }
    }
    for (k, m) in p.control_cost.iter().enumerate() {
        if !is_positive_definite(m, n2, true) {
            return Err(Error::Parameter(format!("control cost N[{k}] is not PD")));
        }
    }
    if !is_positive_definite(&p.terminal_cost, n1, false) {
        return Err(Error::Parameter("terminal cost is not PSD".into()));
    }

    // Precompute closed-loop matrices A - B G per regime.
    let regimes = p.a_mats.len().max(p.b_mats.len()).max(p.gain.len());
    let mut closed_loop = Vec::with_capacity(regimes);
    for k in 0..regimes {
        let i = Regime::of(k as u32 + 1);
        let a = table_entry(&p.a_mats, i);
        let b = table_entry(&p.b_mats, i);
        let g = table_entry(&p.gain, i);
        let mut cl = a.clone();
        for r in 0..n1 {
            for c in 0..n1 {
                let mut acc = 0.0;
                for m in 0..n2 {
                    acc += b[r * n2 + m] * g[m * n1 + c];
                }
                cl[r * n1 + c] -= acc;
            }
        }
        closed_loop.push(cl);
    }

    let sigma_mats = p.sigma_mats.clone();
    let cl_for_drift = closed_loop;
    let model = HybridModel::builder(n1, d, 0.0)
        .drift(move |x, i, out| {
            let cl = table_entry(&cl_for_drift, i);
            for r in 0..x.len() {
                out[r] = cl[r * x.len()..].iter().zip(x).map(|(m, v)| m * v).sum();
            }
        })
        .diffusion(move |_, i, out| {
            out.copy_from_slice(table_entry(&sigma_mats, i));
        })
        .intensity(p.kernel)
        .total_intensity(p.kernel_total);
    let model = match p.bound {
        BoundSpec::Global { m } => model.global_bound(m),
        BoundSpec::Local { bound_fn } => model.local_bound(move |h| bound_fn(h)),
    }
    .build()?;

    let cost = LqgCost {
        n1,
        n2,
        state_cost: p.state_cost,
        control_cost: p.control_cost,
        terminal_cost: p.terminal_cost,
        gain: p.gain,
    };
    Ok((model, cost))
}

/// Quadratic-cost ingredients retained from the parameters.
pub struct LqgCost {
    n1: usize,
    n2: usize,
    state_cost: Vec<Vec<f64>>,
    control_cost: Vec<Vec<f64>>,
    terminal_cost: Vec<f64>,
    gain: Vec<Vec<f64>>,
}

impl LqgCost {
    fn quad_form(m: &[f64], x: &[f64]) -> f64 {
        let n = x.len();
        let mut acc = 0.0;
        for r in 0..n {
            let row = &m[r * n..(r + 1) * n];
            let dot: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            acc += x[r] * dot;
        }
        acc
    }

    /// `x^T M(i) x + u^T N(i) u` with `u = -G(i) x`.
    pub fn running(&self, x: &[f64], i: Regime) -> f64 {
        let m = table_entry(&self.state_cost, i);
        let nmat = table_entry(&self.control_cost, i);
        let g = table_entry(&self.gain, i);
        let mut u = vec![0.0; self.n2];
        for r in 0..self.n2 {
            u[r] = -g[r * self.n1..(r + 1) * self.n1]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
        Self::quad_form(m, x) + Self::quad_form(nmat, &u)
    }

    pub fn terminal(&self, x: &[f64]) -> f64 {
        Self::quad_form(&self.terminal_cost, x)
    }
}

/// Expected quadratic cost of the fixed feedback policy: running cost by
/// the left-endpoint rule plus the terminal term.
pub fn evaluate_quadratic_cost(
    model: &HybridModel,
    cost: &LqgCost,
    phi0: &Segment,
    i0: Regime,
    cfg: &SimConfig,
    n: u64,
) -> Result<(McEstimate, u64)> {
    let integrand = |x: &[f64], i: Regime| cost.running(x, i);
    let terminal = |x: &[f64], _i: Regime| cost.terminal(x);
    path_integral_estimate(model, phi0, i0, cfg, n, &integrand, &terminal, false)
}

/// A constant-kernel model over a finite set of listed regimes, with
/// per-regime affine drift `a x + c` and affine noise `s x + s0`. Regimes
/// beyond the listed tables reuse the last entry; the kernel matrix is
/// zero outside its listed block.
pub struct ConstantKernelParams {
    pub drift_lin: Vec<f64>,
    pub drift_const: Vec<f64>,
    pub noise_lin: Vec<f64>,
    pub noise_const: Vec<f64>,
    /// Row-major square matrix of switching rates; entry `(i, j)` is the
    /// rate from regime `i+1` to regime `j+1`. Diagonal ignored.
    pub rates: Vec<Vec<f64>>,
}

pub fn build_constant_kernel(p: ConstantKernelParams) -> Result<HybridModel> {
    let k = p.rates.len();
    if k == 0 || p.rates.iter().any(|row| row.len() != k) {
        return Err(Error::Parameter("rates must be a nonempty square matrix".into()));
    }
    if p.drift_lin.is_empty()
        || p.drift_lin.len() != p.drift_const.len()
        || p.noise_lin.len() != p.noise_const.len()
        || p.noise_lin.is_empty()
    {
        return Err(Error::Parameter("coefficient tables must be nonempty and aligned".into()));
    }
    for row in &p.rates {
        if row.iter().any(|&q| q < 0.0 || !q.is_finite()) {
            return Err(Error::Parameter("switching rates must be finite and nonnegative".into()));
        }
    }
    let row_totals: Vec<f64> = p
        .rates
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, &q)| q)
                .sum()
        })
        .collect();
    let m = row_totals.iter().cloned().fold(0.0, f64::max);
    let rates = p.rates;
    let totals = row_totals;
    let drift_lin = p.drift_lin;
    let drift_const = p.drift_const;
    let noise_lin = p.noise_lin;
    let noise_const = p.noise_const;
    HybridModel::builder(1, 1, 0.0)
        .drift(move |x, i, out| {
            let a = table_entry(&drift_lin, i);
            let c = table_entry(&drift_const, i);
            out[0] = a * x[0] + c;
        })
        .diffusion(move |x, i, out| {
            let s = table_entry(&noise_lin, i);
            let s0 = table_entry(&noise_const, i);
            out[0] = s * x[0] + s0;
        })
        .intensity(move |_, i, j| {
            let (i, j) = (i.get() as usize - 1, j.get() as usize - 1);
            if i < rates.len() && j < rates.len() {
                rates[i][j]
            } else {
                0.0
            }
        })
        .total_intensity(move |_, i| {
            let i = i.get() as usize - 1;
            if i < totals.len() {
                totals[i]
            } else {
                0.0
            }
        })
        .global_bound(m)
        .build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::simulate_hybrid;
    use crate::model::validate_model;
    use approx::assert_relative_eq;

    #[test]
    fn logistic_kernel_constant_weights() {
        // beta = 1, delta = 0, r = 1, phi fixed at 2: up-rate 2, down 0.
        let p = LogisticParams::constant(0.5, 0.1, 0.2, 1.0, 0.0, 1.0);
        let model = build_logistic(p, false).unwrap();
        let seg = Segment::constant(&[2.0], 1.0, 0.1).unwrap();
        let up = model.intensity(&seg, Regime::of(2), Regime::of(3));
        let down = model.intensity(&seg, Regime::of(2), Regime::of(1));
        assert_relative_eq!(up, 2.0, max_relative = 1e-12);
        assert_eq!(down, 0.0);
        // regime 1 is the floor: no down-rate even with delta > 0
        let p = LogisticParams::constant(0.5, 0.1, 0.2, 1.0, 1.0, 1.0);
        let model = build_logistic(p, false).unwrap();
        assert_relative_eq!(
            model.intensity(&seg, Regime::of(1), Regime::of(2)),
            2.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            model.total_intensity(&seg, Regime::of(1)),
            2.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            model.total_intensity(&seg, Regime::of(2)),
            4.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn logistic_kernel_is_linear_in_the_segment() {
        let p = LogisticParams::constant(0.5, 0.1, 0.2, 0.7, 0.3, 0.5);
        let model = build_logistic(p, false).unwrap();
        let seg = Segment::constant(&[1.3], 0.5, 0.05).unwrap();
        let scaled = Segment::constant(&[2.6], 0.5, 0.05).unwrap();
        let q1 = model.intensity(&seg, Regime::of(2), Regime::of(3));
        let q2 = model.intensity(&scaled, Regime::of(2), Regime::of(3));
        assert_relative_eq!(q2, 2.0 * q1, max_relative = 1e-12);
    }

    #[test]
    fn log_transform_drift_value() {
        // a = 0.5, sigma = 1, b = 0.1 at y = 0: drift 0.5 - 0.5 - 0.1.
        let p = LogisticParams::constant(0.5, 0.1, 1.0, 1.0, 0.0, 1.0);
        let model = build_logistic(p, true).unwrap();
        let mut out = [0.0];
        model.drift_into(&[0.0], Regime::of(1), &mut out);
        assert_relative_eq!(out[0], -0.1, max_relative = 1e-12);
    }

    #[test]
    fn logistic_rejects_negative_weight() {
        let mut p = LogisticParams::constant(0.5, 0.1, 0.2, 1.0, 0.0, 1.0);
        p.delta_weight = Box::new(|_, lag| lag); // negative on (-r, 0)
        assert!(build_logistic(p, false).is_err());
    }

    #[test]
    fn logistic_passes_validation() {
        let p = LogisticParams::constant(0.5, 0.1, 0.2, 1.0, 0.5, 0.5);
        let model = build_logistic(p, true).unwrap();
        let segs = vec![
            Segment::constant(&[0.0], 0.5, 0.05).unwrap(),
            Segment::constant(&[1.0], 0.5, 0.05).unwrap(),
            Segment::constant(&[-1.0], 0.5, 0.05).unwrap(),
        ];
        let regimes: Vec<Regime> = (1..=5).map(Regime::of).collect();
        let report = validate_model(&model, &segs, &regimes).unwrap();
        assert!(report.pass);
    }

    fn quiet_pollution(policy_level: f64) -> PollutionParams {
        PollutionParams {
            decay: Box::new(|_| 1.0),
            noise: Box::new(|_, _| 0.0),
            policy: Box::new(move |_, _| policy_level),
            consumption_cap: 2.0,
            utility_kappa: 0.5,
            disutility: Box::new(|x| x * x),
            kernel: Box::new(|_, _, _| 0.0),
            kernel_total: Box::new(|_, _| 0.0),
            bound: BoundSpec::Global { m: 0.0 },
            delay_r: 0.0,
        }
    }

    #[test]
    fn pollution_decay_matches_linear_ode() {
        // policy 0, sigma 0, rho 1, x0 = 1: X(t) = e^-t up to O(dt).
        let (model, _) = build_pollution(quiet_pollution(0.0)).unwrap();
        let cfg = SimConfig::new(0.001, 1.0, 1).unwrap();
        let phi0 = cfg.constant_segment(&[1.0], 0.0).unwrap();
        let traj = simulate_hybrid(&model, &phi0, Regime::of(1), &cfg, 0).unwrap();
        assert!((traj.terminal_state()[0] - (-1.0f64).exp()).abs() < 2e-3);
    }

    #[test]
    fn pollution_equilibrium_at_cap() {
        // policy = cap = 2, rho = 1: equilibrium stock 2.
        let (model, _) = build_pollution(quiet_pollution(2.0)).unwrap();
        let cfg = SimConfig::new(0.01, 12.0, 1).unwrap();
        let phi0 = cfg.constant_segment(&[0.0], 0.0).unwrap();
        let traj = simulate_hybrid(&model, &phi0, Regime::of(1), &cfg, 0).unwrap();
        assert!((traj.terminal_state()[0] - 2.0).abs() < 1e-3);
    }

    #[test]
    fn pollution_rejects_policy_outside_cap() {
        let mut p = quiet_pollution(0.0);
        p.policy = Box::new(|_, _| 3.0); // above cap 2
        assert!(build_pollution(p).is_err());
    }

    #[test]
    fn welfare_zero_policy_zero_start_is_zero() {
        let (model, spec) = build_pollution(quiet_pollution(0.0)).unwrap();
        let cfg = SimConfig::new(0.01, 2.0, 1).unwrap();
        let phi0 = cfg.constant_segment(&[0.0], 0.0).unwrap();
        let (est, truncated) =
            evaluate_welfare(&model, &spec, &phi0, Regime::of(1), &cfg, 64).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(truncated, 0);
    }

    #[test]
    fn welfare_constant_policy_reaches_equilibrium_value() {
        // Long horizon, policy c, rho 1: welfare -> U(c) - c^2.
        let c = 1.0;
        let (model, spec) = build_pollution(quiet_pollution(c)).unwrap();
        let cfg = SimConfig::new(0.01, 60.0, 1).unwrap();
        let phi0 = cfg.constant_segment(&[c], 0.0).unwrap(); // start at equilibrium
        let (est, _) = evaluate_welfare(&model, &spec, &phi0, Regime::of(1), &cfg, 8).unwrap();
        let expected = c.powf(0.5) / 0.5 - c * c;
        assert!((est.mean - expected).abs() < 1e-6, "got {}, want {expected}", est.mean);
    }

    fn scalar_lqg(a: f64, b: f64, sigma: f64, gain: f64) -> LqgParams {
        LqgParams {
            n1: 1,
            n2: 1,
            d: 1,
            a_mats: vec![vec![a]],
            b_mats: vec![vec![b]],
            sigma_mats: vec![vec![sigma]],
            state_cost: vec![vec![1.0]],
            control_cost: vec![vec![1.0]],
            terminal_cost: vec![0.0],
            gain: vec![vec![gain]],
            kernel: Box::new(|_, _, _| 0.0),
            kernel_total: Box::new(|_, _| 0.0),
            bound: BoundSpec::Global { m: 0.0 },
        }
    }

    #[test]
    fn lqg_scalar_decay() {
        let (model, _) = build_lqg(scalar_lqg(-1.0, 0.0, 0.0, 0.0)).unwrap();
        let cfg = SimConfig::new(0.001, 1.0, 1).unwrap();
        let phi0 = cfg.constant_segment(&[1.0], 0.0).unwrap();
        let traj = simulate_hybrid(&model, &phi0, Regime::of(1), &cfg, 0).unwrap();
        assert!((traj.terminal_state()[0] - (-1.0f64).exp()).abs() < 2e-3);
    }

    #[test]
    fn lqg_zero_closed_loop_keeps_state_constant() {
        // gain chosen so A - B gain = 0.
        let (model, _) = build_lqg(scalar_lqg(1.0, 2.0, 0.0, 0.5)).unwrap();
        let cfg = SimConfig::new(0.01, 1.0, 1).unwrap();
        let phi0 = cfg.constant_segment(&[1.5], 0.0).unwrap();
        let traj = simulate_hybrid(&model, &phi0, Regime::of(1), &cfg, 0).unwrap();
        assert_eq!(traj.terminal_state()[0], 1.5);
    }

    #[test]
    fn lqg_rejects_non_pd_control_cost() {
        let mut p = scalar_lqg(-1.0, 0.0, 0.0, 0.0);
        p.control_cost = vec![vec![0.0]]; // PSD but not PD
        assert!(build_lqg(p).is_err());
    }

    #[test]
    fn quadratic_cost_examples() {
        // M = N = D = 0: zero cost.
        let mut p = scalar_lqg(0.0, 0.0, 0.0, 0.0);
        p.state_cost = vec![vec![0.0]];
        p.control_cost = vec![vec![1.0]];
        let (model, cost) = build_lqg(p).unwrap();
        let cfg = SimConfig::new(0.01, 2.0, 1).unwrap();
        let phi0 = cfg.constant_segment(&[1.0], 0.0).unwrap();
        let (est, _) =
            evaluate_quadratic_cost(&model, &cost, &phi0, Regime::of(1), &cfg, 4).unwrap();
        assert_eq!(est.mean, 0.0);

        // A = B = Sigma = 0, M = 1, x0 = 1, T = 2: cost 2 exactly.
        let (model, cost) = build_lqg(scalar_lqg(0.0, 0.0, 0.0, 0.0)).unwrap();
        let (est, _) =
            evaluate_quadratic_cost(&model, &cost, &phi0, Regime::of(1), &cfg, 4).unwrap();
        assert_relative_eq!(est.mean, 2.0, max_relative = 1e-12);

        // A = -1, M = 1, long horizon: cost -> 1/2.
        let (model, cost) = build_lqg(scalar_lqg(-1.0, 0.0, 0.0, 0.0)).unwrap();
        let cfg = SimConfig::new(0.0005, 8.0, 1).unwrap();
        let phi0 = cfg.constant_segment(&[1.0], 0.0).unwrap();
        let (est, _) =
            evaluate_quadratic_cost(&model, &cost, &phi0, Regime::of(1), &cfg, 4).unwrap();
        assert!((est.mean - 0.5).abs() < 2e-3, "got {}", est.mean);
    }

    #[test]
    fn constant_kernel_model_builds_and_validates() {
        let model = build_constant_kernel(ConstantKernelParams {
            drift_lin: vec![0.1, -0.1],
            drift_const: vec![0.0, 0.0],
            noise_lin: vec![0.0],
            noise_const: vec![0.2],
            rates: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        })
        .unwrap();
        let seg = Segment::constant(&[1.0], 0.0, 0.1).unwrap();
        let report =
            validate_model(&model, &[seg], &[Regime::of(1), Regime::of(2), Regime::of(3)])
                .unwrap();
        assert!(report.pass);
    }
}
