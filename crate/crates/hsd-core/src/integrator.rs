//! Path integration of the three coupled systems: the target process with
//! past-dependent switching, the frozen-coefficient auxiliary process, and
//! the reference process driven by the fixed autonomous chain.
//!
//! One Euler-Maruyama engine serves all three; they differ only in which
//! regime selects the coefficients and in the jump source. Between grid
//! points the engine interlaces diffusion with switching events: it
//! advances the state to each event time by a partial step, evaluates the
//! switching decision on the segment formed at that exact time, and
//! continues, so the intensity argument carries no grid-lag bias.
//!
//! Randomness is drawn from counter-based streams: Brownian increments
//! from `(master_seed, path_index, step)`, switching candidates from
//! `(master_seed, path_index, event)`. Two simulations sharing a master
//! seed and path index therefore share noise step by step, which is what
//! the coupling identity and the paired-difference probes rely on.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::history::Segment;
use crate::model::{HybridModel, Regime};
use crate::rng::{stream, STREAM_BROWNIAN, STREAM_CHAIN};
use crate::switching::{attempt_switch, ThinningClock};

pub const DEFAULT_MAX_JUMPS: u32 = 10_000;
pub const DEFAULT_EXPLOSION_THRESHOLD: f64 = 1e8;
/// Hard cap on switching candidates per path, guarding against runaway
/// local bounds.
const MAX_CANDIDATES_PER_PATH: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon_t: f64,
    pub master_seed: u64,
    pub max_jumps: u32,
    pub explosion_threshold: f64,
}

impl SimConfig {
    pub fn new(dt: f64, horizon_t: f64, master_seed: u64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Parameter(format!("dt must be positive, got {dt}")));
        }
        if !(horizon_t >= dt) {
            return Err(Error::Parameter(format!(
                "horizon_t {horizon_t} must be at least dt {dt}"
            )));
        }
        Ok(SimConfig {
            dt,
            horizon_t,
            master_seed,
            max_jumps: DEFAULT_MAX_JUMPS,
            explosion_threshold: DEFAULT_EXPLOSION_THRESHOLD,
        })
    }

    pub fn with_max_jumps(mut self, max_jumps: u32) -> Self {
        self.max_jumps = max_jumps;
        self
    }

    pub fn with_explosion_threshold(mut self, threshold: f64) -> Self {
        self.explosion_threshold = threshold;
        self
    }

    pub fn with_seed(mut self, master_seed: u64) -> Self {
        self.master_seed = master_seed;
        self
    }

    pub fn n_steps(&self) -> usize {
        ((self.horizon_t / self.dt).round() as usize).max(1)
    }

    /// Grid step actually used; equals `dt` whenever `dt` divides the
    /// horizon.
    pub fn dt_eff(&self) -> f64 {
        self.horizon_t / self.n_steps() as f64
    }

    /// Sample an initial segment on this configuration's grid, so that
    /// the history spacing and the integrator step coincide.
    pub fn initial_segment<F>(&self, f: F, delay_r: f64, dim: usize) -> Result<Segment>
    where
        F: FnMut(f64, &mut [f64]),
    {
        let (seg, _) = Segment::from_function(f, delay_r, self.dt_eff(), dim)?;
        Ok(seg)
    }

    pub fn constant_segment(&self, x: &[f64], delay_r: f64) -> Result<Segment> {
        Segment::constant(x, delay_r, self.dt_eff())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathStatus {
    Completed,
    Exploded,
    JumpBudgetExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpEvent {
    pub time: f64,
    pub from: Regime,
    pub to: Regime,
}

/// Which of the coupled systems the engine integrates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcessKind {
    /// Coefficients follow the switching regime; switching thinned on the
    /// state's own segment.
    Hybrid,
    /// Coefficients frozen at the initial regime for the whole horizon;
    /// the switching component still evolves, driven by the frozen
    /// state's segment.
    Frozen,
    /// Coefficients follow the autonomous reference chain with unit exit
    /// rate; no thinning.
    MarkovModulated,
}

/// Per-path hooks. `on_grid` fires at every grid node including `t = 0`,
/// with the segment ending at that node and the regime then in effect;
/// `on_jump` fires at every realized switching event with the segment
/// formed at the exact jump time.
pub trait PathObserver {
    fn on_grid(&mut self, _step: usize, _t: f64, _seg: &Segment, _regime: Regime) {}
    fn on_jump(&mut self, _ev: &JumpEvent, _seg_at_jump: &Segment) {}
}

pub struct NullObserver;
impl PathObserver for NullObserver {}

#[derive(Debug, Clone, Copy)]
pub struct PathOutcome {
    pub status: PathStatus,
    pub end_time: f64,
    pub jump_count: u32,
    /// Candidates whose exit rate exceeded the dominating bound; nonzero
    /// only for mis-declared bounds or mid-step level crossings.
    pub bound_violations: u64,
}

/// One Euler-Maruyama update `x + b(x,i) dt + sigma(x,i) dW`.
pub fn em_step(
    x: &[f64],
    i: Regime,
    model: &HybridModel,
    dt_step: f64,
    dw: &[f64],
) -> Result<Vec<f64>> {
    if dw.len() != model.dim_d() || x.len() != model.dim_n() {
        return Err(Error::Dimension("em_step input dimensions".into()));
    }
    let mut out = x.to_vec();
    let mut drift = vec![0.0; model.dim_n()];
    let mut diff = vec![0.0; model.dim_n() * model.dim_d()];
    apply_em(model, i, &mut out, dt_step, dw, &mut drift, &mut diff);
    Ok(out)
}

#[inline]
fn apply_em(
    model: &HybridModel,
    i: Regime,
    x: &mut [f64],
    dt_step: f64,
    dw: &[f64],
    drift: &mut [f64],
    diff: &mut [f64],
) {
    let n = model.dim_n();
    let d = model.dim_d();
    model.drift_into(x, i, drift);
    model.diffusion_into(x, i, diff);
    for k in 0..n {
        let row = &diff[k * d..(k + 1) * d];
        let noise: f64 = row.iter().zip(dw).map(|(s, w)| s * w).sum();
        x[k] += drift[k] * dt_step + noise;
    }
}

enum JumpSource {
    Thinned(ThinningClock),
    Chain {
        master_seed: u64,
        path_index: u64,
        event_counter: u64,
        pending_time: f64,
        pending_target: Regime,
    },
}

impl JumpSource {
    fn new(
        kind: ProcessKind,
        model: &HybridModel,
        seg0: &Segment,
        i0: Regime,
        cfg: &SimConfig,
        path_index: u64,
    ) -> Self {
        match kind {
            ProcessKind::Hybrid | ProcessKind::Frozen => JumpSource::Thinned(ThinningClock::new(
                model,
                seg0,
                0.0,
                cfg.master_seed,
                path_index,
            )),
            ProcessKind::MarkovModulated => {
                let mut src = JumpSource::Chain {
                    master_seed: cfg.master_seed,
                    path_index,
                    event_counter: 0,
                    pending_time: f64::INFINITY,
                    pending_target: i0,
                };
                src.chain_draw(0.0, i0);
                src
            }
        }
    }

    fn chain_draw(&mut self, from_time: f64, current: Regime) {
        if let JumpSource::Chain {
            master_seed,
            path_index,
            event_counter,
            pending_time,
            pending_target,
        } = self
        {
            let mut rng = stream(*master_seed, *path_index, STREAM_CHAIN, *event_counter);
            *event_counter += 1;
            let holding: f64 = Exp1.sample(&mut rng);
            *pending_time = from_time + holding;
            *pending_target = qtilde_sample_target(current, rng.gen::<f64>());
        }
    }

    fn pending_time(&self) -> f64 {
        match self {
            JumpSource::Thinned(clock) => clock.pending.time,
            JumpSource::Chain { pending_time, .. } => *pending_time,
        }
    }
}

/// Integrate a single path, streaming grid nodes and jumps into the
/// observer.
pub fn run_path<O: PathObserver>(
    model: &HybridModel,
    phi0: &Segment,
    i0: Regime,
    cfg: &SimConfig,
    path_index: u64,
    kind: ProcessKind,
    obs: &mut O,
) -> Result<PathOutcome> {
    if phi0.dim() != model.dim_n() {
        return Err(Error::Dimension(format!(
            "initial segment dim {} vs model dim {}",
            phi0.dim(),
            model.dim_n()
        )));
    }
    let n_steps = cfg.n_steps();
    let dt = cfg.dt_eff();
    if (phi0.grid_dt() - dt).abs() > 1e-9 * dt {
        return Err(Error::Parameter(format!(
            "segment grid_dt {} must equal the integration step {}",
            phi0.grid_dt(),
            dt
        )));
    }

    let n = model.dim_n();
    let d = model.dim_d();
    let mut seg = phi0.clone();
    let mut seg_scratch = phi0.clone();
    let mut x = phi0.latest().to_vec();
    let mut drift = vec![0.0; n];
    let mut diff = vec![0.0; n * d];
    let mut dw = vec![0.0; d];

    let mut switch_regime = i0;
    let mut source = JumpSource::new(kind, model, &seg, i0, cfg, path_index);
    let mut jump_count = 0u32;
    let mut candidates = 0u64;

    obs.on_grid(0, 0.0, &seg, switch_regime);

    for k in 0..n_steps {
        let t0 = k as f64 * dt;
        let t1 = if k + 1 == n_steps { cfg.horizon_t } else { (k + 1) as f64 * dt };
        let mut t_sub = t0;
        let mut step_rng = stream(cfg.master_seed, path_index, STREAM_BROWNIAN, k as u64);

        // Interlace: handle every switching event inside this step.
        while source.pending_time() < t1 {
            let ev_time = source.pending_time();
            let coef = coefficient_regime(kind, i0, switch_regime);
            draw_increment(&mut step_rng, ev_time - t_sub, &mut dw);
            apply_em(model, coef, &mut x, ev_time - t_sub, &dw, &mut drift, &mut diff);
            t_sub = ev_time;
            if !all_finite(&x) {
                return Ok(outcome(PathStatus::Exploded, t_sub, jump_count, &source));
            }
            if norm(&x) > cfg.explosion_threshold {
                return Ok(outcome(PathStatus::Exploded, t_sub, jump_count, &source));
            }
            seg.advanced_into(ev_time - t0, &x, &mut seg_scratch)?;

            match &mut source {
                JumpSource::Thinned(clock) => {
                    candidates += 1;
                    let mark = clock.pending.uniform_mark;
                    if model.total_intensity(&seg_scratch, switch_regime)
                        > clock.m_current + model.tail_tolerance()
                    {
                        clock.note_violation();
                    }
                    if let Some(j) = attempt_switch(model, &seg_scratch, switch_regime, mark)? {
                        let ev = JumpEvent { time: ev_time, from: switch_regime, to: j };
                        obs.on_jump(&ev, &seg_scratch);
                        switch_regime = j;
                        jump_count += 1;
                    }
                    clock.advance();
                }
                JumpSource::Chain { pending_target, .. } => {
                    let target = *pending_target;
                    let ev = JumpEvent { time: ev_time, from: switch_regime, to: target };
                    obs.on_jump(&ev, &seg_scratch);
                    switch_regime = target;
                    jump_count += 1;
                    source.chain_draw(ev_time, target);
                }
            }
            if jump_count >= cfg.max_jumps || candidates >= MAX_CANDIDATES_PER_PATH {
                return Ok(outcome(PathStatus::JumpBudgetExhausted, t_sub, jump_count, &source));
            }
        }

        let coef = coefficient_regime(kind, i0, switch_regime);
        draw_increment(&mut step_rng, t1 - t_sub, &mut dw);
        apply_em(model, coef, &mut x, t1 - t_sub, &dw, &mut drift, &mut diff);
        if !all_finite(&x) {
            return Ok(outcome(PathStatus::Exploded, t_sub, jump_count, &source));
        }
        seg.push(&x)?;
        if norm(&x) > cfg.explosion_threshold {
            obs.on_grid(k + 1, t1, &seg, switch_regime);
            return Ok(outcome(PathStatus::Exploded, t1, jump_count, &source));
        }
        if let JumpSource::Thinned(clock) = &mut source {
            clock.refresh_if_exceeded(model, &seg, t1);
        }
        obs.on_grid(k + 1, t1, &seg, switch_regime);
    }

    Ok(outcome(PathStatus::Completed, cfg.horizon_t, jump_count, &source))
}

fn coefficient_regime(kind: ProcessKind, i0: Regime, switch_regime: Regime) -> Regime {
    match kind {
        ProcessKind::Frozen => i0,
        ProcessKind::Hybrid | ProcessKind::MarkovModulated => switch_regime,
    }
}

fn outcome(status: PathStatus, end_time: f64, jump_count: u32, source: &JumpSource) -> PathOutcome {
    let bound_violations = match source {
        JumpSource::Thinned(clock) => clock.bound_violations,
        JumpSource::Chain { .. } => 0,
    };
    PathOutcome { status, end_time, jump_count, bound_violations }
}

#[inline]
fn draw_increment<R: Rng>(rng: &mut R, dt_step: f64, dw: &mut [f64]) {
    debug_assert!(dt_step >= 0.0);
    let scale = dt_step.sqrt();
    for w in dw.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *w = scale * z;
    }
}

#[inline]
fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

#[inline]
fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Discretized path of one of the coupled systems.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Row-major `times.len() x dim_n`.
    pub states: Vec<f64>,
    pub regimes: Vec<Regime>,
    pub jumps: Vec<JumpEvent>,
    pub status: PathStatus,
    pub dim_n: usize,
    pub grid_dt: f64,
}

impl Trajectory {
    pub fn state_at(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim_n..(k + 1) * self.dim_n]
    }

    pub fn terminal_state(&self) -> &[f64] {
        self.state_at(self.times.len() - 1)
    }

    pub fn terminal_regime(&self) -> Regime {
        *self.regimes.last().expect("trajectory has at least the initial node")
    }
}

struct Recorder {
    times: Vec<f64>,
    states: Vec<f64>,
    regimes: Vec<Regime>,
    jumps: Vec<JumpEvent>,
}

impl Recorder {
    fn new(dim_n: usize, n_steps: usize) -> Self {
        Recorder {
            times: Vec::with_capacity(n_steps + 1),
            states: Vec::with_capacity((n_steps + 1) * dim_n),
            regimes: Vec::with_capacity(n_steps + 1),
            jumps: Vec::new(),
        }
    }
}

impl PathObserver for Recorder {
    fn on_grid(&mut self, _step: usize, t: f64, seg: &Segment, regime: Regime) {
        self.times.push(t);
        self.states.extend_from_slice(seg.latest());
        self.regimes.push(regime);
    }

    fn on_jump(&mut self, ev: &JumpEvent, _seg: &Segment) {
        self.jumps.push(*ev);
    }
}

fn simulate(
    model: &HybridModel,
    phi0: &Segment,
    i0: Regime,
    cfg: &SimConfig,
    path_index: u64,
    kind: ProcessKind,
) -> Result<Trajectory> {
    let mut rec = Recorder::new(model.dim_n(), cfg.n_steps());
    let out = run_path(model, phi0, i0, cfg, path_index, kind, &mut rec)?;
    Ok(Trajectory {
        times: rec.times,
        states: rec.states,
        regimes: rec.regimes,
        jumps: rec.jumps,
        status: out.status,
        dim_n: model.dim_n(),
        grid_dt: cfg.dt_eff(),
    })
}

/// The target process: coefficients follow the switching regime, switching
/// intensities read the state's own segment.
pub fn simulate_hybrid(
    model: &HybridModel,
    phi0: &Segment,
    i0: Regime,
    cfg: &SimConfig,
    path_index: u64,
) -> Result<Trajectory> {
    simulate(model, phi0, i0, cfg, path_index, ProcessKind::Hybrid)
}

/// The frozen-coefficient auxiliary: the state diffuses under regime `i`
/// for the whole horizon while the switching component evolves on the
/// frozen state's segment. With a shared master seed it agrees bitwise
/// with the target process up to the first jump.
pub fn simulate_frozen(
    model: &HybridModel,
    phi0: &Segment,
    i: Regime,
    cfg: &SimConfig,
    path_index: u64,
) -> Result<Trajectory> {
    simulate(model, phi0, i, cfg, path_index, ProcessKind::Frozen)
}

/// The reference process: coefficients follow the autonomous chain with
/// generator rows of unit exit rate.
pub fn simulate_markov_modulated(
    model: &HybridModel,
    phi0: &Segment,
    i0: Regime,
    cfg: &SimConfig,
    path_index: u64,
) -> Result<Trajectory> {
    simulate(model, phi0, i0, cfg, path_index, ProcessKind::MarkovModulated)
}

/// Off-diagonal rate of the reference chain: `2^-j` below the diagonal,
/// `2^-j+1` above it. Every row sums to one.
#[inline]
pub fn qtilde_rate(i: Regime, j: Regime) -> f64 {
    debug_assert_ne!(i, j);
    if j < i {
        (2.0f64).powi(-(j.get() as i32))
    } else {
        (2.0f64).powi(-(j.get() as i32) + 1)
    }
}

/// Off-diagonal entries of row `i`, truncated at `j_max` targets. The
/// truncated tail mass is `2^(1 - j_max)`-sized and is never dropped in
/// sampling, which extends the inverse CDF geometrically instead.
pub fn qtilde_row(i: Regime, j_max: u32) -> Vec<(Regime, f64)> {
    (1..)
        .filter(|&j| j != i.get())
        .take(j_max as usize)
        .map(|j| (Regime::of(j), qtilde_rate(i, Regime::of(j))))
        .collect()
}

/// Analytic off-diagonal row sum: the geometric pieces below and above the
/// diagonal.
pub fn qtilde_row_sum(i: Regime) -> f64 {
    let below = 1.0 - (2.0f64).powi(-(i.get() as i32) + 1);
    let above = (2.0f64).powi(-(i.get() as i32) + 1);
    below + above
}

/// Inverse-CDF draw of the post-jump target from row `i`, exact through
/// the geometric tail.
pub fn qtilde_sample_target(i: Regime, u: f64) -> Regime {
    debug_assert!((0.0..1.0).contains(&u));
    let mut cum = 0.0;
    let mut j = 1u32;
    loop {
        if j != i.get() {
            let rate = qtilde_rate(i, Regime::of(j));
            cum += rate;
            if u < cum || rate == 0.0 || j > 1100 {
                return Regime::of(j);
            }
        }
        j += 1;
    }
}
