//! Both sides of the change-of-measure identity relating the
//! past-dependent-switching process to the reference Markov-modulated
//! process, as Monte Carlo estimators.
//!
//! The left side averages `f(X_T, alpha(T))` over target-process paths
//! whose jump log realizes a prescribed pattern. The right side averages
//! the same functional of the reference process reweighted by the
//! Radon-Nikodym factor
//!
//! ```text
//!   e^T  *  prod_k  q_{i_{k-1} i_k}(Z_(k)) / rho_{i_{k-1} i_k}
//!        *  exp( - int_0^T q_{gamma(s)}(Z_s) ds )
//! ```
//!
//! where the k-th factor evaluates the kernel at the segment formed at the
//! k-th jump time and pairs the regime before that jump with the regime
//! after it. The factor indexing follows the identity's single-jump
//! derivation, which fixes the (before, after) convention; the integral
//! uses the same left-endpoint rule as the survival weight so the
//! discretization bias has the same form on both sides.

use rayon::prelude::*;
use serde::Serialize;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::history::Segment;
use crate::integrator::{
    qtilde_rate, run_path, JumpEvent, PathObserver, PathStatus, ProcessKind, SimConfig, Trajectory,
};
use crate::model::{HybridModel, Regime};
use crate::stats::{estimate_from_values, McEstimate};

/// A prescribed jump pattern: exactly `l` jumps before the horizon with
/// the given targets in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct JumpPattern {
    initial: Regime,
    targets: Vec<Regime>,
}

impl JumpPattern {
    pub fn new(initial: Regime, targets: Vec<Regime>) -> Result<Self> {
        let mut prev = initial;
        for &t in &targets {
            if t == prev {
                return Err(Error::Parameter(format!(
                    "jump pattern repeats regime {t} consecutively"
                )));
            }
            prev = t;
        }
        Ok(JumpPattern { initial, targets })
    }

    pub fn l(&self) -> usize {
        self.targets.len()
    }

    pub fn initial(&self) -> Regime {
        self.initial
    }

    pub fn targets(&self) -> &[Regime] {
        &self.targets
    }

    /// Terminal regime on the pattern event.
    pub fn final_regime(&self) -> Regime {
        *self.targets.last().unwrap_or(&self.initial)
    }

    pub fn matches(&self, jumps: &[JumpEvent]) -> bool {
        jumps.len() == self.targets.len()
            && jumps.iter().zip(&self.targets).all(|(ev, &t)| ev.to == t)
    }
}

/// Per-path record of the reweighted functional.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WeightedSample {
    pub value: f64,
    pub weight: f64,
    pub pattern_matched: bool,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GirsanovEstimate {
    pub estimate: McEstimate,
    /// Paths that exploded or exhausted the jump budget; they count as
    /// pattern mismatches (value zero), not as exclusions.
    pub truncated: u64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MeasureComparison {
    pub z: f64,
    pub pass: bool,
}

/// Hypothesis check that the two estimates agree: `|z| < 3` with
/// `z = (lhs - rhs) / sqrt(se_l^2 + se_r^2)`.
pub fn compare_measures(lhs: &McEstimate, rhs: &McEstimate) -> MeasureComparison {
    let denom = (lhs.se * lhs.se + rhs.se * rhs.se).sqrt();
    let diff = lhs.mean - rhs.mean;
    let z = if denom > 0.0 {
        diff / denom
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    MeasureComparison { z, pass: z.abs() < 3.0 }
}

struct LhsObserver {
    terminal_seg: Option<Segment>,
    terminal_regime: Regime,
    jumps_seen: usize,
    matched: bool,
    targets: Vec<Regime>,
}

impl PathObserver for LhsObserver {
    fn on_grid(&mut self, _step: usize, _t: f64, seg: &Segment, regime: Regime) {
        match &mut self.terminal_seg {
            Some(s) => s.clone_from(seg),
            None => self.terminal_seg = Some(seg.clone()),
        }
        self.terminal_regime = regime;
    }

    fn on_jump(&mut self, ev: &JumpEvent, _seg: &Segment) {
        if self.matched {
            if self.jumps_seen < self.targets.len() && ev.to == self.targets[self.jumps_seen] {
                self.jumps_seen += 1;
            } else {
                self.matched = false;
            }
        }
    }
}

/// Left side: `E[f(X_T, alpha(T)) 1{pattern}]` over target-process paths.
pub fn estimate_lhs(
    model: &HybridModel,
    f: &(dyn Fn(&Segment, Regime) -> f64 + Sync),
    pattern: &JumpPattern,
    phi0: &Segment,
    i0: Regime,
    cfg: &SimConfig,
    n: u64,
) -> Result<GirsanovEstimate> {
    if pattern.initial() != i0 {
        return Err(Error::Parameter(
            "pattern initial regime differs from the simulation's".into(),
        ));
    }
    let truncated = AtomicU64::new(0);
    let values: Vec<Option<f64>> = (0..n)
        .into_par_iter()
        .map(|path| {
            let mut obs = LhsObserver {
                terminal_seg: None,
                terminal_regime: i0,
                jumps_seen: 0,
                matched: true,
                targets: pattern.targets.clone(),
            };
            let out = match run_path(model, phi0, i0, cfg, path, ProcessKind::Hybrid, &mut obs) {
                Ok(out) => out,
                Err(_) => return None,
            };
            if out.status != PathStatus::Completed {
                truncated.fetch_add(1, Ordering::Relaxed);
                return Some(0.0);
            }
            let matched = obs.matched && obs.jumps_seen == pattern.l();
            if matched {
                let seg = obs.terminal_seg.as_ref().expect("path visited nodes");
                Some(f(seg, obs.terminal_regime))
            } else {
                Some(0.0)
            }
        })
        .collect();
    let estimate = estimate_from_values(&values, cfg.master_seed, n)?;
    Ok(GirsanovEstimate { estimate, truncated: truncated.into_inner() })
}

struct RhsObserver<'m> {
    model: &'m HybridModel,
    dt: f64,
    n_steps: usize,
    q_integral: f64,
    factor_product: f64,
    jumps_seen: usize,
    matched: bool,
    targets: &'m [Regime],
    terminal_seg: Option<Segment>,
    terminal_regime: Regime,
}

impl PathObserver for RhsObserver<'_> {
    fn on_grid(&mut self, step: usize, _t: f64, seg: &Segment, regime: Regime) {
        // Left-endpoint rule: the terminal node does not contribute.
        if step < self.n_steps {
            self.q_integral += self.model.total_intensity(seg, regime) * self.dt;
        }
        match &mut self.terminal_seg {
            Some(s) => s.clone_from(seg),
            None => self.terminal_seg = Some(seg.clone()),
        }
        self.terminal_regime = regime;
    }

    fn on_jump(&mut self, ev: &JumpEvent, seg_at_jump: &Segment) {
        if self.matched {
            if self.jumps_seen < self.targets.len() && ev.to == self.targets[self.jumps_seen] {
                let q = self.model.intensity(seg_at_jump, ev.from, ev.to);
                let rho = qtilde_rate(ev.from, ev.to);
                self.factor_product *= q / rho;
                self.jumps_seen += 1;
            } else {
                self.matched = false;
            }
        }
    }
}

/// Right side: `e^T E[f(Z_T, i_l) 1{pattern} * weight]` over
/// reference-process paths.
pub fn estimate_rhs(
    model: &HybridModel,
    f: &(dyn Fn(&Segment, Regime) -> f64 + Sync),
    pattern: &JumpPattern,
    phi0: &Segment,
    i0: Regime,
    cfg: &SimConfig,
    n: u64,
) -> Result<GirsanovEstimate> {
    if pattern.initial() != i0 {
        return Err(Error::Parameter(
            "pattern initial regime differs from the simulation's".into(),
        ));
    }
    let truncated = AtomicU64::new(0);
    let values: Vec<Option<f64>> = (0..n)
        .into_par_iter()
        .map(|path| {
            let sample = match rhs_weighted_sample(model, f, pattern, phi0, i0, cfg, path) {
                Ok(Some(s)) => s,
                Ok(None) => {
                    truncated.fetch_add(1, Ordering::Relaxed);
                    return Some(0.0);
                }
                Err(_) => return None,
            };
            Some(sample.value * sample.weight)
        })
        .collect();
    let estimate = estimate_from_values(&values, cfg.master_seed, n)?;
    Ok(GirsanovEstimate { estimate, truncated: truncated.into_inner() })
}

/// One reference-process path reduced to its weighted sample; `None` for
/// truncated paths.
pub fn rhs_weighted_sample(
    model: &HybridModel,
    f: &(dyn Fn(&Segment, Regime) -> f64 + Sync),
    pattern: &JumpPattern,
    phi0: &Segment,
    i0: Regime,
    cfg: &SimConfig,
    path_index: u64,
) -> Result<Option<WeightedSample>> {
    let mut obs = RhsObserver {
        model,
        dt: cfg.dt_eff(),
        n_steps: cfg.n_steps(),
        q_integral: 0.0,
        factor_product: 1.0,
        jumps_seen: 0,
        matched: true,
        targets: pattern.targets(),
        terminal_seg: None,
        terminal_regime: i0,
    };
    let out = run_path(model, phi0, i0, cfg, path_index, ProcessKind::MarkovModulated, &mut obs)?;
    if out.status != PathStatus::Completed {
        return Ok(None);
    }
    let matched = obs.matched && obs.jumps_seen == pattern.l();
    if !matched {
        return Ok(Some(WeightedSample { value: 0.0, weight: 0.0, pattern_matched: false }));
    }
    let weight = cfg.horizon_t.exp() * obs.factor_product * (-obs.q_integral).exp();
    let seg = obs.terminal_seg.as_ref().expect("path visited nodes");
    Ok(Some(WeightedSample {
        value: f(seg, obs.terminal_regime),
        weight,
        pattern_matched: true,
    }))
}

/// Radon-Nikodym weight of a recorded reference-process trajectory against
/// a pattern, reconstructing segments from the stored grid states and the
/// initial segment. Grid-interior jump segments interpolate the recorded
/// path, so on stochastic paths this agrees with the streaming estimator
/// only up to interpolation; it is exact for deterministic flows and is
/// the independent cross-check for them.
pub fn rn_weight(
    traj: &Trajectory,
    model: &HybridModel,
    pattern: &JumpPattern,
    phi0: &Segment,
    horizon_t: f64,
    dt: f64,
) -> Result<f64> {
    if traj.status != PathStatus::Completed {
        return Err(Error::Parameter("rn_weight requires a completed trajectory".into()));
    }
    if (traj.grid_dt - dt).abs() > 1e-9 * dt {
        return Err(Error::Parameter(format!(
            "dt {dt} does not match the trajectory discretization {}",
            traj.grid_dt
        )));
    }
    if !pattern.matches(&traj.jumps) {
        return Ok(0.0);
    }
    let mut seg = phi0.clone();
    let mut scratch = phi0.clone();
    let mut q_integral = 0.0;
    let mut factors = 1.0;
    let mut jump_iter = traj.jumps.iter().peekable();
    let n_steps = traj.times.len() - 1;
    for k in 0..n_steps {
        let t0 = traj.times[k];
        let t1 = traj.times[k + 1];
        q_integral += model.total_intensity(&seg, traj.regimes[k]) * dt;
        while let Some(ev) = jump_iter.peek() {
            if ev.time >= t1 {
                break;
            }
            // State at the jump time, linearly interpolated on the grid.
            let frac = (ev.time - t0) / (t1 - t0);
            let a = traj.state_at(k);
            let b = traj.state_at(k + 1);
            let x: Vec<f64> =
                a.iter().zip(b).map(|(&u, &v)| u + frac * (v - u)).collect();
            seg.advanced_into(ev.time - t0, &x, &mut scratch)?;
            factors *= model.intensity(&scratch, ev.from, ev.to) / qtilde_rate(ev.from, ev.to);
            jump_iter.next();
        }
        seg.push(traj.state_at(k + 1))?;
    }
    Ok(horizon_t.exp() * factors * (-q_integral).exp())
}
