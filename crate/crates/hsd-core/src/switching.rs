//! Regime-jump sampling by thinning a dominating homogeneous Poisson
//! stream.
//!
//! Candidates arrive at rate `M` carrying a uniform mark on `[0, M)`; a
//! candidate at time `t` with mark `z` switches the regime from `i` to `j`
//! exactly when `z` lands in the interval the partition assigns to `j` at
//! the current segment. Given the discretized continuous path this is
//! exact in law, unlike per-step Bernoulli switching which carries an
//! `O(dt)` law error.
//!
//! Under a local bound the dominating rate is only valid up to a sup-norm
//! level; when the path outgrows the level the bound is refreshed and a
//! fresh candidate clock is started, which the memoryless property makes
//! law-preserving.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::Result;
use crate::history::Segment;
use crate::model::{pick_target, BoundSpec, HybridModel, Regime};
use crate::rng::{stream, STREAM_PRM};

/// Safety margin added to the current sup norm when a local bound level is
/// (re)established.
pub const LOCAL_BOUND_MARGIN: f64 = 1.0;

/// A point of the dominating Poisson stream restricted to `[0, M)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateEvent {
    pub time: f64,
    pub uniform_mark: f64,
}

/// Draw the next candidate after `current_time` under dominating rate
/// `m_current`: exponential inter-arrival, independent uniform mark.
pub fn next_candidate<R: Rng>(rng: &mut R, current_time: f64, m_current: f64) -> CandidateEvent {
    debug_assert!(m_current > 0.0);
    let e: f64 = Exp1.sample(rng);
    CandidateEvent {
        time: current_time + e / m_current,
        uniform_mark: m_current * rng.gen::<f64>(),
    }
}

/// Resolve a candidate mark against the interval partition at segment
/// `seg`: `Some(j)` if the mark triggers a switch to `j`, `None` if it
/// misses every interval and the regime remains `i`.
pub fn attempt_switch(
    model: &HybridModel,
    seg: &Segment,
    i: Regime,
    mark: f64,
) -> Result<Option<Regime>> {
    pick_target(model, seg, i, mark)
}

/// `exp(-sum q dt)`: survival weight of the first jump along a discretized
/// path, left-endpoint rule.
pub fn survival_probability(q_values: &[f64], dt: f64) -> f64 {
    debug_assert!(q_values.iter().all(|&q| q >= 0.0));
    let sum: f64 = q_values.iter().sum();
    (-sum * dt).exp()
}

/// Candidate clock state for one path: the dominating rate, the sup-norm
/// level it is valid for, and the pending candidate.
pub struct ThinningClock {
    master_seed: u64,
    path_index: u64,
    event_counter: u64,
    /// Current dominating rate.
    pub m_current: f64,
    /// Sup-norm level the rate is valid for; infinite under a global bound.
    pub level: f64,
    pub pending: CandidateEvent,
    /// Diagnostic: candidates whose total intensity exceeded the
    /// dominating rate (possible only for a mis-declared bound or a
    /// mid-step level crossing).
    pub bound_violations: u64,
}

impl ThinningClock {
    pub fn new(
        model: &HybridModel,
        seg0: &Segment,
        t0: f64,
        master_seed: u64,
        path_index: u64,
    ) -> Self {
        let (m, level) = match model.bound_spec() {
            BoundSpec::Global { m } => (*m, f64::INFINITY),
            BoundSpec::Local { .. } => {
                let level = seg0.sup_norm() + LOCAL_BOUND_MARGIN;
                (model.thinning_bound(level), level)
            }
        };
        let mut clock = ThinningClock {
            master_seed,
            path_index,
            event_counter: 0,
            m_current: m,
            level,
            pending: CandidateEvent { time: f64::INFINITY, uniform_mark: 0.0 },
            bound_violations: 0,
        };
        clock.pending = clock.draw(t0);
        clock
    }

    fn draw(&mut self, from_time: f64) -> CandidateEvent {
        if self.m_current <= 0.0 {
            // A zero dominating rate means the kernel is identically zero:
            // no candidates ever arrive.
            return CandidateEvent { time: f64::INFINITY, uniform_mark: 0.0 };
        }
        let mut rng = stream(self.master_seed, self.path_index, STREAM_PRM, self.event_counter);
        self.event_counter += 1;
        next_candidate(&mut rng, from_time, self.m_current)
    }

    /// Consume the pending candidate and schedule the next one.
    pub fn advance(&mut self) {
        let t = self.pending.time;
        self.pending = self.draw(t);
    }

    /// Called after the path's segment absorbed a new head value. When the
    /// sup norm outgrows the current level, re-establish the level and
    /// rate and restart the candidate clock from `t`.
    pub fn refresh_if_exceeded(&mut self, model: &HybridModel, seg: &Segment, t: f64) {
        if self.level.is_finite() {
            let head: f64 = seg.latest().iter().map(|x| x * x).sum::<f64>().sqrt();
            if head > self.level {
                self.level = seg.sup_norm() + LOCAL_BOUND_MARGIN;
                self.m_current = model.thinning_bound(self.level);
                self.pending = self.draw(t);
            }
        }
    }

    pub fn note_violation(&mut self) {
        self.bound_violations += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HybridModel;
    use approx::assert_relative_eq;

    fn sparse_model() -> HybridModel {
        HybridModel::builder(1, 1, 0.0)
            .drift(|_, _, out| out[0] = 0.0)
            .diffusion(|_, _, out| out[0] = 0.0)
            .intensity(|_, i, j| match (i.get(), j.get()) {
                (3, 1) => 0.2,
                (3, 2) => 0.1,
                (1, 2) => 0.25,
                (1, 3) => 0.25,
                _ => 0.0,
            })
            .total_intensity(|_, i| match i.get() {
                3 => 0.3,
                1 => 0.5,
                _ => 0.0,
            })
            .global_bound(1.0)
            .build()
            .unwrap()
    }

    #[test]
    fn next_candidate_is_reproducible() {
        let mut a = stream(11, 0, STREAM_PRM, 0);
        let mut b = stream(11, 0, STREAM_PRM, 0);
        let ca = next_candidate(&mut a, 0.0, 1.0);
        let cb = next_candidate(&mut b, 0.0, 1.0);
        assert_eq!(ca, cb);
        assert!(ca.time > 0.0);
        assert!((0.0..1.0).contains(&ca.uniform_mark));
    }

    #[test]
    fn inter_arrival_mean_matches_rate() {
        // 1e5 draws at M = 2: mean inter-arrival 0.5 within 3 standard
        // errors (SE = 0.5 / sqrt(n) for an exponential).
        let n = 100_000;
        let mut sum = 0.0;
        for c in 0..n {
            let mut rng = stream(5, 0, STREAM_PRM, c);
            sum += next_candidate(&mut rng, 0.0, 2.0).time;
        }
        let mean = sum / n as f64;
        let se = 0.5 / (n as f64).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn marks_are_uniform_by_ks() {
        // Kolmogorov-Smirnov at level 0.01 against Uniform[0, 2).
        let n = 100_000usize;
        let mut marks: Vec<f64> = (0..n as u64)
            .map(|c| {
                let mut rng = stream(6, 0, STREAM_PRM, c);
                next_candidate(&mut rng, 0.0, 2.0).uniform_mark / 2.0
            })
            .collect();
        marks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut d: f64 = 0.0;
        for (k, &x) in marks.iter().enumerate() {
            let lo = k as f64 / n as f64;
            let hi = (k + 1) as f64 / n as f64;
            d = d.max((x - lo).abs()).max((hi - x).abs());
        }
        let crit = 1.628 / (n as f64).sqrt(); // asymptotic, alpha = 0.01
        assert!(d < crit, "KS statistic {d}, critical {crit}");
    }

    #[test]
    fn attempt_switch_lookup_and_rejection() {
        let model = sparse_model();
        let seg = Segment::constant(&[1.0], 0.0, 0.1).unwrap();
        let i = Regime::of(3);
        assert_eq!(attempt_switch(&model, &seg, i, 0.05).unwrap(), Some(Regime::of(1)));
        assert_eq!(attempt_switch(&model, &seg, i, 0.95).unwrap(), None);
    }

    #[test]
    fn accepted_targets_split_evenly_for_equal_rates() {
        // q_12 = q_13 = 0.25 from regime 1: accepted switches hit targets
        // 2 and 3 with equal frequency (3 binomial SE at 1e5 acceptances).
        let model = sparse_model();
        let seg = Segment::constant(&[1.0], 0.0, 0.1).unwrap();
        let i = Regime::of(1);
        let mut accepted = 0u64;
        let mut to2 = 0u64;
        let mut counter = 0u64;
        while accepted < 100_000 {
            let mut rng = stream(7, 1, STREAM_PRM, counter);
            counter += 1;
            let cand = next_candidate(&mut rng, 0.0, 1.0);
            if let Some(j) = attempt_switch(&model, &seg, i, cand.uniform_mark).unwrap() {
                accepted += 1;
                if j == Regime::of(2) {
                    to2 += 1;
                }
            }
        }
        let p = to2 as f64 / accepted as f64;
        let se = (0.5 * 0.5 / accepted as f64).sqrt();
        assert!((p - 0.5).abs() < 3.0 * se, "p {p}");
    }

    #[test]
    fn survival_probability_examples() {
        assert_eq!(survival_probability(&[0.0; 10], 0.1), 1.0);
        // q = 0.5 over t = 2 at dt = 0.01: exp(-1)
        let q = vec![0.5; 200];
        assert_relative_eq!(survival_probability(&q, 0.01), (-1.0f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(
            survival_probability(&[1.0, 2.0, 3.0], 1.0),
            (-6.0f64).exp(),
            max_relative = 1e-12
        );
    }
}
