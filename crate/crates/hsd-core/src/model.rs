//! Hybrid model declaration: drift and diffusion coefficients per regime,
//! the switching-intensity kernel over the countable regime set, and the
//! declared intensity bound used for thinning.
//!
//! The regime set is all of `{1, 2, ...}`; kernels are queried lazily
//! per target and enumeration stops once partial sums reach the declared
//! total exit rate, so truncation is an explicit, checked condition rather
//! than silent bias. Models must supply the total exit rate in closed form.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};
use crate::history::Segment;

/// Index into the countable regime set `{1, 2, ...}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Regime(u32);

impl Regime {
    pub fn new(value: u32) -> Result<Self> {
        if value == 0 {
            return Err(Error::Domain("regime indices start at 1".into()));
        }
        Ok(Regime(value))
    }

    /// Panicking constructor for literals.
    pub fn of(value: u32) -> Self {
        Self::new(value).expect("regime index must be >= 1")
    }

    #[inline]
    pub fn get(self) -> u32 {
        self.0
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Declared bound on the total exit rate, selecting the thinning regime.
pub enum BoundSpec {
    /// `q_i(phi) <= m` uniformly in `(phi, i)`.
    Global { m: f64 },
    /// `q_i(phi) <= bound_fn(h)` whenever `sup_norm(phi) <= h`. The bound
    /// function must be nondecreasing in `h`.
    Local {
        bound_fn: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for BoundSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundSpec::Global { m } => write!(f, "Global {{ m: {m} }}"),
            BoundSpec::Local { .. } => write!(f, "Local {{ bound_fn }}"),
        }
    }
}

pub type DriftFn = Box<dyn Fn(&[f64], Regime, &mut [f64]) + Send + Sync>;
pub type DiffusionFn = Box<dyn Fn(&[f64], Regime, &mut [f64]) + Send + Sync>;
pub type IntensityFn = Box<dyn Fn(&Segment, Regime, Regime) -> f64 + Send + Sync>;
pub type TotalIntensityFn = Box<dyn Fn(&Segment, Regime) -> f64 + Send + Sync>;

pub const DEFAULT_TAIL_TOLERANCE: f64 = 1e-12;
pub const DEFAULT_J_MAX: u32 = 10_000;

/// A hybrid switching diffusion model. Immutable after construction and
/// shareable across threads; all closures must be pure.
pub struct HybridModel {
    dim_n: usize,
    dim_d: usize,
    delay_r: f64,
    drift: DriftFn,
    diffusion: DiffusionFn,
    intensity: IntensityFn,
    total_intensity: TotalIntensityFn,
    bound_spec: BoundSpec,
    tail_tolerance: f64,
    j_max: u32,
}

pub struct ModelBuilder {
    dim_n: usize,
    dim_d: usize,
    delay_r: f64,
    drift: Option<DriftFn>,
    diffusion: Option<DiffusionFn>,
    intensity: Option<IntensityFn>,
    total_intensity: Option<TotalIntensityFn>,
    bound_spec: Option<BoundSpec>,
    tail_tolerance: f64,
    j_max: u32,
}

impl HybridModel {
    pub fn builder(dim_n: usize, dim_d: usize, delay_r: f64) -> ModelBuilder {
        ModelBuilder {
            dim_n,
            dim_d,
            delay_r,
            drift: None,
            diffusion: None,
            intensity: None,
            total_intensity: None,
            bound_spec: None,
            tail_tolerance: DEFAULT_TAIL_TOLERANCE,
            j_max: DEFAULT_J_MAX,
        }
    }

    #[inline]
    pub fn dim_n(&self) -> usize {
        self.dim_n
    }

    #[inline]
    pub fn dim_d(&self) -> usize {
        self.dim_d
    }

    #[inline]
    pub fn delay_r(&self) -> f64 {
        self.delay_r
    }

    #[inline]
    pub fn drift_into(&self, x: &[f64], i: Regime, out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim_n);
        debug_assert_eq!(out.len(), self.dim_n);
        (self.drift)(x, i, out);
    }

    /// Diffusion matrix, row-major `n x d`.
    #[inline]
    pub fn diffusion_into(&self, x: &[f64], i: Regime, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim_n * self.dim_d);
        (self.diffusion)(x, i, out);
    }

    /// Off-diagonal intensity `q_ij(phi)`. The diagonal is never queried.
    #[inline]
    pub fn intensity(&self, seg: &Segment, i: Regime, j: Regime) -> f64 {
        debug_assert_ne!(i, j);
        (self.intensity)(seg, i, j)
    }

    /// Total exit rate `q_i(phi)` in closed form.
    #[inline]
    pub fn total_intensity(&self, seg: &Segment, i: Regime) -> f64 {
        (self.total_intensity)(seg, i)
    }

    pub fn bound_spec(&self) -> &BoundSpec {
        &self.bound_spec
    }

    /// Dominating rate for thinning at sup-norm level `h`.
    pub fn thinning_bound(&self, h: f64) -> f64 {
        match &self.bound_spec {
            BoundSpec::Global { m } => *m,
            BoundSpec::Local { bound_fn } => bound_fn(h),
        }
    }

    pub fn tail_tolerance(&self) -> f64 {
        self.tail_tolerance
    }

    pub fn j_max(&self) -> u32 {
        self.j_max
    }
}

impl fmt::Debug for HybridModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HybridModel")
            .field("dim_n", &self.dim_n)
            .field("dim_d", &self.dim_d)
            .field("delay_r", &self.delay_r)
            .field("bound_spec", &self.bound_spec)
            .finish_non_exhaustive()
    }
}

impl ModelBuilder {
    pub fn drift(mut self, f: impl Fn(&[f64], Regime, &mut [f64]) + Send + Sync + 'static) -> Self {
        self.drift = Some(Box::new(f));
        self
    }

    pub fn diffusion(
        mut self,
        f: impl Fn(&[f64], Regime, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.diffusion = Some(Box::new(f));
        self
    }

    pub fn intensity(
        mut self,
        f: impl Fn(&Segment, Regime, Regime) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.intensity = Some(Box::new(f));
        self
    }

    pub fn total_intensity(
        mut self,
        f: impl Fn(&Segment, Regime) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.total_intensity = Some(Box::new(f));
        self
    }

    pub fn global_bound(mut self, m: f64) -> Self {
        self.bound_spec = Some(BoundSpec::Global { m });
        self
    }

    pub fn local_bound(mut self, bound_fn: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.bound_spec = Some(BoundSpec::Local { bound_fn: Box::new(bound_fn) });
        self
    }

    pub fn tail_tolerance(mut self, tol: f64) -> Self {
        self.tail_tolerance = tol;
        self
    }

    pub fn j_max(mut self, j_max: u32) -> Self {
        self.j_max = j_max;
        self
    }

    pub fn build(self) -> Result<HybridModel> {
        if self.dim_n == 0 || self.dim_d == 0 {
            return Err(Error::Dimension("dim_n and dim_d must be positive".into()));
        }
        if !(self.delay_r >= 0.0) {
            return Err(Error::Domain("delay_r must be nonnegative".into()));
        }
        if !(self.tail_tolerance > 0.0) {
            return Err(Error::Parameter("tail_tolerance must be positive".into()));
        }
        let bound_spec = self
            .bound_spec
            .ok_or_else(|| Error::Parameter("bound_spec is required".into()))?;
        if let BoundSpec::Global { m } = bound_spec {
            if !(m > 0.0) && m != 0.0 {
                return Err(Error::Parameter(format!("global bound must be >= 0, got {m}")));
            }
        }
        Ok(HybridModel {
            dim_n: self.dim_n,
            dim_d: self.dim_d,
            delay_r: self.delay_r,
            drift: self
                .drift
                .ok_or_else(|| Error::Parameter("drift is required".into()))?,
            diffusion: self
                .diffusion
                .ok_or_else(|| Error::Parameter("diffusion is required".into()))?,
            intensity: self
                .intensity
                .ok_or_else(|| Error::Parameter("intensity is required".into()))?,
            total_intensity: self
                .total_intensity
                .ok_or_else(|| Error::Parameter("total_intensity is required".into()))?,
            bound_spec,
            tail_tolerance: self.tail_tolerance,
            j_max: self.j_max,
        })
    }
}

/// One stacked interval `[lo, hi)` of the partition, claiming jumps to
/// `target`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaInterval {
    pub target: Regime,
    pub lo: f64,
    pub hi: f64,
}

/// Build the consecutive left-closed, right-open intervals of the mark
/// line: the first nonzero rate from regime `i` claims `[0, q)`, each
/// further target stacks on the cumulative sum. Zero-length intervals are
/// omitted. Enumeration stops once the cumulative mass reaches the
/// declared total within the model's tail tolerance.
pub fn delta_intervals(
    model: &HybridModel,
    seg: &Segment,
    i: Regime,
    mass_cap: f64,
) -> Result<Vec<DeltaInterval>> {
    let total = checked_total(model, seg, i)?;
    if total > mass_cap + model.tail_tolerance() {
        return Err(Error::Domain(format!(
            "mass cap {mass_cap} below total intensity {total} from regime {i}"
        )));
    }
    let mut out = Vec::new();
    let mut cum = 0.0;
    if total <= model.tail_tolerance() {
        return Ok(out);
    }
    for j in regime_targets(i, model.j_max()) {
        let q = checked_rate(model, seg, i, j)?;
        if q > 0.0 {
            out.push(DeltaInterval { target: j, lo: cum, hi: cum + q });
            cum += q;
        }
        if cum >= total - model.tail_tolerance() {
            return Ok(out);
        }
    }
    Err(Error::KernelInconsistency {
        regime: i.get(),
        total,
        enumerated: cum,
        residual: total - cum,
        j_max: model.j_max(),
    })
}

/// The jump map: displacement `j - i` when `z` lies in the interval
/// claimed by target `j`, zero when `z` misses every interval.
pub fn jump_map_h(model: &HybridModel, seg: &Segment, i: Regime, z: f64) -> Result<i64> {
    Ok(match pick_target(model, seg, i, z)? {
        Some(j) => i64::from(j.get()) - i64::from(i.get()),
        None => 0,
    })
}

/// Walk the stacked intervals and return the target claiming `z`, without
/// materializing the full partition.
pub fn pick_target(model: &HybridModel, seg: &Segment, i: Regime, z: f64) -> Result<Option<Regime>> {
    debug_assert!(z >= 0.0);
    let total = checked_total(model, seg, i)?;
    if z >= total || total <= model.tail_tolerance() {
        // Beyond the occupied mass: no point of the partition claims z.
        return Ok(None);
    }
    let mut cum = 0.0;
    for j in regime_targets(i, model.j_max()) {
        let q = checked_rate(model, seg, i, j)?;
        cum += q;
        if z < cum {
            return Ok(Some(j));
        }
        if cum >= total - model.tail_tolerance() {
            return Ok(None);
        }
    }
    Err(Error::KernelInconsistency {
        regime: i.get(),
        total,
        enumerated: cum,
        residual: total - cum,
        j_max: model.j_max(),
    })
}

fn checked_total(model: &HybridModel, seg: &Segment, i: Regime) -> Result<f64> {
    let total = model.total_intensity(seg, i);
    if !total.is_finite() || total < 0.0 {
        return Err(Error::NonFinite(format!(
            "total intensity {total} from regime {i}"
        )));
    }
    Ok(total)
}

fn checked_rate(model: &HybridModel, seg: &Segment, i: Regime, j: Regime) -> Result<f64> {
    let q = model.intensity(seg, i, j);
    if !q.is_finite() || q < 0.0 {
        return Err(Error::NegativeIntensity { from: i.get(), to: j.get(), value: q });
    }
    Ok(q)
}

/// Targets `1, 2, ...` skipping `i`, up to `j_max` entries.
fn regime_targets(i: Regime, j_max: u32) -> impl Iterator<Item = Regime> {
    (1..).filter(move |&j| j != i.get()).take(j_max as usize).map(Regime)
}

/// Per-sample outcome of a model validation pass.
#[derive(Debug, Clone, Serialize)]
pub struct SampleCheck {
    pub regime: u32,
    pub sup_norm: f64,
    pub total_intensity: f64,
    pub tail_residual: f64,
    pub tail_ok: bool,
    pub bound: f64,
    pub bound_ok: bool,
    pub negative_rates: Vec<(u32, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub samples: Vec<SampleCheck>,
    pub pass: bool,
}

/// Spot-check the declared kernel properties on sample segments: rates
/// nonnegative, partial sums reach the declared total before `j_max`, and
/// the declared bound dominates the total exit rate.
pub fn validate_model(
    model: &HybridModel,
    sample_segments: &[Segment],
    regimes: &[Regime],
) -> Result<ValidationReport> {
    if sample_segments.is_empty() || regimes.is_empty() {
        return Err(Error::Parameter("validation requires nonempty samples".into()));
    }
    let mut samples = Vec::with_capacity(sample_segments.len() * regimes.len());
    let mut pass = true;
    for seg in sample_segments {
        let h = seg.sup_norm();
        for &i in regimes {
            let total = model.total_intensity(seg, i);
            let mut negative_rates = Vec::new();
            let mut cum = 0.0;
            let mut reached = total.is_finite() && total >= 0.0 && total <= model.tail_tolerance();
            if total.is_finite() && total >= 0.0 && !reached {
                for j in regime_targets(i, model.j_max()) {
                    let q = model.intensity(seg, i, j);
                    if !q.is_finite() || q < 0.0 {
                        negative_rates.push((j.get(), q));
                        continue;
                    }
                    cum += q;
                    if cum >= total - model.tail_tolerance() {
                        reached = true;
                        break;
                    }
                }
            }
            let bound = model.thinning_bound(h);
            let bound_ok = total.is_finite() && total <= bound + model.tail_tolerance();
            let check = SampleCheck {
                regime: i.get(),
                sup_norm: h,
                total_intensity: total,
                tail_residual: total - cum,
                tail_ok: reached,
                bound,
                bound_ok,
                negative_rates,
            };
            if !check.tail_ok || !check.bound_ok || !check.negative_rates.is_empty() {
                pass = false;
            }
            samples.push(check);
        }
    }
    Ok(ValidationReport { samples, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn seg1() -> Segment {
        Segment::constant(&[1.0], 0.0, 0.1).unwrap()
    }

    /// Kernel with q_31 = 0.2, q_32 = 0.1, q_34 = 0.4 and all else zero.
    fn sparse_model() -> HybridModel {
        HybridModel::builder(1, 1, 0.0)
            .drift(|_, _, out| out[0] = 0.0)
            .diffusion(|_, _, out| out[0] = 0.0)
            .intensity(|_, i, j| match (i.get(), j.get()) {
                (3, 1) => 0.2,
                (3, 2) => 0.1,
                (3, 4) => 0.4,
                _ => 0.0,
            })
            .total_intensity(|_, i| if i.get() == 3 { 0.7 } else { 0.0 })
            .global_bound(1.0)
            .build()
            .unwrap()
    }

    #[test]
    fn delta_intervals_stack_consecutively() {
        let model = sparse_model();
        let ivs = delta_intervals(&model, &seg1(), Regime::of(3), 1.0).unwrap();
        assert_eq!(ivs.len(), 3);
        assert_eq!(ivs[0], DeltaInterval { target: Regime::of(1), lo: 0.0, hi: 0.2 });
        assert_eq!(ivs[1], DeltaInterval { target: Regime::of(2), lo: 0.2, hi: 0.30000000000000004 });
        assert_relative_eq!(ivs[2].lo, 0.3, max_relative = 1e-12);
        assert_relative_eq!(ivs[2].hi, 0.7, max_relative = 1e-12);
        assert_eq!(ivs[2].target, Regime::of(4));
    }

    #[test]
    fn delta_intervals_absorbing_regime_is_empty() {
        let model = sparse_model();
        let ivs = delta_intervals(&model, &seg1(), Regime::of(5), 1.0).unwrap();
        assert!(ivs.is_empty());
    }

    #[test]
    fn delta_intervals_geometric_tail_truncates() {
        // q_1j = 2^-j for j >= 2, total 0.5. Partial sums reach
        // 0.5 - 1e-12 at j = 40.
        let model = HybridModel::builder(1, 1, 0.0)
            .drift(|_, _, out| out[0] = 0.0)
            .diffusion(|_, _, out| out[0] = 0.0)
            .intensity(|_, i, j| {
                if i.get() == 1 && j.get() >= 2 {
                    (2.0f64).powi(-(j.get() as i32))
                } else {
                    0.0
                }
            })
            .total_intensity(|_, i| if i.get() == 1 { 0.5 } else { 0.0 })
            .global_bound(1.0)
            .build()
            .unwrap();
        let ivs = delta_intervals(&model, &seg1(), Regime::of(1), 1.0).unwrap();
        // Independent partial-sum oracle: find the first J with
        // sum_{j=2}^{J} 2^-j >= 0.5 - 1e-12.
        let mut cum = 0.0;
        let mut expect_last = 0;
        for j in 2..64 {
            cum += (2.0f64).powi(-j);
            if cum >= 0.5 - 1e-12 {
                expect_last = j;
                break;
            }
        }
        assert_eq!(expect_last, 40);
        assert_eq!(ivs.last().unwrap().target.get() as i32, expect_last);
        let total_len: f64 = ivs.iter().map(|iv| iv.hi - iv.lo).sum();
        assert!((total_len - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn jump_map_examples() {
        let model = sparse_model();
        let seg = seg1();
        let i = Regime::of(3);
        // z = 0.25 falls in [0.2, 0.3) -> target 2, displacement -1
        assert_eq!(jump_map_h(&model, &seg, i, 0.25).unwrap(), -1);
        // right-open boundary: z = 0.7 misses everything
        assert_eq!(jump_map_h(&model, &seg, i, 0.7).unwrap(), 0);
        // left-closed boundary: z = 0 -> target 1, displacement -2
        assert_eq!(jump_map_h(&model, &seg, i, 0.0).unwrap(), -2);
        // beyond all mass
        assert_eq!(jump_map_h(&model, &seg, i, 5.0).unwrap(), 0);
    }

    #[test]
    fn pick_target_matches_intervals() {
        let model = sparse_model();
        let seg = seg1();
        let i = Regime::of(3);
        let ivs = delta_intervals(&model, &seg, i, 1.0).unwrap();
        // Deterministic sweep: every z in [0, total) is claimed by exactly
        // the interval that contains it.
        let mut z = 0.0;
        while z < 0.7 {
            let by_walk = pick_target(&model, &seg, i, z).unwrap();
            let by_intervals = ivs
                .iter()
                .find(|iv| iv.lo <= z && z < iv.hi)
                .map(|iv| iv.target);
            assert_eq!(by_walk, by_intervals, "z = {z}");
            z += 0.013;
        }
    }

    #[test]
    fn kernel_inconsistency_is_reported() {
        // Declared total is 1 but rates only sum to 0.5.
        let model = HybridModel::builder(1, 1, 0.0)
            .drift(|_, _, out| out[0] = 0.0)
            .diffusion(|_, _, out| out[0] = 0.0)
            .intensity(|_, i, j| {
                if i.get() == 1 && j.get() >= 2 {
                    (2.0f64).powi(-(j.get() as i32))
                } else {
                    0.0
                }
            })
            .total_intensity(|_, _| 1.0)
            .global_bound(2.0)
            .j_max(100)
            .build()
            .unwrap();
        let err = delta_intervals(&model, &seg1(), Regime::of(1), 2.0).unwrap_err();
        assert!(matches!(err, Error::KernelInconsistency { .. }), "{err}");
    }

    #[test]
    fn validate_passes_constant_kernel_under_bound() {
        let model = HybridModel::builder(1, 1, 0.0)
            .drift(|_, _, out| out[0] = 0.0)
            .diffusion(|_, _, out| out[0] = 0.0)
            .intensity(|_, _, j| if j.get() == 2 { 0.5 } else { 0.0 })
            .total_intensity(|_, i| if i.get() == 1 { 0.5 } else { 0.0 })
            .global_bound(1.0)
            .build()
            .unwrap();
        let report = validate_model(&model, &[seg1()], &[Regime::of(1)]).unwrap();
        assert!(report.pass);
    }

    #[test]
    fn validate_flags_negative_rate() {
        let model = HybridModel::builder(1, 1, 0.0)
            .drift(|_, _, out| out[0] = 0.0)
            .diffusion(|_, _, out| out[0] = 0.0)
            .intensity(|_, i, j| match (i.get(), j.get()) {
                (1, 2) => -0.1,
                (1, 3) => 0.5,
                _ => 0.0,
            })
            .total_intensity(|_, _| 0.4)
            .global_bound(1.0)
            .build()
            .unwrap();
        let report = validate_model(&model, &[seg1()], &[Regime::of(1)]).unwrap();
        assert!(!report.pass);
        assert_eq!(report.samples[0].negative_rates, vec![(2, -0.1)]);
    }

    #[test]
    fn validate_flags_local_bound_violation() {
        // bound_fn(h) = h but the total exit rate is 2 * sup_norm.
        let model = HybridModel::builder(1, 1, 0.0)
            .drift(|_, _, out| out[0] = 0.0)
            .diffusion(|_, _, out| out[0] = 0.0)
            .intensity(|seg, _, j| if j.get() == 2 { 2.0 * seg.sup_norm() } else { 0.0 })
            .total_intensity(|seg, _| 2.0 * seg.sup_norm())
            .local_bound(|h| h)
            .build()
            .unwrap();
        let report = validate_model(&model, &[seg1()], &[Regime::of(1)]).unwrap();
        assert!(!report.pass);
        assert!(!report.samples[0].bound_ok);
    }
}
