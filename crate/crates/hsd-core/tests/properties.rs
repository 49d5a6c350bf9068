//! Property tests for the segment buffer and the interval partition.

use hsd_core::history::Segment;
use hsd_core::integrator::{qtilde_rate, qtilde_sample_target};
use hsd_core::model::{delta_intervals, pick_target, HybridModel, Regime};
use proptest::prelude::*;

fn finite_vals() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, 1..40)
}

proptest! {
    #[test]
    fn push_then_read_back(vals in finite_vals(), r_steps in 0usize..20) {
        let dt = 0.25;
        let r = r_steps as f64 * dt;
        let mut seg = Segment::constant(&[0.0], r, dt).unwrap();
        for &v in &vals {
            seg.push(&[v]).unwrap();
            prop_assert_eq!(seg.latest()[0], v);
            prop_assert_eq!(seg.at(0.0).unwrap()[0], v);
        }
        // After len pushes the whole window is the tail of vals.
        let len = seg.len();
        if vals.len() >= len {
            for k in 0..len {
                let expect = vals[vals.len() - len + k];
                prop_assert_eq!(seg.grid_value(k)[0], expect);
            }
        }
    }

    #[test]
    fn sup_norm_never_grows_past_pushed_value(vals in finite_vals()) {
        let mut seg = Segment::constant(&[0.0], 1.0, 0.25).unwrap();
        for &v in &vals {
            let before = seg.sup_norm();
            seg.push(&[v]).unwrap();
            prop_assert!(seg.sup_norm() <= before.max(v.abs()) + 1e-12);
        }
    }

    #[test]
    fn interpolation_is_lipschitz(vals in prop::collection::vec(-10.0f64..10.0, 5..25),
                                  a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let dt = 0.5;
        let mut seg = Segment::constant(&[vals[0]], (vals.len() - 1) as f64 * dt, dt).unwrap();
        for &v in &vals {
            seg.push(&[v]).unwrap();
        }
        let r = seg.delay();
        let lag_a = -r * a;
        let lag_b = -r * b;
        let max_adjacent = vals
            .windows(2)
            .map(|w| (w[1] - w[0]).abs())
            .fold(0.0f64, f64::max);
        let lip = max_adjacent / dt;
        let fa = seg.at(lag_a).unwrap()[0];
        let fb = seg.at(lag_b).unwrap()[0];
        prop_assert!((fa - fb).abs() <= lip * (lag_a - lag_b).abs() + 1e-9);
    }

    #[test]
    fn partition_covers_total_mass(rates in prop::collection::vec(0.0f64..2.0, 6)) {
        let from = Regime::of(3);
        let rates_cl = rates.clone();
        let total: f64 = rates
            .iter()
            .enumerate()
            .filter(|(idx, _)| idx + 1 != 3)
            .map(|(_, &q)| q)
            .sum();
        let model = HybridModel::builder(1, 1, 0.0)
            .drift(|_, _, out| out[0] = 0.0)
            .diffusion(|_, _, out| out[0] = 0.0)
            .intensity(move |_, _, j| {
                rates_cl.get(j.get() as usize - 1).copied().unwrap_or(0.0)
            })
            .total_intensity(move |_, _| total)
            .global_bound(12.0)
            .build()
            .unwrap();
        let seg = Segment::constant(&[1.0], 0.0, 0.1).unwrap();
        let intervals = delta_intervals(&model, &seg, from, 12.0).unwrap();
        // Consecutive left-closed right-open intervals starting at zero.
        let mut cursor = 0.0;
        for iv in &intervals {
            prop_assert_eq!(iv.lo, cursor);
            prop_assert!(iv.hi > iv.lo);
            cursor = iv.hi;
        }
        prop_assert!(cursor <= total + 1e-12);
        prop_assert!((cursor - total).abs() <= 1e-9);
        // Targets increase and skip the source.
        for w in intervals.windows(2) {
            prop_assert!(w[0].target < w[1].target);
        }
        prop_assert!(intervals.iter().all(|iv| iv.target != from));
        // The walk and the materialized partition agree on membership.
        if total > 0.0 {
            for k in 0..50 {
                let z = total * (k as f64 + 0.5) / 50.0;
                let via_walk = pick_target(&model, &seg, from, z).unwrap();
                let via_ivs = intervals
                    .iter()
                    .find(|iv| iv.lo <= z && z < iv.hi)
                    .map(|iv| iv.target);
                prop_assert_eq!(via_walk, via_ivs);
            }
        }
    }

    #[test]
    fn qtilde_inverse_cdf_brackets(u in 0.0f64..1.0, row in 1u32..20) {
        let i = Regime::of(row);
        let j = qtilde_sample_target(i, u);
        // u lies in the cumulative bracket of the returned target.
        let mut cum = 0.0;
        for t in 1..j.get() {
            if t != row {
                cum += qtilde_rate(i, Regime::of(t));
            }
        }
        let hi = cum + qtilde_rate(i, j);
        prop_assert!(cum <= u && u < hi + 1e-15, "u {} not in [{}, {})", u, cum, hi);
    }
}
