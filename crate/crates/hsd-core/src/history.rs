//! Memory segments: the trajectory over the sliding window `[t - r, t]`,
//! stored on the integration grid.
//!
//! The segment is what past-dependent switching intensities are evaluated
//! on. It is a fixed-length circular buffer of `n`-vectors at spacing
//! `grid_dt`, with the last entry holding the value at lag zero. Reads
//! between grid points interpolate linearly, which matches the order of the
//! Euler-Maruyama path reconstruction.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    dim: usize,
    grid_dt: f64,
    /// Effective delay; always `(len - 1) * grid_dt`.
    delay_r: f64,
    /// `len * dim` values, circular; `head` indexes the oldest entry.
    buf: Vec<f64>,
    head: usize,
}

impl Segment {
    /// Sample an initial function on the grid over `[-r, 0]`.
    ///
    /// If `grid_dt` does not divide `r` (relative tolerance `1e-9`), the
    /// grid count falls back to `floor(r / grid_dt)` and the effective
    /// delay shrinks accordingly; the second return value flags this.
    pub fn from_function<F>(mut f: F, r: f64, grid_dt: f64, dim: usize) -> Result<(Self, bool)>
    where
        F: FnMut(f64, &mut [f64]),
    {
        if !(r >= 0.0) {
            return Err(Error::Domain(format!("delay r must be nonnegative, got {r}")));
        }
        if !(grid_dt > 0.0) {
            return Err(Error::Domain(format!("grid_dt must be positive, got {grid_dt}")));
        }
        if dim == 0 {
            return Err(Error::Dimension("segment dimension must be positive".into()));
        }
        let ratio = r / grid_dt;
        let rounded = ratio.round();
        let (steps, adjusted) = if (ratio - rounded).abs() <= 1e-9 * ratio.max(1.0) {
            (rounded as usize, false)
        } else {
            (ratio.floor() as usize, true)
        };
        let len = steps + 1;
        let delay_r = steps as f64 * grid_dt;
        let mut buf = vec![0.0; len * dim];
        for k in 0..len {
            let lag = (k as f64 - steps as f64) * grid_dt;
            f(lag, &mut buf[k * dim..(k + 1) * dim]);
        }
        if !buf.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("initial segment values".into()));
        }
        Ok((
            Segment { dim, grid_dt, delay_r, buf, head: 0 },
            adjusted,
        ))
    }

    /// Segment identically equal to `x`.
    pub fn constant(x: &[f64], r: f64, grid_dt: f64) -> Result<Self> {
        let (seg, _) = Self::from_function(|_, out| out.copy_from_slice(x), r, grid_dt, x.len())?;
        Ok(seg)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored grid values (`floor(r/grid_dt) + 1`).
    pub fn len(&self) -> usize {
        self.buf.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn grid_dt(&self) -> f64 {
        self.grid_dt
    }

    /// Effective delay spanned by the buffer.
    pub fn delay(&self) -> f64 {
        self.delay_r
    }

    /// Value at grid index `k`; `k = 0` is the oldest entry (lag `-r`),
    /// `k = len - 1` the value at lag zero.
    #[inline]
    pub fn grid_value(&self, k: usize) -> &[f64] {
        let len = self.len();
        debug_assert!(k < len);
        let idx = (self.head + k) % len;
        &self.buf[idx * self.dim..(idx + 1) * self.dim]
    }

    /// Lag of grid index `k`.
    #[inline]
    pub fn lag_at(&self, k: usize) -> f64 {
        (k as f64 + 1.0 - self.len() as f64) * self.grid_dt
    }

    /// The value at lag zero.
    #[inline]
    pub fn latest(&self) -> &[f64] {
        self.grid_value(self.len() - 1)
    }

    /// Slide the window one grid step: drop the oldest entry, append `v`.
    pub fn push(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::Dimension(format!(
                "push value has dim {}, segment has dim {}",
                v.len(),
                self.dim
            )));
        }
        if !v.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("pushed segment value".into()));
        }
        let len = self.len();
        let idx = self.head; // oldest slot becomes the newest
        self.buf[idx * self.dim..(idx + 1) * self.dim].copy_from_slice(v);
        self.head = (self.head + 1) % len;
        Ok(())
    }

    /// Linear interpolation at `lag` in `[-r, 0]`, exact at grid points.
    pub fn at_into(&self, lag: f64, out: &mut [f64]) -> Result<()> {
        let slack = 1e-12 * self.delay_r.max(1.0);
        if lag < -self.delay_r - slack || lag > slack {
            return Err(Error::Domain(format!(
                "lag {lag} outside [{}, 0]",
                -self.delay_r
            )));
        }
        let len = self.len();
        let pos = ((lag + self.delay_r) / self.grid_dt).clamp(0.0, (len - 1) as f64);
        let k = (pos.floor() as usize).min(len - 1);
        let frac = pos - k as f64;
        let lo = self.grid_value(k);
        if frac == 0.0 || k + 1 == len {
            out.copy_from_slice(lo);
        } else {
            let hi = self.grid_value(k + 1);
            for ((o, &a), &b) in out.iter_mut().zip(lo).zip(hi) {
                *o = a + frac * (b - a);
            }
        }
        Ok(())
    }

    pub fn at(&self, lag: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.at_into(lag, &mut out)?;
        Ok(out)
    }

    /// Sup norm over stored grid values (Euclidean norm per entry).
    pub fn sup_norm(&self) -> f64 {
        let mut best = 0.0f64;
        for k in 0..self.len() {
            let v = self.grid_value(k);
            let norm2: f64 = v.iter().map(|x| x * x).sum();
            best = best.max(norm2);
        }
        best.sqrt()
    }

    /// The segment as seen `offset` time units later, with the head of the
    /// path advanced to `head_value`. Entries at lags `-k * grid_dt` from
    /// the new time interpolate the stored history; the lag-zero entry is
    /// `head_value`. Requires `0 <= offset <= grid_dt`.
    ///
    /// This is how the state's segment is formed at a switching-candidate
    /// time that falls between grid points.
    pub fn advanced_into(&self, offset: f64, head_value: &[f64], out: &mut Segment) -> Result<()> {
        debug_assert!(out.dim == self.dim && out.len() == self.len());
        debug_assert!((-1e-12..=self.grid_dt * (1.0 + 1e-9)).contains(&offset));
        let len = self.len();
        let steps = len - 1;
        out.head = 0;
        for k in 0..steps {
            // Entry k of the advanced segment sits between stored grid
            // indices k and k+1, at fraction offset/grid_dt.
            let pos = (k as f64 + offset / self.grid_dt).clamp(0.0, steps as f64);
            let idx = (pos.floor() as usize).min(steps);
            let frac = pos - idx as f64;
            let lo = self.grid_value(idx);
            let dst = k * self.dim..(k + 1) * self.dim;
            if frac == 0.0 || idx == steps {
                out.buf[dst].copy_from_slice(lo);
            } else {
                let hi = self.grid_value(idx + 1);
                for ((o, &a), &b) in out.buf[dst].iter_mut().zip(lo).zip(hi) {
                    *o = a + frac * (b - a);
                }
            }
        }
        out.buf[steps * self.dim..].copy_from_slice(head_value);
        Ok(())
    }

    pub fn advanced(&self, offset: f64, head_value: &[f64]) -> Result<Segment> {
        let mut out = self.clone();
        self.advanced_into(offset, head_value, &mut out)?;
        Ok(out)
    }
}
