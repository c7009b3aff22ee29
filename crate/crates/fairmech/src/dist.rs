//! Regular value distributions for the two buyer groups.
//!
//! Every distribution exposes a CDF, a positive density, the Myerson virtual
//! value `phi(v) = v - (1 - F(v)) / f(v)`, its inverse, the max-order CDF of a
//! group of `n` i.i.d. buyers, and inverse-CDF sampling. Construction validates
//! support endpoints, density positivity, and regularity (non-decreasing
//! virtual value) on a fixed grid; irregular inputs are rejected outright so
//! the solvers never need ironing.

use crate::numeric::{self, BISECT_MAX_ITER};
use rand::Rng;
use thiserror::Error;

/// Grid size used for construction-time density and regularity checks.
const CHECK_GRID: usize = 1000;
/// Slack allowed when checking that the virtual value is non-decreasing.
const REGULARITY_TOL: f64 = 1e-9;
/// Tolerance on CDF endpoint values at the support boundaries.
const ENDPOINT_TOL: f64 = 1e-10;
/// Residual tolerance for the inverse-virtual-value bisection.
const INV_PHI_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("invalid distribution parameters: {0}")]
    InvalidParams(String),
    #[error("distribution is irregular: virtual value decreases near v = {at:.6}")]
    Irregular { at: f64 },
    #[error("value {v} outside support [{lo}, {hi}]")]
    OutOfSupport { v: f64, lo: f64, hi: f64 },
    #[error("virtual value {phi} outside attainable range [{min}, {max}]")]
    OutOfPhiRange { phi: f64, min: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Uniform,
    /// Uniform on `[base_lo + shift, base_hi + shift]`; kept as its own kind so
    /// configs can state a base support and an offset separately.
    ShiftedUniform {
        shift: f64,
    },
    TruncatedExponential {
        rate: f64,
    },
    /// Piecewise-linear CDF through `(v, F)` knots; density is the segment slope.
    Tabulated {
        points: Vec<(f64, f64)>,
    },
}

/// A validated, regular value distribution on a bounded support.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueDistribution {
    kind: Kind,
    lo: f64,
    hi: f64,
}

impl ValueDistribution {
    /// Uniform on `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64) -> Result<Self, DistError> {
        Self::validated(Kind::Uniform, lo, hi)
    }

    /// Uniform on `[lo + shift, hi + shift]`.
    pub fn shifted_uniform(lo: f64, hi: f64, shift: f64) -> Result<Self, DistError> {
        if !shift.is_finite() {
            return Err(DistError::InvalidParams("shift must be finite".into()));
        }
        Self::validated(Kind::ShiftedUniform { shift }, lo + shift, hi + shift)
    }

    /// Exponential with the given rate, truncated and renormalized to `[lo, hi]`.
    pub fn truncated_exponential(lo: f64, hi: f64, rate: f64) -> Result<Self, DistError> {
        if !rate.is_finite() || rate <= 0.0 {
            return Err(DistError::InvalidParams(format!(
                "rate must be positive, got {rate}"
            )));
        }
        Self::validated(Kind::TruncatedExponential { rate }, lo, hi)
    }

    /// Piecewise-linear CDF through the given `(v, F)` knots.
    ///
    /// Knots must be strictly increasing in both coordinates, start at `F = 0`,
    /// and end at `F = 1`; the implied density is the per-segment slope.
    pub fn tabulated(points: Vec<(f64, f64)>) -> Result<Self, DistError> {
        if points.len() < 2 {
            return Err(DistError::InvalidParams(
                "tabulated CDF needs at least two points".into(),
            ));
        }
        if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
            return Err(DistError::InvalidParams(
                "tabulated CDF points must be finite".into(),
            ));
        }
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 || w[1].1 <= w[0].1 {
                return Err(DistError::InvalidParams(
                    "tabulated CDF points must be strictly increasing in v and F".into(),
                ));
            }
        }
        let lo = points[0].0;
        let hi = points[points.len() - 1].0;
        if points[0].1.abs() > ENDPOINT_TOL
            || (points[points.len() - 1].1 - 1.0).abs() > ENDPOINT_TOL
        {
            return Err(DistError::InvalidParams(
                "tabulated CDF must start at 0 and end at 1".into(),
            ));
        }
        Self::validated(Kind::Tabulated { points }, lo, hi)
    }

    fn validated(kind: Kind, lo: f64, hi: f64) -> Result<Self, DistError> {
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(DistError::InvalidParams(format!(
                "support [{lo}, {hi}] must be finite with lo < hi"
            )));
        }
        let d = ValueDistribution { kind, lo, hi };
        debug_assert!(d.cdf_raw(lo).abs() <= ENDPOINT_TOL);
        debug_assert!((d.cdf_raw(hi) - 1.0).abs() <= ENDPOINT_TOL);
        // Density positivity and virtual-value monotonicity on the check grid.
        let step = (hi - lo) / (CHECK_GRID - 1) as f64;
        let mut prev_phi = f64::NEG_INFINITY;
        for k in 0..CHECK_GRID {
            let v = if k + 1 == CHECK_GRID {
                hi
            } else {
                lo + step * k as f64
            };
            if d.pdf_raw(v) <= 0.0 {
                return Err(DistError::InvalidParams(format!(
                    "density must be positive on the support; vanishes near v = {v:.6}"
                )));
            }
            let phi = d.phi(v);
            if phi < prev_phi - REGULARITY_TOL {
                return Err(DistError::Irregular { at: v });
            }
            prev_phi = prev_phi.max(phi);
        }
        Ok(d)
    }

    /// Support lower endpoint.
    pub fn lo(&self) -> f64 {
        self.lo
    }

    /// Support upper endpoint.
    pub fn hi(&self) -> f64 {
        self.hi
    }

    fn in_support(&self, v: f64) -> Result<(), DistError> {
        // Tiny slack so support endpoints survive round-tripping.
        let tol = 1e-12 * (1.0 + self.hi.abs().max(self.lo.abs()));
        if v < self.lo - tol || v > self.hi + tol {
            return Err(DistError::OutOfSupport {
                v,
                lo: self.lo,
                hi: self.hi,
            });
        }
        Ok(())
    }

    fn cdf_raw(&self, v: f64) -> f64 {
        let v = v.clamp(self.lo, self.hi);
        match &self.kind {
            Kind::Uniform | Kind::ShiftedUniform { .. } => (v - self.lo) / (self.hi - self.lo),
            Kind::TruncatedExponential { rate } => {
                let z = 1.0 - (-rate * (self.hi - self.lo)).exp();
                (1.0 - (-rate * (v - self.lo)).exp()) / z
            }
            Kind::Tabulated { points } => {
                let i = segment_index(points, v);
                let (v0, f0) = points[i];
                let (v1, f1) = points[i + 1];
                f0 + (f1 - f0) * (v - v0) / (v1 - v0)
            }
        }
    }

    fn pdf_raw(&self, v: f64) -> f64 {
        let v = v.clamp(self.lo, self.hi);
        match &self.kind {
            Kind::Uniform | Kind::ShiftedUniform { .. } => 1.0 / (self.hi - self.lo),
            Kind::TruncatedExponential { rate } => {
                let z = 1.0 - (-rate * (self.hi - self.lo)).exp();
                rate * (-rate * (v - self.lo)).exp() / z
            }
            Kind::Tabulated { points } => {
                let i = segment_index(points, v);
                let (v0, f0) = points[i];
                let (v1, f1) = points[i + 1];
                (f1 - f0) / (v1 - v0)
            }
        }
    }

    /// CDF at `v`; errors outside the support.
    pub fn cdf(&self, v: f64) -> Result<f64, DistError> {
        self.in_support(v)?;
        Ok(self.cdf_raw(v))
    }

    /// Density at `v`; errors outside the support.
    pub fn pdf(&self, v: f64) -> Result<f64, DistError> {
        self.in_support(v)?;
        Ok(self.pdf_raw(v))
    }

    /// Myerson virtual value `v - (1 - F(v)) / f(v)`; errors outside the support.
    pub fn virtual_value(&self, v: f64) -> Result<f64, DistError> {
        self.in_support(v)?;
        Ok(self.phi(v))
    }

    /// Virtual value without the domain check (clamped to the support).
    pub(crate) fn phi(&self, v: f64) -> f64 {
        let v = v.clamp(self.lo, self.hi);
        match &self.kind {
            // (1 - F)/f = hi - v for a uniform, so phi = 2v - hi.
            Kind::Uniform | Kind::ShiftedUniform { .. } => 2.0 * v - self.hi,
            // (1 - F)/f = (1 - exp(-rate (hi - v))) / rate.
            Kind::TruncatedExponential { rate } => v - (1.0 - (-rate * (self.hi - v)).exp()) / rate,
            Kind::Tabulated { .. } => v - (1.0 - self.cdf_raw(v)) / self.pdf_raw(v),
        }
    }

    /// Smallest attainable virtual value, at the support's lower end.
    pub(crate) fn phi_lo(&self) -> f64 {
        self.phi(self.lo)
    }

    /// Largest attainable virtual value: `phi(hi) = hi` since `F(hi) = 1`.
    pub(crate) fn phi_hi(&self) -> f64 {
        self.phi(self.hi)
    }

    /// Inverse virtual value by bisection (residual below 1e-10, at most 200
    /// iterations); errors when `phi` is outside the attainable range.
    pub fn inverse_virtual_value(&self, phi: f64) -> Result<f64, DistError> {
        let (min, max) = (self.phi_lo(), self.phi_hi());
        let tol = INV_PHI_TOL * (1.0 + phi.abs());
        if phi < min - tol || phi > max + tol {
            return Err(DistError::OutOfPhiRange { phi, min, max });
        }
        Ok(self.inv_phi_clamped(phi))
    }

    /// Monotone inverse of the virtual value, clamped to the support: levels at
    /// or below `phi(lo)` map to `lo`, at or above `phi(hi)` map to `hi`.
    pub(crate) fn inv_phi_clamped(&self, level: f64) -> f64 {
        if level <= self.phi_lo() {
            return self.lo;
        }
        if level >= self.phi_hi() {
            return self.hi;
        }
        let mut lo = self.lo;
        let mut hi = self.hi;
        for _ in 0..BISECT_MAX_ITER {
            let mid = 0.5 * (lo + hi);
            let r = self.phi(mid) - level;
            if r.abs() <= INV_PHI_TOL {
                return mid;
            }
            if r < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * (1.0 + mid.abs()) {
                return mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// CDF of the maximum of `n` i.i.d. draws.
    pub(crate) fn max_cdf(&self, n: u32, v: f64) -> f64 {
        self.cdf_raw(v).powi(n as i32)
    }

    /// Quantile (inverse CDF) for `u` in `[0, 1]`.
    pub(crate) fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match &self.kind {
            Kind::Uniform | Kind::ShiftedUniform { .. } => self.lo + u * (self.hi - self.lo),
            Kind::TruncatedExponential { rate } => {
                let z = 1.0 - (-rate * (self.hi - self.lo)).exp();
                self.lo - (1.0 - u * z).ln() / rate
            }
            Kind::Tabulated { points } => {
                let i = points
                    .windows(2)
                    .position(|w| u <= w[1].1)
                    .unwrap_or(points.len() - 2);
                let (v0, f0) = points[i];
                let (v1, f1) = points[i + 1];
                v0 + (v1 - v0) * (u - f0) / (f1 - f0)
            }
        }
        .clamp(self.lo, self.hi)
    }

    /// Draw one value by inverse-CDF sampling.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.gen::<f64>())
    }

    /// Expected value, by quadrature (used for diagnostics and tests).
    pub fn mean(&self) -> f64 {
        numeric::integrate(|v| v * self.pdf_raw(v), self.lo, self.hi, 1e-10)
    }
}

fn segment_index(points: &[(f64, f64)], v: f64) -> usize {
    // Index of the segment containing v; the last segment absorbs v = hi.
    points
        .windows(2)
        .position(|w| v <= w[1].0)
        .unwrap_or(points.len() - 2)
}

/// Joint CDF of the two group maxima: `F1(v1)^n * F2(v2)^n`.
pub fn max_order_cdf(
    d1: &ValueDistribution,
    d2: &ValueDistribution,
    n: u32,
    v1: f64,
    v2: f64,
) -> Result<f64, DistError> {
    d1.cdf(v1)?;
    d2.cdf(v2)?;
    Ok(d1.max_cdf(n, v1) * d2.max_cdf(n, v2))
}

/// Per-round value distributions for both groups plus the common group size.
#[derive(Debug, Clone)]
pub struct GroupProfile {
    group1: Vec<ValueDistribution>,
    group2: Vec<ValueDistribution>,
    n: u32,
}

impl GroupProfile {
    /// Builds a profile; both groups must supply one distribution per round.
    pub fn new(
        group1: Vec<ValueDistribution>,
        group2: Vec<ValueDistribution>,
        n: u32,
    ) -> Result<Self, DistError> {
        if group1.is_empty() || group1.len() != group2.len() {
            return Err(DistError::InvalidParams(format!(
                "groups must cover the same nonempty horizon (got {} and {})",
                group1.len(),
                group2.len()
            )));
        }
        if n == 0 {
            return Err(DistError::InvalidParams("group size n must be >= 1".into()));
        }
        Ok(GroupProfile { group1, group2, n })
    }

    /// Number of rounds covered.
    pub fn horizon(&self) -> usize {
        self.group1.len()
    }

    /// Buyers per group.
    pub fn n(&self) -> u32 {
        self.n
    }

    /// Distributions for 1-based round `t`, as `(group1, group2)`.
    pub fn round(&self, t: usize) -> (&ValueDistribution, &ValueDistribution) {
        (&self.group1[t - 1], &self.group2[t - 1])
    }

    /// The first `horizon` rounds as their own profile.
    pub fn truncated(&self, horizon: usize) -> GroupProfile {
        assert!(
            horizon >= 1 && horizon <= self.horizon(),
            "prefix length {horizon} outside 1..={}",
            self.horizon()
        );
        GroupProfile {
            group1: self.group1[..horizon].to_vec(),
            group2: self.group2[..horizon].to_vec(),
            n: self.n,
        }
    }
}
