//! Small numerical toolkit shared by the solvers: adaptive Simpson quadrature,
//! bisection root-finding on monotone functions, and order-independent summation.

/// Default absolute tolerance for quadrature used by the solvers.
pub const QUAD_TOL: f64 = 1e-7;
/// Residual tolerance for bisection root-finding on distribution parameters.
pub const ROOT_TOL: f64 = 1e-8;
/// Iteration cap for every bisection loop.
pub const BISECT_MAX_ITER: usize = 200;

/// Simpson's rule on `[a, b]` given the three pre-evaluated node values.
fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    h / 6.0 * (fa + 4.0 * fm + fb)
}

// The recursion threads every already-evaluated node through to avoid
// re-evaluating the integrand, which is what pushes the count past the lint.
#[allow(clippy::too_many_arguments)]
fn adaptive_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let delta = left + right - whole;
    // Richardson correction: Simpson halving gains a factor of 16 in error.
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        adaptive_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + adaptive_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `tol`.
///
/// Handles integrands with isolated kinks (the region boundaries produced by
/// clamped virtual-value thresholds) by local refinement; recursion is capped
/// at depth 48, which is far past f64 resolution for the supports in use.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(fa, fm, fb, b - a);
    adaptive_step(&f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Bisection for `f(x) = target` on `[lo, hi]` where `f` is monotone.
///
/// Orientation is detected from the endpoint values. Stops when the residual
/// falls below `residual_tol` or the bracket collapses; always returns after at
/// most [`BISECT_MAX_ITER`] iterations. Returns `None` when the target is not
/// bracketed by `[f(lo), f(hi)]`.
pub fn bisect_monotone<F: Fn(f64) -> f64>(
    f: F,
    mut lo: f64,
    mut hi: f64,
    target: f64,
    residual_tol: f64,
) -> Option<f64> {
    let flo = f(lo) - target;
    let fhi = f(hi) - target;
    if flo.abs() <= residual_tol {
        return Some(lo);
    }
    if fhi.abs() <= residual_tol {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() {
        return None;
    }
    let increasing = flo < 0.0;
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..BISECT_MAX_ITER {
        mid = 0.5 * (lo + hi);
        let fm = f(mid) - target;
        if fm.abs() <= residual_tol || (hi - lo).abs() <= f64::EPSILON * (1.0 + mid.abs()) {
            return Some(mid);
        }
        if (fm < 0.0) == increasing {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(mid)
}

/// Pairwise (cascade) summation: order-independent up to association, with
/// O(log n) error growth. Used wherever replication results are reduced so that
/// the thread count cannot change reported aggregates.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Sample mean and standard error of the mean, via pairwise summation.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}
