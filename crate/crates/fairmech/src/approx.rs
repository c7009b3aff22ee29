//! Approximation plans that cap the exponential state growth of the exact
//! solver while keeping a provable fairness floor.
//!
//! Both plans split the horizon into a *fair phase* (rounds `1..=t0`), solved
//! by backward induction at reduced levels, and an *unconstrained tail*
//! (rounds `t0+1..=T`) that allocates to the best virtual value with no
//! transfers beyond threshold payments, ending with monopoly reserves in
//! round `T`:
//!
//! * **early stopping**: enforce levels `alpha_i - epsilon` for
//!   `t0 = ceil(ln eps / ln delta)` rounds. The ignored tail carries at most
//!   an `epsilon` share of the discounted weight, so each group still
//!   receives a `(1 - eps)(alpha_i - eps)` share overall.
//! * **bucketing**: additionally freeze the discount within buckets of
//!   `l = floor(ln(1 - beta) / ln delta)` rounds (valid when
//!   `beta > 1 - delta`), collapsing states inside a bucket to win counts.
//!   Levels shrink by `1 - beta` and the floor becomes
//!   `(1 - eps)(1 - beta)^2 (alpha_i - eps)`.

use crate::dist::GroupProfile;
use crate::dynamic_solver::{
    solve_dynamic, DiscountSchedule, DynamicSolution, InterimValues, TerminalPolicy,
};
use crate::static_solver::{region_integral, solve_static, AffineRule, RegionWeight, SolveError};

/// Which mechanism family a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Exact,
    EarlyStop,
    Bucketed,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scheme::Exact => write!(f, "exact"),
            Scheme::EarlyStop => write!(f, "early_stop"),
            Scheme::Bucketed => write!(f, "bucketed"),
        }
    }
}

/// A fully specified approximation plan (scheme plus derived constants).
#[derive(Debug, Clone)]
pub struct ApproxPlan {
    pub scheme: Scheme,
    pub horizon: usize,
    /// True per-round discount factor of the run.
    pub delta: f64,
    pub epsilon: f64,
    /// Bucket mass parameter; zero for non-bucketed plans.
    pub beta: f64,
    /// Rounds per bucket (1 unless bucketed).
    pub bucket_len: usize,
    /// Fair-phase length: levels are enforced on rounds `1..=t0`.
    pub t0: usize,
    /// Reduced levels handed to the fair-phase solver.
    pub fair1: f64,
    pub fair2: f64,
    /// Proven discounted-share floor per group under the plan.
    pub guarantee1: f64,
    pub guarantee2: f64,
}

fn check_common(
    horizon: usize,
    delta: f64,
    alpha1: f64,
    alpha2: f64,
    epsilon: f64,
) -> Result<(), SolveError> {
    if horizon == 0 {
        return Err(SolveError::Numerical("horizon must be at least 1".into()));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(SolveError::Numerical(format!(
            "discount factor must lie in (0, 1], got {delta}"
        )));
    }
    if !(0.0..=1.0).contains(&alpha1)
        || !(0.0..=1.0).contains(&alpha2)
        || alpha1 + alpha2 > 1.0 + 1e-9
    {
        return Err(SolveError::Infeasible {
            alpha1,
            alpha2,
            detail: "levels must be nonnegative with alpha1 + alpha2 <= 1".into(),
        });
    }
    if epsilon < 0.0 || epsilon > alpha1.min(alpha2) {
        return Err(SolveError::Numerical(format!(
            "epsilon must lie in [0, min(alpha1, alpha2)] = [0, {}], got {epsilon}",
            alpha1.min(alpha2)
        )));
    }
    Ok(())
}

/// Fair-phase length: smallest `t` with `delta^t <= epsilon`, capped at the
/// horizon. `epsilon = 0` or `delta = 1` disable stopping (`t0 = horizon`).
fn stop_round(horizon: usize, delta: f64, epsilon: f64) -> usize {
    if epsilon == 0.0 || delta >= 1.0 {
        return horizon;
    }
    let raw = (epsilon.ln() / delta.ln()).ceil();
    if raw.is_finite() && raw < horizon as f64 {
        (raw as usize).max(1)
    } else {
        horizon
    }
}

/// Early-stopping plan: enforce `alpha_i - epsilon` for `t0` rounds, then run
/// unconstrained. With `epsilon = 0` or `delta = 1` this is the exact
/// mechanism (no stopping, full levels).
pub fn plan_early_stop(
    horizon: usize,
    delta: f64,
    alpha1: f64,
    alpha2: f64,
    epsilon: f64,
) -> Result<ApproxPlan, SolveError> {
    check_common(horizon, delta, alpha1, alpha2, epsilon)?;
    let bypass = epsilon == 0.0 || delta >= 1.0;
    let eps = if bypass { 0.0 } else { epsilon };
    let t0 = stop_round(horizon, delta, eps);
    let (fair1, fair2) = (alpha1 - eps, alpha2 - eps);
    Ok(ApproxPlan {
        scheme: Scheme::EarlyStop,
        horizon,
        delta,
        epsilon: eps,
        beta: 0.0,
        bucket_len: 1,
        t0,
        fair1,
        fair2,
        guarantee1: (1.0 - eps) * fair1,
        guarantee2: (1.0 - eps) * fair2,
    })
}

/// Bucketed plan: early stopping plus a discount frozen within buckets of
/// `l = floor(ln(1 - beta) / ln delta)` rounds. Requires `delta < 1` and
/// `1 - delta < beta < 1` so a bucket holds at least one round.
pub fn plan_bucketed(
    horizon: usize,
    delta: f64,
    alpha1: f64,
    alpha2: f64,
    epsilon: f64,
    beta: f64,
) -> Result<ApproxPlan, SolveError> {
    check_common(horizon, delta, alpha1, alpha2, epsilon)?;
    if delta >= 1.0 {
        return Err(SolveError::Numerical(
            "bucketing needs delta < 1 (at delta = 1 use the exact mechanism)".into(),
        ));
    }
    if !(beta > 1.0 - delta && beta < 1.0) {
        return Err(SolveError::Numerical(format!(
            "beta must lie in (1 - delta, 1) = ({}, 1), got {beta}",
            1.0 - delta
        )));
    }
    let bucket_len = ((1.0 - beta).ln() / delta.ln()).floor() as usize;
    debug_assert!(bucket_len >= 1, "beta > 1 - delta guarantees l >= 1");
    // Stop on a bucket boundary: round the early-stop length up to a multiple
    // of the bucket length before capping at the horizon.
    let t0_raw = stop_round(usize::MAX, delta, epsilon);
    let t0 = if t0_raw == usize::MAX {
        horizon
    } else {
        (t0_raw.div_ceil(bucket_len) * bucket_len).min(horizon)
    };
    let shrink = 1.0 - beta;
    let (fair1, fair2) = (shrink * (alpha1 - epsilon), shrink * (alpha2 - epsilon));
    Ok(ApproxPlan {
        scheme: Scheme::Bucketed,
        horizon,
        delta,
        epsilon,
        beta,
        bucket_len,
        t0,
        fair1,
        fair2,
        guarantee1: (1.0 - epsilon) * shrink * shrink * (alpha1 - epsilon),
        guarantee2: (1.0 - epsilon) * shrink * shrink * (alpha2 - epsilon),
    })
}

/// The unconstrained tail: zero-threshold rounds after the fair phase and a
/// reserve-rule finish, with its value chain discounted at the true delta.
#[derive(Debug, Clone)]
pub struct Tail {
    /// First tail round (`t0 + 1`, 1-based).
    pub start: usize,
    /// Reserve rule solved for the final round at levels `(0, 0)`.
    pub terminal_rule: AffineRule,
    /// Seller value of rounds `start..=T`, in round-`start` units.
    pub mu_start: f64,
    /// Per-buyer values of the tail, in round-`start` units.
    pub nu1_start: f64,
    pub nu2_start: f64,
}

/// A plan bound to an instance: the solved fair phase plus the tail chain.
#[derive(Debug)]
pub struct PlanExecution {
    plan: ApproxPlan,
    profile: GroupProfile,
    fair: DynamicSolution,
    tail: Option<Tail>,
    oracle_calls: u64,
    predicted: InterimValues,
}

/// How a global round is played under a plan.
#[derive(Debug, Clone, Copy)]
pub enum PlanRound<'a> {
    /// Round governed by the fair-phase solution.
    Fair,
    /// Unconstrained interior round: allocate to the larger virtual value.
    TailInterior,
    /// Final round under the tail's reserve rule.
    TailTerminal(&'a AffineRule),
}

impl PlanExecution {
    pub fn plan(&self) -> &ApproxPlan {
        &self.plan
    }

    /// Full-horizon distributions the plan executes against.
    pub fn profile(&self) -> &GroupProfile {
        &self.profile
    }

    /// The solved fair phase (horizon `t0`).
    pub fn fair(&self) -> &DynamicSolution {
        &self.fair
    }

    pub fn tail(&self) -> Option<&Tail> {
        self.tail.as_ref()
    }

    /// Interim-state solves consumed: fair-phase solves plus one for the
    /// tail's terminal reserve rule (tail interior rounds are closed-form).
    pub fn oracle_calls(&self) -> u64 {
        self.oracle_calls
    }

    /// Plan value at the true discount. Exact for early stopping; for
    /// bucketed plans the fair-phase part is measured against the plan's own
    /// (bucketed) discount weights.
    pub fn predicted(&self) -> InterimValues {
        self.predicted
    }

    pub fn classify_round(&self, t: usize) -> PlanRound<'_> {
        assert!(t >= 1 && t <= self.plan.horizon, "round {t} out of range");
        match &self.tail {
            None => PlanRound::Fair,
            Some(tail) if t < tail.start => PlanRound::Fair,
            Some(tail) if t < self.plan.horizon => {
                debug_assert!(t >= tail.start);
                PlanRound::TailInterior
            }
            Some(tail) => PlanRound::TailTerminal(&tail.terminal_rule),
        }
    }
}

/// Binds a plan to an instance: solves the fair phase at the reduced levels
/// (must-allocate final round when the fair phase is a strict prefix) and
/// assembles the tail value chain.
pub fn execute_plan(
    profile: &GroupProfile,
    plan: &ApproxPlan,
) -> Result<PlanExecution, SolveError> {
    if profile.horizon() != plan.horizon {
        return Err(SolveError::Numerical(format!(
            "profile covers {} rounds but the plan covers {}",
            profile.horizon(),
            plan.horizon
        )));
    }
    let t0 = plan.t0;
    let fair_schedule = match plan.scheme {
        Scheme::Bucketed => {
            let step = plan.delta.powi(plan.bucket_len as i32);
            let ratios = (1..t0)
                .map(|t| if t % plan.bucket_len == 0 { step } else { 1.0 })
                .collect();
            DiscountSchedule::from_ratios(ratios)?
        }
        _ => DiscountSchedule::constant(plan.delta, t0)?,
    };
    let policy = if t0 < plan.horizon {
        TerminalPolicy::MustAllocate
    } else {
        TerminalPolicy::Reserve
    };
    let fair = solve_dynamic(
        &profile.truncated(t0),
        &fair_schedule,
        plan.fair1,
        plan.fair2,
        policy,
    )?;
    let fair_values = fair
        .interim(fair.root())
        .expect("root of a solved fair phase is memoized");

    let (tail, oracle_calls, predicted) = if t0 < plan.horizon {
        let horizon = plan.horizon;
        let n = profile.n();
        let (d1_t, d2_t) = profile.round(horizon);
        let terminal = solve_static(d1_t, d2_t, n, 0.0, 0.0, false)?;
        let mut mu = terminal.seller_utility;
        let mut nu1 = terminal.buyer_utility_1;
        let mut nu2 = terminal.buyer_utility_2;
        for t in (t0 + 1..horizon).rev() {
            let (d1, d2) = profile.round(t);
            let virt = region_integral(d1, n, d2, n, 0.0, None, RegionWeight::Virtual)
                + region_integral(d2, n, d1, n, 0.0, None, RegionWeight::Virtual);
            let rent1 = region_integral(d1, n, d2, n, 0.0, None, RegionWeight::InfoRent) / n as f64;
            let rent2 = region_integral(d2, n, d1, n, 0.0, None, RegionWeight::InfoRent) / n as f64;
            mu = virt + plan.delta * mu;
            nu1 = rent1 + plan.delta * nu1;
            nu2 = rent2 + plan.delta * nu2;
        }
        let tail = Tail {
            start: t0 + 1,
            terminal_rule: terminal.rule,
            mu_start: mu,
            nu1_start: nu1,
            nu2_start: nu2,
        };
        let w = plan.delta.powi(t0 as i32);
        let predicted = InterimValues {
            feasible: true,
            mu: fair_values.mu + w * tail.mu_start,
            nu1: fair_values.nu1 + w * tail.nu1_start,
            nu2: fair_values.nu2 + w * tail.nu2_start,
        };
        (Some(tail), fair.oracle_calls() + 1, predicted)
    } else {
        (None, fair.oracle_calls(), fair_values)
    };

    Ok(PlanExecution {
        plan: plan.clone(),
        profile: profile.clone(),
        fair,
        tail,
        oracle_calls,
        predicted,
    })
}
