//! Backward-induction solver for the repeated fair auction.
//!
//! The seller owes each group a discounted share of the items. The state is
//! the pair of *residual obligations* `(r1, r2)` — how much discounted
//! allocation is still owed per group so the horizon constraint can be met —
//! normalized to the current round's discount level. Each round the solver
//! classifies the state:
//!
//! * **terminal** (`t = T`): one static fair auction at the residual levels;
//! * **forced**: only one group's continuation remains feasible, so that
//!   group must win; the round is a within-group second-price auction;
//! * **boundary**: both continuations feasible; the groups' best virtual
//!   values are compared against a threshold `theta` assembled from the
//!   continuation value differences, with participation rewards and entry
//!   fees keeping truthful bidding optimal round by round.
//!
//! States are memoized by `(round, per-phase win counts)`, which is exact:
//! within a constant-discount phase only the number of wins matters, and the
//! clamped residual arithmetic is order-free inside a phase.

use std::collections::HashMap;

use crate::dist::{GroupProfile, ValueDistribution};
use crate::numeric::{self, QUAD_TOL};
use crate::static_solver::{
    self, region_integral, solve_static, AffineRule, Group, RegionWeight, SolveError,
};

/// Feasibility slack for the terminal bounds `r <= 1`, `r1 + r2 <= 1`.
const FEAS_TOL: f64 = 1e-9;

/// What the final round does when obligations leave slack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalPolicy {
    /// Keep the item when both groups' virtual values fall below their
    /// (relaxed) reserves — the revenue-optimal ending.
    Reserve,
    /// Always allocate; used when the solved horizon is a prefix of a longer
    /// run that continues with unconstrained rounds.
    MustAllocate,
}

/// Per-round discount structure as consecutive ratios `rho_t = d_{t+1}/d_t`.
///
/// A *phase* is a maximal run of rounds joined by ratio exactly 1. The exact
/// mechanism with `delta < 1` puts every round in its own phase; `delta = 1`
/// is a single phase; the bucketed approximation yields one phase per bucket.
#[derive(Debug, Clone)]
pub struct DiscountSchedule {
    ratios: Vec<f64>,
    weights: Vec<f64>,
    phase_of: Vec<usize>,
}

impl DiscountSchedule {
    /// Constant per-round discount `delta` over `horizon` rounds.
    pub fn constant(delta: f64, horizon: usize) -> Result<Self, SolveError> {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(SolveError::Numerical(format!(
                "discount factor must lie in (0, 1], got {delta}"
            )));
        }
        Self::from_ratios(vec![delta; horizon.saturating_sub(1)])
    }

    /// Explicit ratio sequence; the horizon is `ratios.len() + 1`.
    pub fn from_ratios(ratios: Vec<f64>) -> Result<Self, SolveError> {
        if ratios.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
            return Err(SolveError::Numerical(
                "discount ratios must lie in (0, 1]".into(),
            ));
        }
        let horizon = ratios.len() + 1;
        let mut weights = Vec::with_capacity(horizon);
        let mut phase_of = Vec::with_capacity(horizon);
        weights.push(1.0);
        phase_of.push(0);
        for (i, r) in ratios.iter().enumerate() {
            weights.push(weights[i] * r);
            let prev = phase_of[i];
            phase_of.push(if *r == 1.0 { prev } else { prev + 1 });
        }
        Ok(DiscountSchedule {
            ratios,
            weights,
            phase_of,
        })
    }

    pub fn horizon(&self) -> usize {
        self.weights.len()
    }

    /// `rho_t` linking round `t` to `t+1`; `t` is 1-based and `< horizon`.
    pub fn ratio_after(&self, t: usize) -> f64 {
        self.ratios[t - 1]
    }

    /// Discount weight `d_t` of round `t` relative to round 1.
    pub fn weight(&self, t: usize) -> f64 {
        self.weights[t - 1]
    }

    /// `sum_t d_t`, the total obligation multiplier.
    pub fn total_weight(&self) -> f64 {
        numeric::pairwise_sum(&self.weights)
    }

    fn phase(&self, t: usize) -> usize {
        self.phase_of[t - 1]
    }
}

/// Canonical memo key: the round plus, for each discount phase entered so
/// far, how many rounds each group has won within that phase.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct StateKey {
    t: u16,
    counts: Vec<(u16, u16)>,
}

/// Residual obligations at the start of round `t`, plus the memo key of the
/// winner history that produced them.
#[derive(Debug, Clone)]
pub struct ResidualState {
    pub t: usize,
    pub r1: f64,
    pub r2: f64,
    key: StateKey,
}

impl ResidualState {
    /// Round-1 state: `r_i = alpha_i * sum_t d_t`.
    pub fn initial(schedule: &DiscountSchedule, alpha1: f64, alpha2: f64) -> Self {
        let w = schedule.total_weight();
        ResidualState {
            t: 1,
            r1: alpha1 * w,
            r2: alpha2 * w,
            key: StateKey {
                t: 1,
                counts: vec![(0, 0)],
            },
        }
    }
}

/// Round-1 residual obligations under a constant discount:
/// `r_i = alpha_i (1 - delta^T)/(1 - delta)`, or `T alpha_i` at `delta = 1`.
pub fn residual_init(
    horizon: usize,
    delta: f64,
    alpha1: f64,
    alpha2: f64,
) -> Result<ResidualState, SolveError> {
    let schedule = DiscountSchedule::constant(delta, horizon)?;
    Ok(ResidualState::initial(&schedule, alpha1, alpha2))
}

/// Advances the residual state past round `t`: the winning group's obligation
/// drops by one item, both are clamped at zero (an overfulfilled constraint
/// is vacuous) and renormalized by the round's discount ratio.
pub fn residual_update(
    state: &ResidualState,
    winner: Option<Group>,
    schedule: &DiscountSchedule,
) -> ResidualState {
    assert!(
        state.t < schedule.horizon(),
        "no round follows t = {}",
        state.t
    );
    let rho = schedule.ratio_after(state.t);
    let (w1, w2) = match winner {
        Some(Group::One) => (1.0, 0.0),
        Some(Group::Two) => (0.0, 1.0),
        None => (0.0, 0.0),
    };
    let mut counts = state.key.counts.clone();
    if let Some(g) = winner {
        let slot = counts.last_mut().expect("key holds the current phase");
        match g {
            Group::One => slot.0 += 1,
            Group::Two => slot.1 += 1,
        }
    }
    if schedule.phase(state.t + 1) != schedule.phase(state.t) {
        counts.push((0, 0));
    }
    ResidualState {
        t: state.t + 1,
        r1: (state.r1 - w1).max(0.0) / rho,
        r2: (state.r2 - w2).max(0.0) / rho,
        key: StateKey {
            t: (state.t + 1) as u16,
            counts,
        },
    }
}

/// Closed-form terminal feasibility: one item, so each group's remaining
/// obligation is at most 1 and together they fit in the round.
fn terminal_feasible(r1: f64, r2: f64) -> bool {
    r1 <= 1.0 + FEAS_TOL && r2 <= 1.0 + FEAS_TOL && r1 + r2 <= 1.0 + FEAS_TOL
}

/// Continuation-value differences driving round thresholds and transfers:
/// `d_i` is group `i`'s per-buyer gain from *not* receiving this round's item
/// (their obligation stays alive); `d0` is the seller's swing from allocating
/// to group 1 versus group 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaTriple {
    pub d1: f64,
    pub d2: f64,
    pub d0: f64,
}

/// How one round of the mechanism is played.
#[derive(Debug, Clone, Copy)]
pub enum RoundMechanism {
    /// No continuation can honor the obligations.
    Infeasible,
    /// Only this group's continuation is feasible: within-group second-price
    /// round, no cross-group comparison.
    Forced { group: Group },
    /// Both continuations feasible: group 1 wins iff
    /// `phi1(v1) - phi2(v2) >= theta`; every buyer of the winning group
    /// receives `rho * d_i` as a participation reward, every buyer of group
    /// `i` pays the entry fee `rho * d_i * zeta_i` up front.
    Boundary {
        theta: f64,
        deltas: DeltaTriple,
        zeta1: f64,
        zeta2: f64,
    },
    /// Final round: static fair auction at the clamped residual levels.
    LastRound { rule: AffineRule },
}

/// Seller and per-buyer continuation values of a state, `feasible = false`
/// marking states with no conforming mechanism (the numbers are meaningless
/// there and set to zero).
#[derive(Debug, Clone, Copy)]
pub struct InterimValues {
    pub feasible: bool,
    pub mu: f64,
    pub nu1: f64,
    pub nu2: f64,
}

/// One buyer's three payment components for a round.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BuyerCharge {
    /// Threshold-bid payment; nonzero only for the winner.
    pub base: f64,
    /// Participation reward (a credit when `d_i > 0`); applied to every buyer
    /// of the winning group. Sign follows `d_i`, no clipping.
    pub reward: f64,
    /// Entry fee `rho * d_i * zeta_i`; applied to every buyer of group `i`.
    pub entry_fee: f64,
}

impl BuyerCharge {
    pub fn total(self) -> f64 {
        self.base + self.reward + self.entry_fee
    }
}

/// All transfers of one round.
#[derive(Debug, Clone)]
pub struct PaymentBreakdown {
    pub winner: Option<(Group, usize)>,
    pub group1: Vec<BuyerCharge>,
    pub group2: Vec<BuyerCharge>,
}

#[derive(Clone, Copy)]
struct Node {
    feasible: bool,
    mu: f64,
    nu1: f64,
    nu2: f64,
    mech: RoundMechanism,
}

impl Node {
    fn infeasible() -> Self {
        Node {
            feasible: false,
            mu: 0.0,
            nu1: 0.0,
            nu2: 0.0,
            mech: RoundMechanism::Infeasible,
        }
    }
}

/// The fully solved mechanism: every state reachable from the round-1 state
/// is classified and its interim values memoized. Immutable after
/// construction, so lookups may be shared across threads.
pub struct DynamicSolution {
    profile: GroupProfile,
    schedule: DiscountSchedule,
    alpha1: f64,
    alpha2: f64,
    terminal: TerminalPolicy,
    root: ResidualState,
    memo: HashMap<StateKey, Node>,
    oracle_calls: u64,
}

impl std::fmt::Debug for DynamicSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DynamicSolution")
            .field("horizon", &self.horizon())
            .field("n", &self.n())
            .field("levels", &(self.alpha1, self.alpha2))
            .field("terminal", &self.terminal)
            .field("states", &self.memo.len())
            .field("oracle_calls", &self.oracle_calls)
            .finish_non_exhaustive()
    }
}

impl DynamicSolution {
    pub fn root(&self) -> &ResidualState {
        &self.root
    }

    pub fn terminal_policy(&self) -> TerminalPolicy {
        self.terminal
    }

    pub fn horizon(&self) -> usize {
        self.schedule.horizon()
    }

    pub fn n(&self) -> u32 {
        self.profile.n()
    }

    pub fn profile(&self) -> &GroupProfile {
        &self.profile
    }

    pub fn schedule(&self) -> &DiscountSchedule {
        &self.schedule
    }

    pub fn levels(&self) -> (f64, f64) {
        (self.alpha1, self.alpha2)
    }

    /// Number of distinct memoized states (feasible and infeasible).
    pub fn states(&self) -> usize {
        self.memo.len()
    }

    /// Interim-solve invocations performed (static solves and round-value
    /// integral bundles; pure feasibility arithmetic is not counted).
    pub fn oracle_calls(&self) -> u64 {
        self.oracle_calls
    }

    /// Residual state after round `state.t` given the round's winner.
    pub fn advance(&self, state: &ResidualState, winner: Option<Group>) -> ResidualState {
        residual_update(state, winner, &self.schedule)
    }

    fn node(&self, state: &ResidualState) -> Option<&Node> {
        self.memo.get(&state.key)
    }

    /// Whether a conforming mechanism exists from this state on.
    pub fn feasible(&self, state: &ResidualState) -> bool {
        self.node(state).is_some_and(|n| n.feasible)
    }

    /// Continuation values; `None` for states never reached from the root.
    pub fn interim(&self, state: &ResidualState) -> Option<InterimValues> {
        self.node(state).map(|n| InterimValues {
            feasible: n.feasible,
            mu: n.mu,
            nu1: n.nu1,
            nu2: n.nu2,
        })
    }

    /// The round's mechanism; `None` for states never reached from the root.
    pub fn round_mechanism(&self, state: &ResidualState) -> Option<RoundMechanism> {
        self.node(state).map(|n| n.mech)
    }

    /// Continuation-value differences at a boundary-regime state.
    pub fn deltas(&self, state: &ResidualState) -> Option<DeltaTriple> {
        match self.round_mechanism(state)? {
            RoundMechanism::Boundary { deltas, .. } => Some(deltas),
            _ => None,
        }
    }

    /// Probability that the given group wins this round's boundary contest
    /// when fielding one fewer buyer (zero when `n = 1`).
    pub fn zeta(&self, state: &ResidualState, group: Group) -> Option<f64> {
        match self.round_mechanism(state)? {
            RoundMechanism::Boundary { zeta1, zeta2, .. } => Some(match group {
                Group::One => zeta1,
                Group::Two => zeta2,
            }),
            _ => None,
        }
    }

    /// Resolves one round on full bid vectors: winner, threshold payment, and
    /// the reward/entry-fee transfers of the boundary regime.
    pub fn payment_dynamic(
        &self,
        state: &ResidualState,
        bids1: &[f64],
        bids2: &[f64],
    ) -> Result<PaymentBreakdown, SolveError> {
        let n = self.profile.n() as usize;
        assert!(
            bids1.len() == n && bids2.len() == n,
            "bid vectors must have length n = {n}"
        );
        let (d1, d2) = self.profile.round(state.t);
        let mech = self.round_mechanism(state).ok_or_else(|| {
            SolveError::Numerical("payment requested for an unexplored state".into())
        })?;
        let mut out = PaymentBreakdown {
            winner: None,
            group1: vec![BuyerCharge::default(); n],
            group2: vec![BuyerCharge::default(); n],
        };
        match mech {
            RoundMechanism::Infeasible => {
                return Err(SolveError::Numerical(
                    "payment requested for an infeasible state".into(),
                ))
            }
            RoundMechanism::Forced { group } => {
                let (bids, dist, charges) = match group {
                    Group::One => (bids1, d1, &mut out.group1),
                    Group::Two => (bids2, d2, &mut out.group2),
                };
                let idx = argmax(bids);
                let price = bids
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != idx)
                    .map(|(_, b)| *b)
                    .fold(dist.lo(), f64::max);
                charges[idx].base = price;
                out.winner = Some((group, idx));
            }
            RoundMechanism::Boundary {
                theta,
                deltas,
                zeta1,
                zeta2,
            } => {
                let rho = self.schedule.ratio_after(state.t);
                for c in out.group1.iter_mut() {
                    c.entry_fee = rho * deltas.d1 * zeta1;
                }
                for c in out.group2.iter_mut() {
                    c.entry_fee = rho * deltas.d2 * zeta2;
                }
                let rule = AffineRule::threshold(theta);
                let i1 = argmax(bids1);
                let i2 = argmax(bids2);
                let winner = static_solver::allocate_static(&rule, d1, d2, bids1[i1], bids2[i2])
                    .expect("a must-allocate rule always picks a winner");
                let (idx, bids, d, charges) = match winner {
                    Group::One => (i1, bids1, deltas.d1, &mut out.group1),
                    Group::Two => (i2, bids2, deltas.d2, &mut out.group2),
                };
                let own_second = bids
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != idx)
                    .map(|(_, b)| *b)
                    .fold(None, |acc: Option<f64>, b| {
                        Some(acc.map_or(b, |a| a.max(b)))
                    });
                let opp_best = match winner {
                    Group::One => bids2[i2],
                    Group::Two => bids1[i1],
                };
                charges[idx].base =
                    static_solver::winning_threshold(&rule, d1, d2, winner, own_second, opp_best);
                for c in charges.iter_mut() {
                    c.reward = -rho * d;
                }
                out.winner = Some((winner, idx));
            }
            RoundMechanism::LastRound { rule } => {
                let res = static_solver::static_payment(&rule, d1, d2, bids1, bids2);
                out.winner = res.winner;
                for (c, p) in out.group1.iter_mut().zip(res.payments1) {
                    c.base = p;
                }
                for (c, p) in out.group2.iter_mut().zip(res.payments2) {
                    c.base = p;
                }
            }
        }
        Ok(out)
    }
}

fn argmax(bids: &[f64]) -> usize {
    let mut best = 0;
    for (i, b) in bids.iter().enumerate() {
        if *b > bids[best] {
            best = i;
        }
    }
    best
}

struct Solver<'a> {
    profile: &'a GroupProfile,
    schedule: &'a DiscountSchedule,
    terminal: TerminalPolicy,
    memo: HashMap<StateKey, Node>,
    oracle_calls: u64,
}

impl Solver<'_> {
    fn solve(&mut self, state: &ResidualState) -> Result<Node, SolveError> {
        if let Some(node) = self.memo.get(&state.key) {
            return Ok(*node);
        }
        let node = if state.t == self.schedule.horizon() {
            self.solve_terminal(state)?
        } else {
            self.solve_interior(state)?
        };
        self.memo.insert(state.key.clone(), node);
        Ok(node)
    }

    fn solve_terminal(&mut self, state: &ResidualState) -> Result<Node, SolveError> {
        if !terminal_feasible(state.r1, state.r2) {
            return Ok(Node::infeasible());
        }
        let (d1, d2) = self.profile.round(state.t);
        let must = matches!(self.terminal, TerminalPolicy::MustAllocate);
        let sol = solve_static(
            d1,
            d2,
            self.profile.n(),
            state.r1.min(1.0),
            state.r2.min(1.0),
            must,
        )
        .map_err(|e| match e {
            SolveError::Infeasible { .. } => SolveError::Numerical(format!(
                "terminal solve rejected levels ({}, {}) that passed the feasibility bound",
                state.r1, state.r2
            )),
            other => other,
        })?;
        self.oracle_calls += 1;
        Ok(Node {
            feasible: true,
            mu: sol.seller_utility,
            nu1: sol.buyer_utility_1,
            nu2: sol.buyer_utility_2,
            mech: RoundMechanism::LastRound { rule: sol.rule },
        })
    }

    fn solve_interior(&mut self, state: &ResidualState) -> Result<Node, SolveError> {
        let child1 = residual_update(state, Some(Group::One), self.schedule);
        let child2 = residual_update(state, Some(Group::Two), self.schedule);
        let c1 = self.solve(&child1)?;
        let c2 = self.solve(&child2)?;
        let (d1, d2) = self.profile.round(state.t);
        let n = self.profile.n();
        let rho = self.schedule.ratio_after(state.t);
        let node = match (c1.feasible, c2.feasible) {
            (false, false) => Node::infeasible(),
            (true, false) => self.forced(Group::One, &c1, d1, d2, n, rho),
            (false, true) => self.forced(Group::Two, &c2, d1, d2, n, rho),
            (true, true) => self.boundary(&c1, &c2, d1, d2, n, rho),
        };
        Ok(node)
    }

    /// Whole-round second-price auction inside the forced group; the other
    /// group is silent and collects only its discounted continuation.
    fn forced(
        &mut self,
        group: Group,
        child: &Node,
        d1: &ValueDistribution,
        d2: &ValueDistribution,
        n: u32,
        rho: f64,
    ) -> Node {
        let d = match group {
            Group::One => d1,
            Group::Two => d2,
        };
        // Per-buyer information rent of an n-buyer second-price round.
        let rent = numeric::integrate(
            |v| (1.0 - d.cdf(v).unwrap_or(1.0)) * d.cdf(v).unwrap_or(1.0).powi(n as i32 - 1),
            d.lo(),
            d.hi(),
            QUAD_TOL,
        );
        // Seller value: expected virtual value of the group's best draw.
        let virt = numeric::integrate(
            |v| {
                d.phi(v)
                    * n as f64
                    * d.cdf(v).unwrap_or(1.0).powi(n as i32 - 1)
                    * d.pdf(v).unwrap_or(0.0)
            },
            d.lo(),
            d.hi(),
            QUAD_TOL,
        );
        self.oracle_calls += 1;
        let (nu1, nu2) = match group {
            Group::One => (rent + rho * child.nu1, rho * child.nu2),
            Group::Two => (rho * child.nu1, rent + rho * child.nu2),
        };
        Node {
            feasible: true,
            mu: virt + rho * child.mu,
            nu1,
            nu2,
            mech: RoundMechanism::Forced { group },
        }
    }

    /// Boundary regime: threshold from continuation differences, transfers
    /// calibrated so the round is truthful and participation is worthwhile.
    fn boundary(
        &mut self,
        c1: &Node,
        c2: &Node,
        d1: &ValueDistribution,
        d2: &ValueDistribution,
        n: u32,
        rho: f64,
    ) -> Node {
        let deltas = DeltaTriple {
            d1: c2.nu1 - c1.nu1,
            d2: c1.nu2 - c2.nu2,
            d0: c1.mu - c2.mu,
        };
        let theta = n as f64 * rho * (deltas.d1 - deltas.d2) - rho * deltas.d0;
        let p1 = region_integral(d1, n, d2, n, theta, None, RegionWeight::Probability);
        let p2 = 1.0 - p1;
        let (zeta1, zeta2) = if n == 1 {
            (0.0, 0.0)
        } else {
            let nf = n as f64;
            let gap1 = (nf - 1.0) * rho * deltas.d1 - nf * rho * deltas.d2 - rho * deltas.d0;
            let gap2 = (nf - 1.0) * rho * deltas.d2 - nf * rho * deltas.d1 + rho * deltas.d0;
            (
                region_integral(d1, n - 1, d2, n, gap1, None, RegionWeight::Probability),
                region_integral(d2, n - 1, d1, n, gap2, None, RegionWeight::Probability),
            )
        };
        let rent1 = region_integral(d1, n, d2, n, theta, None, RegionWeight::InfoRent) / n as f64;
        let rent2 = region_integral(d2, n, d1, n, -theta, None, RegionWeight::InfoRent) / n as f64;
        let virt = region_integral(d1, n, d2, n, theta, None, RegionWeight::Virtual)
            + region_integral(d2, n, d1, n, -theta, None, RegionWeight::Virtual);
        self.oracle_calls += 1;
        let nf = n as f64;
        Node {
            feasible: true,
            mu: virt
                + rho * (p1 * c1.mu + p2 * c2.mu)
                + rho * nf * deltas.d1 * (zeta1 - p1)
                + rho * nf * deltas.d2 * (zeta2 - p2),
            nu1: rent1 + rho * c2.nu1 - rho * deltas.d1 * zeta1,
            nu2: rent2 + rho * c1.nu2 - rho * deltas.d2 * zeta2,
            mech: RoundMechanism::Boundary {
                theta,
                deltas,
                zeta1,
                zeta2,
            },
        }
    }
}

/// Violation magnitude of the terminal bounds; positive means infeasible.
fn terminal_violation(r1: f64, r2: f64) -> f64 {
    (r1 - 1.0).max(r2 - 1.0).max(r1 + r2 - 1.0)
}

/// Least-violating terminal state reachable from `state` — the witness cited
/// when no mechanism exists.
fn infeasibility_witness(
    state: &ResidualState,
    schedule: &DiscountSchedule,
    cache: &mut HashMap<StateKey, (f64, usize, f64, f64)>,
) -> (f64, usize, f64, f64) {
    if let Some(w) = cache.get(&state.key) {
        return *w;
    }
    let w = if state.t == schedule.horizon() {
        (
            terminal_violation(state.r1, state.r2),
            state.t,
            state.r1,
            state.r2,
        )
    } else {
        let a = infeasibility_witness(
            &residual_update(state, Some(Group::One), schedule),
            schedule,
            cache,
        );
        let b = infeasibility_witness(
            &residual_update(state, Some(Group::Two), schedule),
            schedule,
            cache,
        );
        if a.0 <= b.0 {
            a
        } else {
            b
        }
    };
    cache.insert(state.key.clone(), w);
    w
}

/// Solves the whole horizon by backward induction from the round-1 state.
///
/// Errors with an `Infeasible` witness (the least-violating terminal state)
/// when no mechanism can honor the levels; interior states that merely become
/// infeasible along some branch are kept as values and steer the forced
/// regime instead.
pub fn solve_dynamic(
    profile: &GroupProfile,
    schedule: &DiscountSchedule,
    alpha1: f64,
    alpha2: f64,
    terminal: TerminalPolicy,
) -> Result<DynamicSolution, SolveError> {
    if profile.horizon() != schedule.horizon() {
        return Err(SolveError::Numerical(format!(
            "profile covers {} rounds but the schedule covers {}",
            profile.horizon(),
            schedule.horizon()
        )));
    }
    if !(0.0..=1.0).contains(&alpha1) || !(0.0..=1.0).contains(&alpha2) {
        return Err(SolveError::Infeasible {
            alpha1,
            alpha2,
            detail: "levels must lie in [0, 1]".into(),
        });
    }
    let root = ResidualState::initial(schedule, alpha1, alpha2);
    let mut solver = Solver {
        profile,
        schedule,
        terminal,
        memo: HashMap::new(),
        oracle_calls: 0,
    };
    let root_node = solver.solve(&root)?;
    if !root_node.feasible {
        let mut cache = HashMap::new();
        let (_, t, r1, r2) = infeasibility_witness(&root, schedule, &mut cache);
        return Err(SolveError::Infeasible {
            alpha1,
            alpha2,
            detail: format!(
                "every branch violates the terminal bounds; closest miss at round {t} \
                 with residuals ({r1}, {r2}) against r1 <= 1, r2 <= 1, r1 + r2 <= 1"
            ),
        });
    }
    Ok(DynamicSolution {
        profile: profile.clone(),
        schedule: schedule.clone(),
        alpha1,
        alpha2,
        terminal,
        root,
        memo: solver.memo,
        oracle_calls: solver.oracle_calls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::ValueDistribution;
    use crate::static_solver::static_interim;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn asym_profile(horizon: usize, n: u32) -> GroupProfile {
        let d1 = ValueDistribution::uniform(0.0, 1.0).unwrap();
        let d2 = ValueDistribution::shifted_uniform(0.0, 1.0, -0.5).unwrap();
        GroupProfile::new(vec![d1; horizon], vec![d2; horizon], n).unwrap()
    }

    fn uniform_profile(horizon: usize, n: u32) -> GroupProfile {
        let d = ValueDistribution::uniform(0.0, 1.0).unwrap();
        GroupProfile::new(vec![d.clone(); horizon], vec![d; horizon], n).unwrap()
    }

    #[test]
    fn residual_init_examples() {
        let s = residual_init(2, 0.5, 0.4, 0.4).unwrap();
        assert!((s.r1 - 0.6).abs() < 1e-12 && (s.r2 - 0.6).abs() < 1e-12);
        let s = residual_init(4, 1.0, 1.0 / 3.0, 1.0 / 3.0).unwrap();
        assert!((s.r1 - 4.0 / 3.0).abs() < 1e-12);
        let s = residual_init(1, 0.7, 0.3, 0.2).unwrap();
        assert!((s.r1 - 0.3).abs() < 1e-12 && (s.r2 - 0.2).abs() < 1e-12);
    }

    #[test]
    fn residual_update_examples() {
        // Winning drops the obligation by one item; the loser's obligation is
        // inflated by the discount ratio and can overshoot feasibility.
        let sched = DiscountSchedule::constant(0.5, 2).unwrap();
        let s = ResidualState::initial(&sched, 0.4, 0.4);
        let next = residual_update(&s, Some(Group::One), &sched);
        assert!((next.r1 - 0.0).abs() < 1e-12, "clamped at zero");
        assert!((next.r2 - 1.2).abs() < 1e-12, "0.6 / 0.5");

        let sched = DiscountSchedule::constant(1.0, 4).unwrap();
        let s = ResidualState::initial(&sched, 1.0 / 3.0, 1.0 / 3.0);
        let next = residual_update(&s, Some(Group::One), &sched);
        assert!((next.r1 - 1.0 / 3.0).abs() < 1e-12);
        assert!((next.r2 - 4.0 / 3.0).abs() < 1e-12);

        let sched = DiscountSchedule::constant(1.0, 3).unwrap();
        let mut s = ResidualState::initial(&sched, 0.25, 0.25);
        s.r1 = 0.5;
        s.r2 = 0.5;
        let next = residual_update(&s, None, &sched);
        assert_eq!((next.r1, next.r2), (0.5, 0.5));
    }

    #[test]
    fn infeasible_two_round_half_discount() {
        // alpha = (0.4, 0.4) at delta = 0.5 puts 0.6 on each group; whoever
        // loses round 1 needs 1.2 in the final round alone.
        let profile = asym_profile(2, 1);
        let sched = DiscountSchedule::constant(0.5, 2).unwrap();
        let err = solve_dynamic(&profile, &sched, 0.4, 0.4, TerminalPolicy::Reserve).unwrap_err();
        match err {
            SolveError::Infeasible { detail, .. } => {
                assert!(detail.contains("1.2"), "witness should cite 1.2: {detail}")
            }
            other => panic!("expected infeasibility, got {other}"),
        }
    }

    #[test]
    fn infeasible_branch_after_three_wins() {
        // delta = 1, T = 4, alpha = (1/3, 1/3): feasible overall, but three
        // straight group-1 wins leave group 2 needing 4/3 of the last round.
        let profile = uniform_profile(4, 1);
        let sched = DiscountSchedule::constant(1.0, 4).unwrap();
        let sol = solve_dynamic(
            &profile,
            &sched,
            1.0 / 3.0,
            1.0 / 3.0,
            TerminalPolicy::Reserve,
        )
        .unwrap();
        let mut state = sol.root().clone();
        assert!(sol.feasible(&state));
        for _ in 0..3 {
            state = sol.advance(&state, Some(Group::One));
        }
        assert!((state.r2 - 4.0 / 3.0).abs() < 1e-12);
        assert!(!sol.feasible(&state));
        assert!(matches!(
            sol.round_mechanism(&state),
            Some(RoundMechanism::Infeasible)
        ));
        // Two wins then a loss keeps the branch alive and forces group 2.
        let mut state = sol.root().clone();
        state = sol.advance(&state, Some(Group::One));
        state = sol.advance(&state, Some(Group::One));
        assert!(matches!(
            sol.round_mechanism(&state),
            Some(RoundMechanism::Forced { group: Group::Two })
        ));
    }

    #[test]
    fn unit_discount_memo_stays_on_lattice() {
        // With delta = 1 only win counts matter: at most t states at round t,
        // T(T+1)/2 overall.
        let horizon = 6;
        let profile = uniform_profile(horizon, 1);
        let sched = DiscountSchedule::constant(1.0, horizon).unwrap();
        let sol = solve_dynamic(
            &profile,
            &sched,
            1.0 / 3.0,
            1.0 / 3.0,
            TerminalPolicy::Reserve,
        )
        .unwrap();
        assert!(
            sol.states() <= horizon * (horizon + 1) / 2,
            "memo holds {} states",
            sol.states()
        );
        assert!(sol.oracle_calls() <= sol.states() as u64);
    }

    #[test]
    fn deltas_match_static_children() {
        // T = 2: the children are plain static solves, so the continuation
        // differences must equal differences of static interim values.
        let profile = asym_profile(2, 1);
        let sched = DiscountSchedule::constant(0.99, 2).unwrap();
        let sol = solve_dynamic(&profile, &sched, 0.2, 0.2, TerminalPolicy::Reserve).unwrap();
        let root = sol.root().clone();
        let after1 = sol.advance(&root, Some(Group::One));
        let after2 = sol.advance(&root, Some(Group::Two));
        let (d1, d2) = profile.round(2);
        let s1 = solve_static(d1, d2, 1, after1.r1.min(1.0), after1.r2.min(1.0), false).unwrap();
        let s2 = solve_static(d1, d2, 1, after2.r1.min(1.0), after2.r2.min(1.0), false).unwrap();
        let (m1, n11, n21) = static_interim(&s1.rule, d1, d2, 1);
        let (m2, n12, n22) = static_interim(&s2.rule, d1, d2, 1);
        let deltas = sol.deltas(&root).expect("boundary regime at the root");
        assert!((deltas.d1 - (n12 - n11)).abs() < 1e-6, "d1 = {:?}", deltas);
        assert!((deltas.d2 - (n21 - n22)).abs() < 1e-6, "d2 = {:?}", deltas);
        assert!((deltas.d0 - (m1 - m2)).abs() < 1e-6, "d0 = {:?}", deltas);

        // Frozen hand-quadrature anchors for this instance.
        assert!((deltas.d1 - 0.03197).abs() < 1e-3);
        assert!((deltas.d2 - 0.07545).abs() < 1e-3);
        assert!((deltas.d0 - (-0.07132)).abs() < 1e-3);
        match sol.round_mechanism(&root).unwrap() {
            RoundMechanism::Boundary { theta, .. } => {
                assert!((theta - 0.02756).abs() < 1e-3, "theta = {theta}")
            }
            other => panic!("expected boundary regime, got {other:?}"),
        }
    }

    #[test]
    fn symmetric_instance_has_zero_threshold() {
        let profile = uniform_profile(2, 1);
        let sched = DiscountSchedule::constant(0.9, 2).unwrap();
        let sol = solve_dynamic(&profile, &sched, 0.3, 0.3, TerminalPolicy::Reserve).unwrap();
        match sol.round_mechanism(sol.root()).unwrap() {
            RoundMechanism::Boundary { theta, deltas, .. } => {
                assert!(theta.abs() < 1e-6, "theta = {theta}");
                assert!((deltas.d1 - deltas.d2).abs() < 1e-6);
                assert!(deltas.d0.abs() < 1e-6);
            }
            other => panic!("expected boundary regime, got {other:?}"),
        }
    }

    #[test]
    fn unconstrained_root_reduces_to_zero_threshold_and_reserve_end() {
        // alpha = (0, 0): both children coincide, all deltas vanish, interior
        // rounds allocate by highest virtual value, round T keeps reserves.
        let profile = asym_profile(2, 1);
        let sched = DiscountSchedule::constant(0.99, 2).unwrap();
        let sol = solve_dynamic(&profile, &sched, 0.0, 0.0, TerminalPolicy::Reserve).unwrap();
        match sol.round_mechanism(sol.root()).unwrap() {
            RoundMechanism::Boundary {
                theta,
                deltas,
                zeta1,
                zeta2,
            } => {
                assert_eq!(theta, 0.0);
                assert_eq!((deltas.d1, deltas.d2, deltas.d0), (0.0, 0.0, 0.0));
                assert_eq!((zeta1, zeta2), (0.0, 0.0));
            }
            other => panic!("expected boundary regime, got {other:?}"),
        }
        let last = sol.advance(sol.root(), Some(Group::One));
        match sol.round_mechanism(&last).unwrap() {
            RoundMechanism::LastRound { rule } => {
                assert_eq!(rule.gamma, 0.0);
                assert!(!rule.must_allocate);
            }
            other => panic!("expected last-round regime, got {other:?}"),
        }
    }

    #[test]
    fn terminal_rule_matches_direct_static_solve() {
        let profile = asym_profile(2, 1);
        let sched = DiscountSchedule::constant(0.9, 2).unwrap();
        let sol = solve_dynamic(&profile, &sched, 0.25, 0.25, TerminalPolicy::Reserve).unwrap();
        let last = sol.advance(sol.root(), Some(Group::One));
        let (d1, d2) = profile.round(2);
        let direct = solve_static(d1, d2, 1, last.r1.min(1.0), last.r2.min(1.0), false).unwrap();
        match sol.round_mechanism(&last).unwrap() {
            RoundMechanism::LastRound { rule } => {
                assert!((rule.gamma - direct.rule.gamma).abs() < 1e-9);
                assert!((rule.eta1 - direct.rule.eta1).abs() < 1e-9);
                assert!((rule.eta2 - direct.rule.eta2).abs() < 1e-9);
            }
            other => panic!("expected last-round regime, got {other:?}"),
        }
    }

    #[test]
    fn forced_round_is_vickrey() {
        // delta = 1, T = 3, alpha = (2/3, 1/3): once group 2 takes round 1,
        // group 1 still needs both remaining rounds, so round 2 is forced —
        // an interior round whose group-2 child would violate the terminal
        // bounds.
        let profile = uniform_profile(3, 2);
        let sched = DiscountSchedule::constant(1.0, 3).unwrap();
        let sol = solve_dynamic(
            &profile,
            &sched,
            2.0 / 3.0,
            1.0 / 3.0,
            TerminalPolicy::Reserve,
        )
        .unwrap();
        let state = sol.advance(sol.root(), Some(Group::Two));
        assert_eq!((state.r1, state.r2), (2.0, 0.0));
        assert!(matches!(
            sol.round_mechanism(&state),
            Some(RoundMechanism::Forced { group: Group::One })
        ));
        let pay = sol
            .payment_dynamic(&state, &[0.9, 0.4], &[0.8, 0.7])
            .unwrap();
        assert_eq!(pay.winner, Some((Group::One, 0)));
        assert!((pay.group1[0].base - 0.4).abs() < 1e-12);
        assert_eq!(pay.group1[1], BuyerCharge::default());
        assert_eq!(pay.group2[0], BuyerCharge::default());
    }

    #[test]
    fn boundary_payment_carries_rewards_and_fees() {
        let profile = asym_profile(2, 2);
        let sched = DiscountSchedule::constant(0.9, 2).unwrap();
        let sol = solve_dynamic(&profile, &sched, 0.3, 0.3, TerminalPolicy::Reserve).unwrap();
        let root = sol.root().clone();
        let (theta, deltas, zeta1, zeta2) = match sol.round_mechanism(&root).unwrap() {
            RoundMechanism::Boundary {
                theta,
                deltas,
                zeta1,
                zeta2,
            } => (theta, deltas, zeta1, zeta2),
            other => panic!("expected boundary regime, got {other:?}"),
        };
        assert!(zeta1 > 0.0 && zeta1 < 1.0);
        assert!(zeta2 > 0.0 && zeta2 < 1.0);
        let bids1 = [0.9, 0.5];
        let bids2 = [0.3, -0.2];
        let pay = sol.payment_dynamic(&root, &bids1, &bids2).unwrap();
        // Winner by boundary comparison; with these bids group 1 clears theta.
        let (dd1, dd2) = profile.round(1);
        assert!(dd1.phi(0.9) - dd2.phi(0.3) >= theta);
        assert_eq!(pay.winner, Some((Group::One, 0)));
        let rho = 0.9;
        for c in &pay.group1 {
            assert!((c.reward - (-rho * deltas.d1)).abs() < 1e-12);
            assert!((c.entry_fee - rho * deltas.d1 * zeta1).abs() < 1e-12);
        }
        for c in &pay.group2 {
            assert_eq!(c.reward, 0.0);
            assert!((c.entry_fee - rho * deltas.d2 * zeta2).abs() < 1e-12);
        }
        // Base: larger of the teammate bid and the boundary bid.
        let boundary_bid = dd1.inv_phi_clamped(dd2.phi(0.3) + theta);
        assert!((pay.group1[0].base - boundary_bid.max(0.5)).abs() < 1e-9);
        assert_eq!(pay.group1[1].base, 0.0);
    }

    /// zeta against a Monte Carlo of the (n-1 vs n) contest at the same gap.
    #[test]
    fn zeta_matches_monte_carlo() {
        let profile = uniform_profile(2, 2);
        let sched = DiscountSchedule::constant(0.9, 2).unwrap();
        let sol = solve_dynamic(&profile, &sched, 0.2, 0.35, TerminalPolicy::Reserve).unwrap();
        let root = sol.root().clone();
        let (theta_gap1, zeta1) = match sol.round_mechanism(&root).unwrap() {
            RoundMechanism::Boundary { deltas, zeta1, .. } => {
                let rho = 0.9;
                let gap = rho * deltas.d1 - 2.0 * rho * deltas.d2 - rho * deltas.d0;
                (gap, zeta1)
            }
            other => panic!("expected boundary regime, got {other:?}"),
        };
        let (d1, d2) = profile.round(1);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let reps = 100_000;
        let mut hits = 0u64;
        for _ in 0..reps {
            let own = d1.sample(&mut rng); // n-1 = 1 teammate
            let rival = f64::max(d2.sample(&mut rng), d2.sample(&mut rng));
            if d1.phi(own) - d2.phi(rival) >= theta_gap1 {
                hits += 1;
            }
        }
        let p = hits as f64 / reps as f64;
        let se = (p * (1.0 - p) / reps as f64).sqrt();
        assert!(
            (zeta1 - p).abs() <= 3.0 * se.max(1e-4),
            "zeta1 = {zeta1}, MC = {p} (se {se})"
        );
    }

    #[test]
    fn bucketed_schedule_phases_and_weights() {
        // Ratios (1, 0.49, 1, 0.49, 1) produce three two-round phases.
        let sched = DiscountSchedule::from_ratios(vec![1.0, 0.49, 1.0, 0.49, 1.0]).unwrap();
        assert_eq!(sched.horizon(), 6);
        assert_eq!(
            (1..=6).map(|t| sched.phase(t)).collect::<Vec<_>>(),
            vec![0, 0, 1, 1, 2, 2]
        );
        assert!((sched.weight(3) - 0.49).abs() < 1e-12);
        assert!((sched.weight(5) - 0.49 * 0.49).abs() < 1e-12);
        // Within a phase the memo merges orders: win sequences (1,2) and
        // (2,1) land on the same key.
        let a = ResidualState::initial(&sched, 0.2, 0.2);
        let p12 = residual_update(
            &residual_update(&a, Some(Group::One), &sched),
            Some(Group::Two),
            &sched,
        );
        let p21 = residual_update(
            &residual_update(&a, Some(Group::Two), &sched),
            Some(Group::One),
            &sched,
        );
        assert_eq!(p12.key, p21.key);
        assert_eq!(p12.r1.to_bits(), p21.r1.to_bits());
        assert_eq!(p12.r2.to_bits(), p21.r2.to_bits());
    }

    #[test]
    fn interim_mu_matches_direct_rollout_probability_mix() {
        // Cross-check the root seller value against an independent forward
        // Monte Carlo using only payments (10^5 rounds, 3 SE).
        let profile = asym_profile(2, 1);
        let sched = DiscountSchedule::constant(0.99, 2).unwrap();
        let sol = solve_dynamic(&profile, &sched, 0.2, 0.2, TerminalPolicy::Reserve).unwrap();
        let root = sol.root().clone();
        let mu = sol.interim(&root).unwrap().mu;
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let reps = 100_000;
        let mut revs = Vec::with_capacity(reps);
        for _ in 0..reps {
            let mut state = root.clone();
            let mut rev = 0.0;
            let mut disc = 1.0;
            for t in 1..=2 {
                let (d1, d2) = profile.round(t);
                let b1 = [d1.sample(&mut rng)];
                let b2 = [d2.sample(&mut rng)];
                let pay = sol.payment_dynamic(&state, &b1, &b2).unwrap();
                rev += disc
                    * (pay.group1.iter().map(|c| c.total()).sum::<f64>()
                        + pay.group2.iter().map(|c| c.total()).sum::<f64>());
                if t < 2 {
                    let winner = pay.winner.map(|(g, _)| g);
                    state = sol.advance(&state, winner);
                    disc *= 0.99;
                }
            }
            revs.push(rev);
        }
        let (mean, se) = numeric::mean_and_se(&revs);
        assert!(
            (mean - mu).abs() <= 3.0 * se,
            "MC revenue {mean} vs interim {mu} (se {se})"
        );
    }
}
