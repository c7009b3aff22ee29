//! Forward execution of solved mechanisms: trajectory simulation, parallel
//! Monte Carlo summaries, brute-force incentive checks, and the paired
//! utility-difference experiment over a grid of fairness levels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::approx::{PlanExecution, PlanRound};
use crate::dist::{GroupProfile, ValueDistribution};
use crate::dynamic_solver::{
    BuyerCharge, DynamicSolution, PaymentBreakdown, ResidualState, RoundMechanism,
};
use crate::numeric;
use crate::static_solver::{
    static_payment, winning_threshold, AffineRule, Group, SolveError, StaticRoundOutcome,
};

/// A mechanism ready to be played forward round by round.
#[derive(Clone, Copy)]
pub enum Mechanism<'a> {
    /// Exact backward-induction solution.
    Exact(&'a DynamicSolution),
    /// Approximation plan (fair phase plus unconstrained tail).
    Plan(&'a PlanExecution),
}

impl<'a> Mechanism<'a> {
    pub fn horizon(&self) -> usize {
        match self {
            Mechanism::Exact(sol) => sol.horizon(),
            Mechanism::Plan(exec) => exec.plan().horizon,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Mechanism::Exact(sol) => sol.n() as usize,
            Mechanism::Plan(exec) => exec.profile().n() as usize,
        }
    }

    pub fn profile(&self) -> &'a GroupProfile {
        match self {
            Mechanism::Exact(sol) => sol.profile(),
            Mechanism::Plan(exec) => exec.profile(),
        }
    }

    /// Discount weight of round `t` in the measure fairness is stated in:
    /// the schedule weight for exact runs, the true discount for plans.
    fn weight(&self, t: usize) -> f64 {
        match self {
            Mechanism::Exact(sol) => sol.schedule().weight(t),
            Mechanism::Plan(exec) => exec.plan().delta.powi(t as i32 - 1),
        }
    }
}

/// One realized play of the mechanism under truthful bidding.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Winner of each round (`None`: item kept at a reserve round).
    pub winners: Vec<Option<(Group, usize)>>,
    /// Full per-round transfers.
    pub payments: Vec<PaymentBreakdown>,
    /// Discounted sum of all transfers to the seller.
    pub revenue: f64,
    /// Discounted utility per buyer of group 1 / group 2.
    pub utilities1: Vec<f64>,
    pub utilities2: Vec<f64>,
    /// Discounted share of rounds won per group (weights normalized to 1).
    pub share1: f64,
    pub share2: f64,
}

fn outcome_to_breakdown(out: StaticRoundOutcome) -> PaymentBreakdown {
    PaymentBreakdown {
        winner: out.winner,
        group1: out
            .payments1
            .iter()
            .map(|&base| BuyerCharge {
                base,
                ..BuyerCharge::default()
            })
            .collect(),
        group2: out
            .payments2
            .iter()
            .map(|&base| BuyerCharge {
                base,
                ..BuyerCharge::default()
            })
            .collect(),
    }
}

/// Plays the mechanism on exogenous value draws (`values_g[t-1][j]` is buyer
/// `j`'s value in round `t`) with truthful bidding.
pub fn run_auction(
    mech: &Mechanism,
    values1: &[Vec<f64>],
    values2: &[Vec<f64>],
) -> Result<Trajectory, SolveError> {
    let horizon = mech.horizon();
    let n = mech.n();
    assert!(
        values1.len() == horizon && values2.len() == horizon,
        "value draws must cover all {horizon} rounds"
    );
    let mut winners = Vec::with_capacity(horizon);
    let mut payments = Vec::with_capacity(horizon);
    let mut revenue = 0.0;
    let mut utilities1 = vec![0.0; n];
    let mut utilities2 = vec![0.0; n];
    let mut weighted_wins = [0.0f64; 2];
    let mut total_weight = 0.0;

    let mut exact_state: Option<ResidualState> = match mech {
        Mechanism::Exact(sol) => Some(sol.root().clone()),
        Mechanism::Plan(exec) => Some(exec.fair().root().clone()),
    };

    for t in 1..=horizon {
        let bids1 = &values1[t - 1];
        let bids2 = &values2[t - 1];
        assert!(bids1.len() == n && bids2.len() == n, "need n = {n} bids");
        let pay = match mech {
            Mechanism::Exact(sol) => {
                let state = exact_state.as_ref().expect("state tracked every round");
                let pay = sol.payment_dynamic(state, bids1, bids2)?;
                if t < horizon {
                    let winner = pay.winner.map(|(g, _)| g);
                    exact_state = Some(sol.advance(state, winner));
                }
                pay
            }
            Mechanism::Plan(exec) => match exec.classify_round(t) {
                PlanRound::Fair => {
                    let fair = exec.fair();
                    let state = exact_state.as_ref().expect("fair state tracked");
                    let pay = fair.payment_dynamic(state, bids1, bids2)?;
                    if t < fair.horizon() {
                        let winner = pay.winner.map(|(g, _)| g);
                        exact_state = Some(fair.advance(state, winner));
                    }
                    pay
                }
                PlanRound::TailInterior => {
                    let (d1, d2) = exec.profile().round(t);
                    let rule = AffineRule::threshold(0.0);
                    outcome_to_breakdown(static_payment(&rule, d1, d2, bids1, bids2))
                }
                PlanRound::TailTerminal(rule) => {
                    let (d1, d2) = exec.profile().round(t);
                    outcome_to_breakdown(static_payment(rule, d1, d2, bids1, bids2))
                }
            },
        };

        let w = mech.weight(t);
        total_weight += w;
        if let Some((g, _)) = pay.winner {
            weighted_wins[g.index()] += w;
        }
        let mut round_transfers = 0.0;
        for j in 0..n {
            let c1 = pay.group1[j];
            let c2 = pay.group2[j];
            round_transfers += c1.total() + c2.total();
            let won1 = matches!(pay.winner, Some((Group::One, i)) if i == j);
            let won2 = matches!(pay.winner, Some((Group::Two, i)) if i == j);
            utilities1[j] += w * (if won1 { bids1[j] } else { 0.0 } - c1.total());
            utilities2[j] += w * (if won2 { bids2[j] } else { 0.0 } - c2.total());
        }
        revenue += w * round_transfers;
        winners.push(pay.winner);
        payments.push(pay);
    }

    Ok(Trajectory {
        winners,
        payments,
        revenue,
        utilities1,
        utilities2,
        share1: weighted_wins[0] / total_weight,
        share2: weighted_wins[1] / total_weight,
    })
}

/// Aggregated Monte Carlo statistics over truthful replications.
#[derive(Debug, Clone)]
pub struct MonteCarloSummary {
    pub replications: usize,
    pub revenue_mean: f64,
    pub revenue_se: f64,
    /// Mean/SE of the per-buyer discounted utility (averaged within a group).
    pub utility1_mean: f64,
    pub utility1_se: f64,
    pub utility2_mean: f64,
    pub utility2_se: f64,
    /// Mean/SE of the discounted win share per group.
    pub share1_mean: f64,
    pub share1_se: f64,
    pub share2_mean: f64,
    pub share2_se: f64,
    /// Per-round empirical win frequency per group.
    pub round_wins1: Vec<f64>,
    pub round_wins2: Vec<f64>,
}

struct RepStats {
    revenue: f64,
    u1: f64,
    u2: f64,
    share1: f64,
    share2: f64,
    winners: Vec<Option<Group>>,
}

/// Canonical value draws for one replication: round-major, group 1 before
/// group 2, buyer index ascending. The generator depends only on `(seed,
/// rep)` and the profile, never on the mechanism, so runs pair across
/// mechanisms; each replication gets its own cipher stream.
fn draw_values(
    profile: &GroupProfile,
    n: usize,
    seed: u64,
    rep: u64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    let horizon = profile.horizon();
    let mut v1 = Vec::with_capacity(horizon);
    let mut v2 = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let (d1, d2) = profile.round(t);
        v1.push((0..n).map(|_| d1.sample(&mut rng)).collect());
        v2.push((0..n).map(|_| d2.sample(&mut rng)).collect());
    }
    (v1, v2)
}

fn run_rep(mech: &Mechanism, seed: u64, rep: u64) -> Result<RepStats, SolveError> {
    let n = mech.n();
    let (v1, v2) = draw_values(mech.profile(), n, seed, rep);
    let traj = run_auction(mech, &v1, &v2)?;
    Ok(RepStats {
        revenue: traj.revenue,
        u1: traj.utilities1.iter().sum::<f64>() / n as f64,
        u2: traj.utilities2.iter().sum::<f64>() / n as f64,
        share1: traj.share1,
        share2: traj.share2,
        winners: traj.winners.iter().map(|w| w.map(|(g, _)| g)).collect(),
    })
}

fn in_pool<T: Send>(
    threads: Option<usize>,
    work: impl FnOnce() -> Result<T, SolveError> + Send,
) -> Result<T, SolveError> {
    match threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| SolveError::Numerical(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}

/// Runs `replications` truthful plays in parallel and aggregates them with
/// pairwise summation in replication order, so the summary is bit-identical
/// for a given seed regardless of thread count.
pub fn monte_carlo(
    mech: &Mechanism,
    replications: usize,
    seed: u64,
    threads: Option<usize>,
) -> Result<MonteCarloSummary, SolveError> {
    assert!(replications > 0, "need at least one replication");
    let stats: Vec<RepStats> = in_pool(threads, || {
        (0..replications as u64)
            .into_par_iter()
            .map(|rep| run_rep(mech, seed, rep))
            .collect()
    })?;

    let horizon = mech.horizon();
    let column = |f: &dyn Fn(&RepStats) -> f64| -> Vec<f64> { stats.iter().map(f).collect() };
    let (revenue_mean, revenue_se) = numeric::mean_and_se(&column(&|s| s.revenue));
    let (utility1_mean, utility1_se) = numeric::mean_and_se(&column(&|s| s.u1));
    let (utility2_mean, utility2_se) = numeric::mean_and_se(&column(&|s| s.u2));
    let (share1_mean, share1_se) = numeric::mean_and_se(&column(&|s| s.share1));
    let (share2_mean, share2_se) = numeric::mean_and_se(&column(&|s| s.share2));
    let mut round_wins1 = Vec::with_capacity(horizon);
    let mut round_wins2 = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let w1: Vec<f64> = stats
            .iter()
            .map(|s| (s.winners[t] == Some(Group::One)) as u8 as f64)
            .collect();
        let w2: Vec<f64> = stats
            .iter()
            .map(|s| (s.winners[t] == Some(Group::Two)) as u8 as f64)
            .collect();
        round_wins1.push(numeric::pairwise_sum(&w1) / replications as f64);
        round_wins2.push(numeric::pairwise_sum(&w2) / replications as f64);
    }
    Ok(MonteCarloSummary {
        replications,
        revenue_mean,
        revenue_se,
        utility1_mean,
        utility1_se,
        utility2_mean,
        utility2_se,
        share1_mean,
        share1_se,
        share2_mean,
        share2_se,
        round_wins1,
        round_wins2,
    })
}

// ---------------------------------------------------------------------------
// Incentive verification
// ---------------------------------------------------------------------------

/// Payment-rule tampering used as negative controls for the verifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tweak {
    None,
    /// Drop the participation reward paid to the winning group.
    ZeroReward,
    /// Charge the entry fee twice.
    DoubleEntryFee,
}

/// Worst deviation found by the truthfulness check.
#[derive(Debug, Clone)]
pub struct EpicReport {
    /// Largest expected gain from misreporting, over all states, groups, and
    /// grid values (nonnegative by construction).
    pub max_gain: f64,
    pub worst_round: usize,
    pub worst_group: Group,
    pub worst_value: f64,
}

/// Worst participation margin found by the individual-rationality check.
#[derive(Debug, Clone)]
pub struct IrReport {
    /// Most negative on-path-minus-skip margin (positive = all good).
    pub min_margin: f64,
    /// `max(0, -min_margin)`.
    pub max_violation: f64,
    pub worst_round: usize,
    pub worst_group: Group,
    pub worst_value: f64,
}

/// One opponent-configuration cell: probability mass, the deviator's winning
/// threshold bid, and whether their group wins even without them.
struct Cell {
    mass: f64,
    tstar: f64,
    group_wins_anyway: bool,
}

/// Per-(state, group) transfer constants entering the deviator's utility, in
/// utility sign convention (`reward_u` is received, `fee_u` is paid).
struct RoundContext {
    cells: Vec<Cell>,
    reward_u: f64,
    fee_u: f64,
    /// `rho * nu_i(child when own group wins)` and mirror; zero at round T.
    cont_own: f64,
    cont_other: f64,
}

fn quantile_of_max(d: &ValueDistribution, k: u32, mass: f64) -> f64 {
    // CDF of the max of k draws is F^k, so its quantile is F^{-1}(m^{1/k}).
    d.quantile(mass.powf(1.0 / k as f64))
}

/// Builds the deviation geometry for one buyer of `group` at `state`.
///
/// Opponent values are discretized into `cells`-many equal-mass cells per
/// dimension (teammate best of `n-1` draws when `n > 1`, rival best of `n`
/// draws); the deviator wins the item iff their bid reaches `tstar`, the
/// larger of the teammate best and the cross-group threshold bid.
fn round_context(
    sol: &DynamicSolution,
    state: &ResidualState,
    group: Group,
    cells: usize,
    tweak: Tweak,
) -> Result<RoundContext, SolveError> {
    let n = sol.n();
    let (d1, d2) = sol.profile().round(state.t);
    let (d_own, d_oth) = match group {
        Group::One => (d1, d2),
        Group::Two => (d2, d1),
    };
    let mech = sol
        .round_mechanism(state)
        .ok_or_else(|| SolveError::Numerical("verification reached an unexplored state".into()))?;
    let terminal = state.t == sol.horizon();
    let rho = if terminal {
        0.0
    } else {
        sol.schedule().ratio_after(state.t)
    };

    // Continuations and transfer constants per regime.
    let (rule, mut reward_u, mut fee_u, cont_own, cont_other, forced): (
        AffineRule,
        f64,
        f64,
        f64,
        f64,
        Option<Group>,
    ) = match mech {
        RoundMechanism::Infeasible => {
            return Err(SolveError::Numerical(
                "verification reached an infeasible state".into(),
            ))
        }
        RoundMechanism::LastRound { rule } => (rule, 0.0, 0.0, 0.0, 0.0, None),
        RoundMechanism::Forced { group: fg } => {
            let child = sol.advance(state, Some(fg));
            let iv = sol
                .interim(&child)
                .ok_or_else(|| SolveError::Numerical("missing forced child".into()))?;
            let nu = match group {
                Group::One => iv.nu1,
                Group::Two => iv.nu2,
            };
            // Whoever wins within the forced group, the continuation is the
            // same child; encode it on both branches.
            (
                AffineRule::threshold(0.0),
                0.0,
                0.0,
                rho * nu,
                rho * nu,
                Some(fg),
            )
        }
        RoundMechanism::Boundary {
            theta,
            deltas,
            zeta1,
            zeta2,
        } => {
            let child1 = sol.advance(state, Some(Group::One));
            let child2 = sol.advance(state, Some(Group::Two));
            let iv1 = sol
                .interim(&child1)
                .ok_or_else(|| SolveError::Numerical("missing child state".into()))?;
            let iv2 = sol
                .interim(&child2)
                .ok_or_else(|| SolveError::Numerical("missing child state".into()))?;
            let (d, zeta, nu_own_child, nu_oth_child) = match group {
                Group::One => (deltas.d1, zeta1, iv1.nu1, iv2.nu1),
                Group::Two => (deltas.d2, zeta2, iv2.nu2, iv1.nu2),
            };
            (
                AffineRule::threshold(theta),
                rho * d,
                rho * d * zeta,
                rho * nu_own_child,
                rho * nu_oth_child,
                None,
            )
        }
    };

    match tweak {
        Tweak::None => {}
        Tweak::ZeroReward => reward_u = 0.0,
        Tweak::DoubleEntryFee => fee_u *= 2.0,
    }

    // Opponent cells.
    let mut out = Vec::new();
    let teammate_reps: Vec<Option<f64>> = if n == 1 {
        vec![None]
    } else {
        (0..cells)
            .map(|a| {
                Some(quantile_of_max(
                    d_own,
                    n - 1,
                    (a as f64 + 0.5) / cells as f64,
                ))
            })
            .collect()
    };
    match forced {
        Some(fg) if fg != group => {
            // The deviator's group cannot win a round forced to the rival
            // group: a single cell with an unreachable threshold.
            out.push(Cell {
                mass: 1.0,
                tstar: f64::INFINITY,
                group_wins_anyway: false,
            });
        }
        Some(_) => {
            // Forced to the deviator's group: a within-group second-price
            // round, so the threshold is the teammate best (support low end
            // for a lone buyer).
            for m in &teammate_reps {
                let m = m.unwrap_or(d_own.lo());
                out.push(Cell {
                    mass: 1.0 / teammate_reps.len() as f64,
                    tstar: m,
                    group_wins_anyway: true,
                });
            }
        }
        None => {
            let rival_reps: Vec<f64> = (0..cells)
                .map(|b| quantile_of_max(d_oth, n, (b as f64 + 0.5) / cells as f64))
                .collect();
            let pair_mass = 1.0 / (teammate_reps.len() * rival_reps.len()) as f64;
            for w in &rival_reps {
                // Value the deviator must reach to beat the rival side (the
                // boundary shift and any reserve are folded into the rule).
                let bb = winning_threshold(&rule, d1, d2, group, None, *w);
                for m in &teammate_reps {
                    match m {
                        None => out.push(Cell {
                            mass: pair_mass,
                            tstar: bb,
                            group_wins_anyway: false,
                        }),
                        Some(m) => out.push(Cell {
                            mass: pair_mass,
                            tstar: bb.max(*m),
                            group_wins_anyway: *m >= bb,
                        }),
                    }
                }
            }
        }
    }

    Ok(RoundContext {
        cells: out,
        reward_u,
        fee_u,
        cont_own,
        cont_other,
    })
}

/// Win-set prefix sums: for each candidate bid, the mass, mass-weighted
/// threshold, and no-free-win mass of the cells the bid clears.
struct WinSums {
    mass: Vec<f64>,
    mass_tstar: Vec<f64>,
    mass_flip: Vec<f64>,
}

impl WinSums {
    fn build(ctx: &RoundContext, bids: &[f64]) -> WinSums {
        let mut order: Vec<usize> = (0..ctx.cells.len()).collect();
        order.sort_by(|&a, &b| ctx.cells[a].tstar.total_cmp(&ctx.cells[b].tstar));
        let mut sorted_bids: Vec<(f64, usize)> = bids
            .iter()
            .copied()
            .enumerate()
            .map(|(i, b)| (b, i))
            .collect();
        sorted_bids.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut acc_mass = 0.0;
        let mut acc_mt = 0.0;
        let mut acc_flip = 0.0;
        let mut k = 0;
        let mut per_bid = vec![(0.0, 0.0, 0.0); bids.len()];
        for (b, i) in sorted_bids {
            while k < order.len() && ctx.cells[order[k]].tstar <= b {
                let c = &ctx.cells[order[k]];
                acc_mass += c.mass;
                acc_mt += c.mass * c.tstar;
                if !c.group_wins_anyway {
                    acc_flip += c.mass;
                }
                k += 1;
            }
            per_bid[i] = (acc_mass, acc_mt, acc_flip);
        }
        let mut sums = WinSums {
            mass: Vec::with_capacity(bids.len()),
            mass_tstar: Vec::with_capacity(bids.len()),
            mass_flip: Vec::with_capacity(bids.len()),
        };
        for (m, mt, fl) in per_bid {
            sums.mass.push(m);
            sums.mass_tstar.push(mt);
            sums.mass_flip.push(fl);
        }
        sums
    }

    /// Expected bid-dependent utility part when bidding `bids[i]` with value
    /// `v`: sum over cleared cells of `(v - tstar) + flip * extra`.
    fn win_term(&self, i: usize, v: f64, extra: f64) -> f64 {
        v * self.mass[i] - self.mass_tstar[i] + extra * self.mass_flip[i]
    }
}

fn grid_points(d: &ValueDistribution, len: usize) -> Vec<f64> {
    (0..len)
        .map(|k| d.lo() + (d.hi() - d.lo()) * k as f64 / (len - 1) as f64)
        .collect()
}

/// All states reachable under play from the root (interior rounds always
/// allocate, so children per state are the two winner labels).
fn on_path_states(sol: &DynamicSolution) -> Vec<ResidualState> {
    let mut frontier = vec![sol.root().clone()];
    let mut all = Vec::new();
    for _ in 1..sol.horizon() {
        let mut next = Vec::with_capacity(frontier.len() * 2);
        for s in &frontier {
            next.push(sol.advance(s, Some(Group::One)));
            next.push(sol.advance(s, Some(Group::Two)));
        }
        all.append(&mut frontier);
        frontier = next;
    }
    all.append(&mut frontier);
    all
}

const VERIFY_MAX_HORIZON: usize = 12;

fn verify_states(sol: &DynamicSolution) -> Result<Vec<ResidualState>, SolveError> {
    if sol.horizon() > VERIFY_MAX_HORIZON {
        return Err(SolveError::Numerical(format!(
            "brute-force verification enumerates all winner histories; horizon {} exceeds {}",
            sol.horizon(),
            VERIFY_MAX_HORIZON
        )));
    }
    Ok(on_path_states(sol))
}

/// Brute-force truthfulness check: on `values`-point own-value and deviation
/// grids, with opponents discretized into `cells` equal-mass cells per
/// dimension, truthful bidding must maximize current-round utility plus the
/// discounted child continuation. Returns the largest expected deviation
/// gain found.
pub fn verify_epic(
    sol: &DynamicSolution,
    values: usize,
    cells: usize,
    tweak: Tweak,
) -> Result<EpicReport, SolveError> {
    assert!(values >= 2 && cells >= 2);
    let mut report = EpicReport {
        max_gain: 0.0,
        worst_round: 0,
        worst_group: Group::One,
        worst_value: f64::NAN,
    };
    for state in verify_states(sol)? {
        let (d1, d2) = sol.profile().round(state.t);
        for group in [Group::One, Group::Two] {
            let d_own = match group {
                Group::One => d1,
                Group::Two => d2,
            };
            let ctx = round_context(sol, &state, group, cells, tweak)?;
            // Winning flips utility by (v - tstar) plus, when the win also
            // flips the group outcome, the reward and continuation swing.
            let extra = ctx.reward_u + ctx.cont_own - ctx.cont_other;
            let grid = grid_points(d_own, values);
            let sums = WinSums::build(&ctx, &grid);
            for (vi, &v) in grid.iter().enumerate() {
                let truthful = sums.win_term(vi, v, extra);
                let best = (0..grid.len())
                    .map(|bi| sums.win_term(bi, v, extra))
                    .fold(f64::NEG_INFINITY, f64::max);
                let gain = best - truthful;
                if gain > report.max_gain {
                    report.max_gain = gain;
                    report.worst_round = state.t;
                    report.worst_group = group;
                    report.worst_value = v;
                }
            }
        }
    }
    Ok(report)
}

/// Brute-force participation check: for every on-path state, group, and own
/// value, the expected utility of truthful participation must cover the
/// outside option of skipping the round and collecting the continuation of
/// the state the round produces without the buyer. (A lone skipped buyer's
/// group cannot win the round; skipped buyers pay and receive nothing.)
pub fn verify_ir(
    sol: &DynamicSolution,
    values: usize,
    cells: usize,
    tweak: Tweak,
) -> Result<IrReport, SolveError> {
    assert!(values >= 2 && cells >= 2);
    let mut report = IrReport {
        min_margin: f64::INFINITY,
        max_violation: 0.0,
        worst_round: 0,
        worst_group: Group::One,
        worst_value: f64::NAN,
    };
    for state in verify_states(sol)? {
        let (d1, d2) = sol.profile().round(state.t);
        for group in [Group::One, Group::Two] {
            let d_own = match group {
                Group::One => d1,
                Group::Two => d2,
            };
            let ctx = round_context(sol, &state, group, cells, tweak)?;
            let extra = ctx.reward_u + ctx.cont_own - ctx.cont_other;
            // Mass with which the group wins without the deviator's bid.
            let p_group: f64 = ctx
                .cells
                .iter()
                .filter(|c| c.group_wins_anyway)
                .map(|c| c.mass)
                .sum();
            let on_const = -ctx.fee_u
                + ctx.cont_other
                + p_group * (ctx.reward_u + ctx.cont_own - ctx.cont_other);
            let skip = p_group * ctx.cont_own + (1.0 - p_group) * ctx.cont_other;
            let grid = grid_points(d_own, values);
            let sums = WinSums::build(&ctx, &grid);
            for (vi, &v) in grid.iter().enumerate() {
                let margin = on_const + sums.win_term(vi, v, extra) - skip;
                if margin < report.min_margin {
                    report.min_margin = margin;
                    report.worst_round = state.t;
                    report.worst_group = group;
                    report.worst_value = v;
                }
            }
        }
    }
    report.max_violation = (-report.min_margin).max(0.0);
    Ok(report)
}

// ---------------------------------------------------------------------------
// Paired experiment over a grid of fairness levels
// ---------------------------------------------------------------------------

/// One grid cell of the paired experiment: mean differences (fair minus
/// unconstrained baseline) with standard errors, under common random values.
#[derive(Debug, Clone)]
pub struct ExperimentCell {
    pub alpha1: f64,
    pub alpha2: f64,
    pub feasible: bool,
    pub d_seller: f64,
    pub d_group1: f64,
    pub d_group2: f64,
    pub se_seller: f64,
    pub se_group1: f64,
    pub se_group2: f64,
}

/// Runs the paired experiment: every level pair is solved exactly, played on
/// the same value draws as the unconstrained baseline (common random
/// numbers), and summarized as paired differences of seller revenue and
/// per-buyer group utilities. Infeasible cells are flagged with NaN stats.
pub fn experiment_grid(
    profile: &GroupProfile,
    delta: f64,
    levels: &[(f64, f64)],
    replications: usize,
    seed: u64,
    threads: Option<usize>,
) -> Result<Vec<ExperimentCell>, SolveError> {
    use crate::dynamic_solver::{solve_dynamic, DiscountSchedule, TerminalPolicy};
    assert!(replications > 0, "need at least one replication");
    let schedule = DiscountSchedule::constant(delta, profile.horizon())?;
    let baseline = solve_dynamic(profile, &schedule, 0.0, 0.0, TerminalPolicy::Reserve)?;
    let base_mech = Mechanism::Exact(&baseline);
    let base_stats: Vec<(f64, f64, f64)> = in_pool(threads, || {
        (0..replications as u64)
            .into_par_iter()
            .map(|rep| run_rep(&base_mech, seed, rep).map(|s| (s.revenue, s.u1, s.u2)))
            .collect()
    })?;

    let mut out = Vec::with_capacity(levels.len());
    for &(alpha1, alpha2) in levels {
        let sol = match solve_dynamic(profile, &schedule, alpha1, alpha2, TerminalPolicy::Reserve) {
            Ok(sol) => sol,
            Err(SolveError::Infeasible { .. }) => {
                out.push(ExperimentCell {
                    alpha1,
                    alpha2,
                    feasible: false,
                    d_seller: f64::NAN,
                    d_group1: f64::NAN,
                    d_group2: f64::NAN,
                    se_seller: f64::NAN,
                    se_group1: f64::NAN,
                    se_group2: f64::NAN,
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let mech = Mechanism::Exact(&sol);
        let cell_stats: Vec<(f64, f64, f64)> = in_pool(threads, || {
            (0..replications as u64)
                .into_par_iter()
                .map(|rep| run_rep(&mech, seed, rep).map(|s| (s.revenue, s.u1, s.u2)))
                .collect()
        })?;
        let diff = |f: &dyn Fn(&(f64, f64, f64)) -> f64| -> Vec<f64> {
            cell_stats
                .iter()
                .zip(&base_stats)
                .map(|(c, b)| f(c) - f(b))
                .collect()
        };
        let (d_seller, se_seller) = numeric::mean_and_se(&diff(&|s| s.0));
        let (d_group1, se_group1) = numeric::mean_and_se(&diff(&|s| s.1));
        let (d_group2, se_group2) = numeric::mean_and_se(&diff(&|s| s.2));
        out.push(ExperimentCell {
            alpha1,
            alpha2,
            feasible: true,
            d_seller,
            d_group1,
            d_group2,
            se_seller,
            se_group1,
            se_group2,
        });
    }
    Ok(out)
}
