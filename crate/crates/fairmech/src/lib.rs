//! Revenue-optimal repeated single-item auctions with group-fairness floors.
//!
//! Two groups of buyers bid for one item per round over a finite horizon. The
//! seller maximizes discounted virtual surplus subject to a minimum discounted
//! share of rounds won per group. This crate provides:
//!
//! * [`dist`] — validated regular value distributions and group profiles;
//! * [`static_solver`] — the single-round optimal rule and its solver;
//! * [`dynamic_solver`] — backward induction over residual obligations;
//! * [`approx`] — early-stopping and bucketed approximation plans;
//! * [`sim`] — trajectory simulation, Monte Carlo, and incentive checks;
//! * [`config`] / [`report`] — TOML run configuration and CSV reporting.

pub mod approx;
pub mod config;
pub mod dist;
pub mod dynamic_solver;
pub mod numeric;
pub mod report;
pub mod sim;
pub mod static_solver;

pub use approx::{
    execute_plan, plan_bucketed, plan_early_stop, ApproxPlan, PlanExecution, PlanRound, Scheme,
};
pub use config::{ConfigError, RunConfig};
pub use dist::{max_order_cdf, DistError, GroupProfile, ValueDistribution};
pub use dynamic_solver::{
    residual_init, residual_update, solve_dynamic, BuyerCharge, DeltaTriple, DiscountSchedule,
    DynamicSolution, InterimValues, PaymentBreakdown, ResidualState, RoundMechanism,
    TerminalPolicy,
};
pub use report::RunManifest;
pub use sim::{
    experiment_grid, monte_carlo, run_auction, verify_epic, verify_ir, EpicReport, ExperimentCell,
    IrReport, Mechanism, MonteCarloSummary, Trajectory, Tweak,
};
pub use static_solver::{
    allocate_static, region_probability, solve_static, static_interim, static_payment, AffineRule,
    Group, SolveError, StaticRoundOutcome, StaticSolution,
};
