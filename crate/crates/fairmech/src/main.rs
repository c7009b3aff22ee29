//! Command-line front end: loads a TOML configuration, dispatches to the
//! solver/simulation library, prints a human summary, and persists every
//! result as a CSV file with a reproducibility manifest header.
//!
//! Exit codes: 0 success, 2 configuration error, 3 infeasible fairness
//! levels, 4 numerical failure.

use std::collections::HashSet;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fairmech::config::{ConfigError, RunConfig};
use fairmech::report::{write_csv, RunManifest};
use fairmech::sim::{self, Mechanism, Tweak};
use fairmech::{
    execute_plan, plan_bucketed, plan_early_stop, solve_dynamic, solve_static, DiscountSchedule,
    DynamicSolution, ResidualState, RoundMechanism, Scheme, SolveError, TerminalPolicy,
};

#[derive(Parser)]
#[command(
    name = "fairmech",
    version,
    about = "Revenue-optimal repeated auctions with group-fairness floors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the one-round optimal fair auction and report its rule.
    SolveStatic(CommonArgs),
    /// Solve the dynamic mechanism and report per-state interim values.
    SolveDynamic(CommonArgs),
    /// Monte Carlo simulation of truthful play of the exact mechanism.
    Simulate(CommonArgs),
    /// Build, execute, and simulate an approximation plan.
    Approx(ApproxArgs),
    /// Brute-force truthfulness (EPIC) and participation (IR) checks.
    Verify(VerifyArgs),
    /// Utility differences against the unconstrained baseline over a grid
    /// of fairness levels.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Directory for CSV output (created if missing).
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Override the configured RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured replication count.
    #[arg(long)]
    replications: Option<usize>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum SchemeArg {
    Exact,
    EarlyStop,
    Bucketed,
}

#[derive(Args)]
struct ApproxArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Approximation scheme.
    #[arg(long, value_enum, default_value_t = SchemeArg::EarlyStop)]
    scheme: SchemeArg,
    /// Early-stopping slack (ignored for the exact scheme).
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    /// Bucket mass parameter; required by the bucketed scheme.
    #[arg(long)]
    beta: Option<f64>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Grid points for own values and candidate deviation bids.
    #[arg(long, default_value_t = 50)]
    grid: usize,
    /// Equal-mass opponent discretization cells per dimension.
    #[arg(long, default_value_t = 51)]
    cells: usize,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Largest fairness level on each grid axis.
    #[arg(long, default_value_t = 0.4)]
    grid_max: f64,
    /// Grid increment on each axis.
    #[arg(long, default_value_t = 0.1)]
    grid_step: f64,
}

#[derive(Debug)]
enum CliError {
    Config(ConfigError),
    Solve(SolveError),
    Io(std::io::Error),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        CliError::Solve(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Solve(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solve(SolveError::Infeasible { .. }) => 3,
            CliError::Solve(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::SolveStatic(args) => cmd_solve_static(&Ctx::load(args, "solve-static")?),
        Command::SolveDynamic(args) => cmd_solve_dynamic(&Ctx::load(args, "solve-dynamic")?),
        Command::Simulate(args) => cmd_simulate(&Ctx::load(args, "simulate")?),
        Command::Approx(args) => {
            let ctx = Ctx::load(args.common, "approx")?;
            cmd_approx(&ctx, args.scheme, args.epsilon, args.beta)
        }
        Command::Verify(args) => {
            let ctx = Ctx::load(args.common, "verify")?;
            cmd_verify(&ctx, args.grid, args.cells)
        }
        Command::Experiment(args) => {
            let ctx = Ctx::load(args.common, "experiment")?;
            cmd_experiment(&ctx, args.grid_max, args.grid_step)
        }
    }
}

/// Shared per-command context: the merged configuration plus output plumbing.
struct Ctx {
    cfg: RunConfig,
    config_text: String,
    out: PathBuf,
    command: &'static str,
    started: Instant,
}

impl Ctx {
    fn load(args: CommonArgs, command: &'static str) -> Result<Ctx, CliError> {
        let config_text = std::fs::read_to_string(&args.config).map_err(ConfigError::Io)?;
        let mut cfg = RunConfig::from_toml_str(&config_text)?;
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        if let Some(reps) = args.replications {
            if reps == 0 {
                return Err(ConfigError::Invalid("replications must be positive".into()).into());
            }
            cfg.replications = reps;
        }
        std::fs::create_dir_all(&args.out)?;
        Ok(Ctx {
            cfg,
            config_text,
            out: args.out,
            command,
            started: Instant::now(),
        })
    }

    fn manifest(&self, oracle_calls: Option<u64>) -> RunManifest {
        let mut m = RunManifest::new(self.command, &self.config_text, self.cfg.seed);
        m.wall_ms = self.started.elapsed().as_millis();
        m.oracle_calls = oracle_calls;
        m
    }

    fn write(
        &self,
        file: &str,
        oracle_calls: Option<u64>,
        columns: &[&str],
        rows: &[Vec<String>],
    ) -> Result<(), CliError> {
        let path = self.out.join(file);
        write_csv(&path, &self.manifest(oracle_calls), columns, rows)?;
        println!("wrote {}", path.display());
        Ok(())
    }

    fn solve_exact(&self) -> Result<DynamicSolution, CliError> {
        let schedule = DiscountSchedule::constant(self.cfg.delta, self.cfg.profile.horizon())?;
        Ok(solve_dynamic(
            &self.cfg.profile,
            &schedule,
            self.cfg.alpha1,
            self.cfg.alpha2,
            TerminalPolicy::Reserve,
        )?)
    }
}

/// Worker-thread cap from the FAIRMECH_THREADS environment variable.
fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var("FAIRMECH_THREADS") {
        Err(_) => Ok(None),
        Ok(raw) => {
            let parsed: usize = raw.trim().parse().map_err(|_| {
                ConfigError::Invalid(format!(
                    "FAIRMECH_THREADS must be a positive integer, got {raw:?}"
                ))
            })?;
            if parsed == 0 {
                return Err(
                    ConfigError::Invalid("FAIRMECH_THREADS must be positive".into()).into(),
                );
            }
            Ok(Some(parsed))
        }
    }
}

fn s(v: f64) -> String {
    format!("{v}")
}

fn cmd_solve_static(ctx: &Ctx) -> Result<(), CliError> {
    let (d1, d2) = ctx.cfg.profile.round(1);
    let sol = solve_static(
        d1,
        d2,
        ctx.cfg.profile.n(),
        ctx.cfg.alpha1,
        ctx.cfg.alpha2,
        false,
    )?;
    println!(
        "rule: gamma = {:.6}, eta1 = {:.6}, eta2 = {:.6}",
        sol.rule.gamma, sol.rule.eta1, sol.rule.eta2
    );
    println!(
        "allocation probabilities: group1 = {:.6}, group2 = {:.6}",
        sol.prob_g1, sol.prob_g2
    );
    println!(
        "expected utilities: seller = {:.6}, buyer1 = {:.6}, buyer2 = {:.6}",
        sol.seller_utility, sol.buyer_utility_1, sol.buyer_utility_2
    );
    ctx.write(
        "static_solution.csv",
        None,
        &[
            "gamma",
            "eta1",
            "eta2",
            "prob_g1",
            "prob_g2",
            "seller_utility",
            "buyer_utility_1",
            "buyer_utility_2",
        ],
        &[vec![
            s(sol.rule.gamma),
            s(sol.rule.eta1),
            s(sol.rule.eta2),
            s(sol.prob_g1),
            s(sol.prob_g2),
            s(sol.seller_utility),
            s(sol.buyer_utility_1),
            s(sol.buyer_utility_2),
        ]],
    )
}

fn regime_row(sol: &DynamicSolution, state: &ResidualState) -> (String, f64) {
    match sol.round_mechanism(state) {
        None | Some(RoundMechanism::Infeasible) => ("infeasible".to_string(), f64::NAN),
        Some(RoundMechanism::Forced { group }) => (format!("forced_{group}"), f64::NAN),
        Some(RoundMechanism::Boundary { theta, .. }) => ("boundary".to_string(), theta),
        Some(RoundMechanism::LastRound { .. }) => ("last_round".to_string(), f64::NAN),
    }
}

/// On-path states deduplicated by (round, residual bits), breadth-first.
fn reachable_states(sol: &DynamicSolution, max_rows: usize) -> (Vec<ResidualState>, bool) {
    let mut out = Vec::new();
    let mut frontier = vec![sol.root().clone()];
    let mut seen: HashSet<(usize, u64, u64)> = HashSet::new();
    seen.insert((1, sol.root().r1.to_bits(), sol.root().r2.to_bits()));
    for _ in 1..=sol.horizon() {
        let mut next = Vec::new();
        for state in frontier {
            if out.len() >= max_rows {
                return (out, true);
            }
            let feasible = sol.feasible(&state);
            if feasible && state.t < sol.horizon() {
                for winner in [fairmech::Group::One, fairmech::Group::Two] {
                    let child = sol.advance(&state, Some(winner));
                    if seen.insert((child.t, child.r1.to_bits(), child.r2.to_bits())) {
                        next.push(child);
                    }
                }
            }
            out.push(state);
        }
        frontier = next;
    }
    (out, false)
}

fn cmd_solve_dynamic(ctx: &Ctx) -> Result<(), CliError> {
    let sol = ctx.solve_exact()?;
    let root = sol.interim(sol.root()).expect("root is solved");
    println!(
        "horizon {} rounds, {} buyers per group, levels = ({}, {})",
        sol.horizon(),
        sol.n(),
        ctx.cfg.alpha1,
        ctx.cfg.alpha2
    );
    println!(
        "memoized states: {}, oracle calls: {}",
        sol.states(),
        sol.oracle_calls()
    );
    println!(
        "root interim values: seller = {:.6}, buyer1 = {:.6}, buyer2 = {:.6}",
        root.mu, root.nu1, root.nu2
    );
    match sol.round_mechanism(sol.root()) {
        Some(RoundMechanism::Boundary {
            theta,
            deltas,
            zeta1,
            zeta2,
        }) => {
            println!(
                "round-1 mechanism: boundary shift theta = {theta:.6} \
                 (continuation gaps {:.6}/{:.6}, entry factors {zeta1:.6}/{zeta2:.6})",
                deltas.d1, deltas.d2
            );
        }
        Some(RoundMechanism::Forced { group }) => {
            println!("round-1 mechanism: forced within-{group} second-price round");
        }
        Some(RoundMechanism::LastRound { rule }) => {
            println!(
                "round-1 mechanism: single-round rule gamma = {:.6}, eta1 = {:.6}, eta2 = {:.6}",
                rule.gamma, rule.eta1, rule.eta2
            );
        }
        Some(RoundMechanism::Infeasible) | None => unreachable!("root solve succeeded"),
    }

    let (states, truncated) = reachable_states(&sol, 4096);
    if truncated {
        println!("state table truncated to 4096 rows");
    }
    let rows: Vec<Vec<String>> = states
        .iter()
        .map(|state| {
            let (regime, theta) = regime_row(&sol, state);
            let iv = sol.interim(state);
            vec![
                state.t.to_string(),
                s(state.r1),
                s(state.r2),
                iv.map(|v| v.feasible).unwrap_or(false).to_string(),
                regime,
                s(theta),
                s(iv.map(|v| v.mu).unwrap_or(f64::NAN)),
                s(iv.map(|v| v.nu1).unwrap_or(f64::NAN)),
                s(iv.map(|v| v.nu2).unwrap_or(f64::NAN)),
            ]
        })
        .collect();
    ctx.write(
        "dynamic_interim.csv",
        Some(sol.oracle_calls()),
        &[
            "round", "r1", "r2", "feasible", "regime", "theta", "mu", "nu1", "nu2",
        ],
        &rows,
    )
}

fn summary_columns() -> Vec<&'static str> {
    vec![
        "replications",
        "revenue_mean",
        "revenue_se",
        "utility1_mean",
        "utility1_se",
        "utility2_mean",
        "utility2_se",
        "share1_mean",
        "share1_se",
        "share2_mean",
        "share2_se",
        "margin1",
        "margin2",
    ]
}

fn summary_row(summary: &sim::MonteCarloSummary, floor1: f64, floor2: f64) -> Vec<String> {
    vec![
        summary.replications.to_string(),
        s(summary.revenue_mean),
        s(summary.revenue_se),
        s(summary.utility1_mean),
        s(summary.utility1_se),
        s(summary.utility2_mean),
        s(summary.utility2_se),
        s(summary.share1_mean),
        s(summary.share1_se),
        s(summary.share2_mean),
        s(summary.share2_se),
        s(summary.share1_mean - floor1),
        s(summary.share2_mean - floor2),
    ]
}

fn print_summary(summary: &sim::MonteCarloSummary, floor1: f64, floor2: f64) {
    println!(
        "revenue = {:.6} +- {:.6}",
        summary.revenue_mean, summary.revenue_se
    );
    println!(
        "per-buyer utilities: group1 = {:.6} +- {:.6}, group2 = {:.6} +- {:.6}",
        summary.utility1_mean, summary.utility1_se, summary.utility2_mean, summary.utility2_se
    );
    println!(
        "discounted win shares: group1 = {:.6} +- {:.6}, group2 = {:.6} +- {:.6}",
        summary.share1_mean, summary.share1_se, summary.share2_mean, summary.share2_se
    );
    println!(
        "share margins above floors ({:.4}, {:.4}): {:+.6}, {:+.6}",
        floor1,
        floor2,
        summary.share1_mean - floor1,
        summary.share2_mean - floor2
    );
    let wins1: Vec<String> = summary
        .round_wins1
        .iter()
        .map(|w| format!("{w:.4}"))
        .collect();
    let wins2: Vec<String> = summary
        .round_wins2
        .iter()
        .map(|w| format!("{w:.4}"))
        .collect();
    println!("per-round win rates: group1 [{}]", wins1.join(", "));
    println!("per-round win rates: group2 [{}]", wins2.join(", "));
}

fn cmd_simulate(ctx: &Ctx) -> Result<(), CliError> {
    let threads = threads_from_env()?;
    let sol = ctx.solve_exact()?;
    let summary = sim::monte_carlo(
        &Mechanism::Exact(&sol),
        ctx.cfg.replications,
        ctx.cfg.seed,
        threads,
    )?;
    print_summary(&summary, ctx.cfg.alpha1, ctx.cfg.alpha2);
    ctx.write(
        "simulate_summary.csv",
        Some(sol.oracle_calls()),
        &summary_columns(),
        &[summary_row(&summary, ctx.cfg.alpha1, ctx.cfg.alpha2)],
    )
}

fn cmd_approx(
    ctx: &Ctx,
    scheme: SchemeArg,
    epsilon: f64,
    beta: Option<f64>,
) -> Result<(), CliError> {
    let threads = threads_from_env()?;
    let cfg = &ctx.cfg;
    let horizon = cfg.profile.horizon();
    let plan = match scheme {
        SchemeArg::Exact => {
            let mut plan = plan_early_stop(horizon, cfg.delta, cfg.alpha1, cfg.alpha2, 0.0)?;
            plan.scheme = Scheme::Exact;
            plan
        }
        SchemeArg::EarlyStop => {
            plan_early_stop(horizon, cfg.delta, cfg.alpha1, cfg.alpha2, epsilon)?
        }
        SchemeArg::Bucketed => {
            let beta = beta.ok_or_else(|| {
                ConfigError::Invalid("--beta is required for the bucketed scheme".into())
            })?;
            plan_bucketed(horizon, cfg.delta, cfg.alpha1, cfg.alpha2, epsilon, beta)?
        }
    };
    let exec = execute_plan(&cfg.profile, &plan)?;
    let summary = sim::monte_carlo(&Mechanism::Plan(&exec), cfg.replications, cfg.seed, threads)?;
    let predicted = exec.predicted();
    println!(
        "{} plan: fair phase through round {} of {}, fair levels ({:.4}, {:.4})",
        plan.scheme, plan.t0, plan.horizon, plan.fair1, plan.fair2
    );
    println!(
        "share guarantees: ({:.6}, {:.6}); oracle calls: {}",
        plan.guarantee1,
        plan.guarantee2,
        exec.oracle_calls()
    );
    println!(
        "predicted interim values: seller = {:.6}, buyer1 = {:.6}, buyer2 = {:.6}",
        predicted.mu, predicted.nu1, predicted.nu2
    );
    print_summary(&summary, plan.guarantee1, plan.guarantee2);
    let mut columns = vec![
        "scheme",
        "t0",
        "bucket_len",
        "fair1",
        "fair2",
        "guarantee1",
        "guarantee2",
        "predicted_mu",
        "oracle_calls",
    ];
    columns.extend(summary_columns());
    let mut row = vec![
        plan.scheme.to_string(),
        plan.t0.to_string(),
        plan.bucket_len.to_string(),
        s(plan.fair1),
        s(plan.fair2),
        s(plan.guarantee1),
        s(plan.guarantee2),
        s(predicted.mu),
        exec.oracle_calls().to_string(),
    ];
    row.extend(summary_row(&summary, plan.guarantee1, plan.guarantee2));
    ctx.write(
        "approx_summary.csv",
        Some(exec.oracle_calls()),
        &columns,
        &[row],
    )
}

fn cmd_verify(ctx: &Ctx, grid: usize, cells: usize) -> Result<(), CliError> {
    if grid < 2 || cells < 2 {
        return Err(ConfigError::Invalid("--grid and --cells must be at least 2".into()).into());
    }
    let sol = ctx.solve_exact()?;
    let epic = sim::verify_epic(&sol, grid, cells, Tweak::None)?;
    let ir = sim::verify_ir(&sol, grid, cells, Tweak::None)?;
    println!(
        "max EPIC violation: {:.3e} (round {}, {}, value {:.4})",
        epic.max_gain, epic.worst_round, epic.worst_group, epic.worst_value
    );
    println!(
        "max IR violation: {:.3e} (round {}, {}, value {:.4}; tightest margin {:.3e})",
        ir.max_violation, ir.worst_round, ir.worst_group, ir.worst_value, ir.min_margin
    );
    ctx.write(
        "verify_report.csv",
        Some(sol.oracle_calls()),
        &[
            "check",
            "max_violation",
            "worst_round",
            "worst_group",
            "worst_value",
        ],
        &[
            vec![
                "epic".to_string(),
                s(epic.max_gain),
                epic.worst_round.to_string(),
                epic.worst_group.to_string(),
                s(epic.worst_value),
            ],
            vec![
                "ir".to_string(),
                s(ir.max_violation),
                ir.worst_round.to_string(),
                ir.worst_group.to_string(),
                s(ir.worst_value),
            ],
        ],
    )
}

fn cmd_experiment(ctx: &Ctx, grid_max: f64, grid_step: f64) -> Result<(), CliError> {
    if !grid_step.is_finite() || grid_step <= 0.0 || !(0.0..=1.0).contains(&grid_max) {
        return Err(ConfigError::Invalid(
            "--grid-step must be positive and --grid-max within [0, 1]".into(),
        )
        .into());
    }
    let threads = threads_from_env()?;
    let mut axis = Vec::new();
    let mut level = 0.0;
    while level <= grid_max + 1e-12 {
        axis.push(level);
        level += grid_step;
    }
    let levels: Vec<(f64, f64)> = axis
        .iter()
        .flat_map(|&a1| axis.iter().map(move |&a2| (a1, a2)))
        .collect();
    let cells = sim::experiment_grid(
        &ctx.cfg.profile,
        ctx.cfg.delta,
        &levels,
        ctx.cfg.replications,
        ctx.cfg.seed,
        threads,
    )?;
    let feasible = cells.iter().filter(|c| c.feasible).count();
    println!(
        "{} grid cells ({} feasible, {} infeasible), {} paired replications each",
        cells.len(),
        feasible,
        cells.len() - feasible,
        ctx.cfg.replications
    );
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            vec![
                s(c.alpha1),
                s(c.alpha2),
                s(c.d_seller),
                s(c.d_group1),
                s(c.d_group2),
                s(c.se_seller),
                s(c.se_group1),
                s(c.se_group2),
                c.feasible.to_string(),
            ]
        })
        .collect();
    ctx.write(
        "experiment_grid.csv",
        None,
        &[
            "alpha1",
            "alpha2",
            "d_seller",
            "d_group1",
            "d_group2",
            "se_seller",
            "se_group1",
            "se_group2",
            "feasible",
        ],
        &rows,
    )
}
