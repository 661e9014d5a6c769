//! Subcommands of the `rtbf` binary.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numeric or infeasibility
//! error (including failures writing outputs), 3 failed `verify-bounds
//! --strict` check.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod output;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::DVector;
use rtbf_core::experiments::{run_comparison, run_pipeline, Mechanism, Outcome};
use rtbf_core::learning::{check_gap_bound, scaffold_train, LearnProblem, StepSchedule};
use rtbf_core::population::{find_stationary_rates, sample_population};
use rtbf_core::{design_contract, seed, verify_ir_ic, Contract, FinalState, Population, RevocationGame};

use crate::config::{Config, ConfigError};
use crate::output::*;

#[derive(Debug, Parser)]
#[command(
    name = "rtbf",
    version,
    about = "Incentive design for federated learning with data revocation"
)]
pub struct Cli {
    /// Configuration file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides `experiment.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Monte Carlo trials; overrides `experiment.trials` (and the sweep trial count).
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, global = true, value_enum, default_value = "csv")]
    pub format: Format,
    /// RAR, NRI or LLA.
    #[arg(long, global = true, default_value = "RAR")]
    pub mechanism: Mechanism,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stage I: design the contract and check IR/IC.
    Contract,
    /// Stage III: revocation equilibrium of one sampled population.
    Equilibrium,
    /// Stage IV: retained revokers and their incentives.
    Retain,
    /// Full pipeline for one mechanism.
    Simulate,
    /// Cost comparison of all mechanisms.
    Compare,
    /// Grid scan for self-consistent historical rates.
    Sweep,
    /// Optimality gap of Scaffold training against the gap bound.
    VerifyBounds {
        /// Exit with code 3 if a check fails.
        #[arg(long)]
        strict: bool,
    },
}

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Numeric(String),
    Check(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 1,
            Failure::Numeric(_) => 2,
            Failure::Check(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Numeric(m) | Failure::Check(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<rtbf_core::Error> for Failure {
    fn from(e: rtbf_core::Error) -> Self {
        Failure::Numeric(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Numeric(format!("cannot write output: {e}"))
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn load(cli: &Cli) -> std::result::Result<Config, Failure> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Failure::Config("missing --config <path>".into()))?;
    let mut cfg = Config::load(path)?;
    if let Some(s) = cli.seed {
        cfg.game.seed = s;
    }
    if let Some(t) = cli.trials {
        if t == 0 {
            return Err(Failure::Config("--trials must be positive".into()));
        }
        cfg.trials = t;
        cfg.sweep_trials = t;
    }
    Ok(cfg)
}

/// Population used by the single-run subcommands: the first trial of the
/// first population size in `compare`.
fn single_population(cfg: &Config) -> std::result::Result<Population, Failure> {
    Ok(sample_population(&cfg.model, seed::derive(cfg.game.seed, &[0, 0]))?)
}

fn contract_rows(cfg: &Config, contract: &Contract) -> Vec<ContractRow> {
    (0..contract.len())
        .map(|pos| ContractRow {
            type_label: cfg.type_labels[contract.type_order[pos]].clone(),
            d: contract.items[pos].d,
            reward: contract.items[pos].reward,
            pi: contract.pi[pos],
            kappa: contract.kappa[pos],
            a: contract.a[pos],
            b: contract.b[pos],
            block_id: contract.block_id[pos],
        })
        .collect()
}

fn equilibrium_rows(cfg: &Config, pop: &Population, revoke: &[bool]) -> Vec<EquilibriumRow> {
    pop.users
        .iter()
        .map(|u| EquilibriumRow {
            user: u.id,
            type_label: cfg.type_labels[u.type_idx].clone(),
            loss: u.loss,
            revoke: u8::from(revoke[u.id]),
        })
        .collect()
}

fn retention_rows(out: &Outcome) -> Vec<RetentionRow> {
    out.revokers
        .iter()
        .map(|&i| {
            let u = &out.users[i];
            let retained = u.state == FinalState::Retained;
            RetentionRow {
                user: u.id,
                shapley: u.shapley,
                retained: u8::from(retained),
                incentive: retained.then_some(u.incentive),
            }
        })
        .collect()
}

fn summary_row(out: &Outcome) -> SummaryRow {
    SummaryRow {
        mechanism: out.mechanism.name().to_string(),
        users: out.users.len(),
        revokers: out.revokers.len(),
        retained: out.retention.retained.len(),
        cost: out.cost.total,
        accuracy: out.cost.accuracy,
        learning_rewards: out.cost.learning_rewards,
        retention_rewards: out.cost.retention_rewards,
        cost_without_retention: out.cost_without_retention.total,
        payoff_mean: out.payoff_mean(),
        negative_incentives: out.retention.negative_incentives.len(),
        equilibria_agree: u8::from(out.equilibria_agree),
    }
}

fn announce(path: &Path) {
    println!("wrote {}", path.display());
}

fn cmd_contract(cli: &Cli, cfg: &Config) -> CmdResult {
    let contract = design_contract(&cfg.types(), &cfg.game, cli.mechanism.scope())?;
    announce(&write_rows(
        &cli.out_dir,
        "contract",
        cli.format,
        &contract_rows(cfg, &contract),
    )?);
    let report = verify_ir_ic(&contract, cfg.game.tol);
    println!(
        "IR violations: {}  IC violations: {}  worst IR slack: {:e}  worst IC slack: {:e}",
        report.ir_violations.len(),
        report.ic_violations.len(),
        report.worst_ir_slack,
        report.worst_ic_slack
    );
    if !report.is_feasible() {
        return Err(Failure::Numeric("contract violates IR/IC constraints".into()));
    }
    Ok(())
}

fn cmd_equilibrium(cli: &Cli, cfg: &Config) -> CmdResult {
    let types = cfg.types();
    let contract = design_contract(&types, &cfg.game, cli.mechanism.scope())?;
    let pop = single_population(cfg)?;
    let game = RevocationGame::new(&pop, &contract, &types, &cfg.game, cli.mechanism.belief(&types));
    let lower = game.lower_equilibrium();
    let upper = game.upper_equilibrium();
    announce(&write_rows(
        &cli.out_dir,
        "equilibrium",
        cli.format,
        &equilibrium_rows(cfg, &pop, &lower.revoke),
    )?);
    println!(
        "revokers: {} of {} after {} sweeps (greatest equilibrium: {})",
        lower.count(),
        pop.len(),
        lower.iterations,
        upper.count()
    );
    Ok(())
}

fn cmd_retain(cli: &Cli, cfg: &Config) -> CmdResult {
    let pop = single_population(cfg)?;
    let out = run_pipeline(cli.mechanism, &cfg.types(), &cfg.game, &pop)?;
    announce(&write_rows(
        &cli.out_dir,
        "retention",
        cli.format,
        &retention_rows(&out),
    )?);
    println!(
        "retained {} of {} revokers ({:?}), objective {:e}, negative incentives: {}",
        out.retention.retained.len(),
        out.revokers.len(),
        out.retention.method,
        out.retention.objective,
        out.retention.negative_incentives.len()
    );
    Ok(())
}

fn cmd_simulate(cli: &Cli, cfg: &Config) -> CmdResult {
    let pop = single_population(cfg)?;
    let out = run_pipeline(cli.mechanism, &cfg.types(), &cfg.game, &pop)?;
    let revoke: Vec<bool> = out.users.iter().map(|u| u.revoked).collect();
    announce(&write_rows(
        &cli.out_dir,
        "contract",
        cli.format,
        &contract_rows(cfg, &out.contract),
    )?);
    announce(&write_rows(
        &cli.out_dir,
        "equilibrium",
        cli.format,
        &equilibrium_rows(cfg, &pop, &revoke),
    )?);
    announce(&write_rows(
        &cli.out_dir,
        "retention",
        cli.format,
        &retention_rows(&out),
    )?);
    let summary = summary_row(&out);
    announce(&write_rows(
        &cli.out_dir,
        "summary",
        cli.format,
        std::slice::from_ref(&summary),
    )?);
    if !out.equilibria_agree {
        eprintln!("note: least and greatest revocation equilibria differ; the least one is used");
    }
    println!(
        "{}: {} users, {} revokers, {} retained, cost {:e}",
        summary.mechanism, summary.users, summary.revokers, summary.retained, summary.cost
    );
    Ok(())
}

fn cmd_compare(cli: &Cli, cfg: &Config) -> CmdResult {
    let cmp = run_comparison(
        &cfg.model,
        &cfg.game,
        &cfg.mechanisms(),
        &cfg.users_per_type,
        cfg.trials,
    )?;
    let rows: Vec<CompareRow> = cmp
        .rows
        .iter()
        .map(|r| CompareRow {
            mechanism: r.mechanism.name().to_string(),
            users: r.users,
            cost_mean: r.cost_mean,
            cost_stderr: r.cost_stderr,
            payoff_mean: r.payoff_mean,
        })
        .collect();
    announce(&write_rows(&cli.out_dir, "compare", cli.format, &rows)?);
    for r in &rows {
        println!(
            "{:>3} I={:<6} cost {:+.6e} ± {:.2e}  payoff {:+.6e}",
            r.mechanism, r.users, r.cost_mean, r.cost_stderr, r.payoff_mean
        );
    }
    Ok(())
}

fn cmd_sweep(cli: &Cli, cfg: &Config) -> CmdResult {
    let res = find_stationary_rates(&cfg.model, &cfg.game, &cfg.grid, cfg.sweep_trials, cfg.refine)?;
    let rows: Vec<SweepRow> = res
        .points
        .iter()
        .map(|p| SweepRow {
            p: p.p,
            q: p.q,
            p_hat: p.p_hat,
            q_hat: p.q_hat,
            cost: p.cost,
        })
        .collect();
    announce(&write_rows(&cli.out_dir, "sweep", cli.format, &rows)?);
    println!(
        "stationary grid point: p = {}, q = {} (mismatch {:e})",
        res.p, res.q, res.mismatch
    );
    if let Some((p, q)) = res.refined {
        println!("damped refinement: p = {p:e}, q = {q}");
    }
    Ok(())
}

fn cmd_verify_bounds(cli: &Cli, cfg: &Config, strict: bool) -> CmdResult {
    let section = cfg
        .learning
        .as_ref()
        .ok_or_else(|| Failure::Config("missing section `learning` (required by verify-bounds)".into()))?;
    let problem = LearnProblem::generate(&section.problem(), &mut seed::rng_for(cfg.game.seed, &[]))?;
    let schedule = section.schedule(problem.max_step());
    let start = if section.start_at_optimum {
        problem.optimum()?
    } else {
        DVector::zeros(problem.dim())
    };
    let trace = scaffold_train(
        &problem,
        &start,
        section.rounds,
        schedule,
        section.seeds,
        seed::derive(cfg.game.seed, &[1]),
    )?;
    let report = check_gap_bound(&trace, &problem);
    let rows: Vec<BoundsRow> = (0..trace.gap_mean.len())
        .map(|t| BoundsRow {
            t,
            gap_mean: trace.gap_mean[t],
            gap_stderr: trace.gap_stderr[t],
            bound: report.bound[t],
        })
        .collect();
    announce(&write_rows(&cli.out_dir, "bounds", cli.format, &rows)?);
    println!(
        "mu = {:.6}, L = {:.6}, peak step = {:.3e}, b_fit = {:e}",
        problem.mu,
        problem.smoothness,
        schedule.at(0),
        report.b_fit
    );

    let mut failures = Vec::new();
    if !report.holds {
        failures.push("no finite noise coefficient makes the gap bound hold".to_string());
    }
    if let (StepSchedule::Constant { step }, true) = (schedule, problem.noise_sigma2 == 0.0) {
        let factor = 1.0 - problem.mu * step / 2.0;
        let worst = trace
            .gap_mean
            .windows(2)
            .filter(|w| w[0] > 0.0)
            .map(|w| w[1] / w[0])
            .fold(0.0, f64::max);
        println!("worst per-round contraction {worst:.6} (limit {factor:.6})");
        if worst > factor + 1e-6 {
            failures.push(format!("contraction {worst} exceeds {factor}"));
        }
    }
    if strict && !failures.is_empty() {
        return Err(Failure::Check(failures.join("; ")));
    }
    for f in &failures {
        println!("check failed: {f}");
    }
    Ok(())
}

/// Runs the parsed command line.
pub fn run(cli: &Cli) -> CmdResult {
    let cfg = load(cli)?;
    match cli.command {
        Command::Contract => cmd_contract(cli, &cfg),
        Command::Equilibrium => cmd_equilibrium(cli, &cfg),
        Command::Retain => cmd_retain(cli, &cfg),
        Command::Simulate => cmd_simulate(cli, &cfg),
        Command::Compare => cmd_compare(cli, &cfg),
        Command::Sweep => cmd_sweep(cli, &cfg),
        Command::VerifyBounds { strict } => cmd_verify_bounds(cli, &cfg, strict),
    }
}
