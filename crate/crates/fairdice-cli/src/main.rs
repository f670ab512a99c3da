//! `fairdice` — command-line harness around the library: dataset generation,
//! single training runs, policy evaluation, grid sweeps with CSV/SVG reports,
//! and the β-sensitivity forensics battery.
//!
//! Exit codes: 0 on success, 2 for argument/configuration problems, 3 for
//! runtime failures (I/O, corrupt files, numerical breakdown).

mod runner;
mod sweep;
mod svg;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use fairdice::autodiff::LrSchedule;
use fairdice::data::{
    collect_goal_stratified, collect_group_fair, collect_tabular, StateSpace, TabularBehavior,
    TransitionDataset,
};
use fairdice::env::{GroupFairEnv, ReferencePolicyKind, GROUP_FAIR_HORIZON};
use fairdice::error::FairdiceError;
use fairdice::losses::{HyperParams, RegularizerSign, UtilityKind};
use fairdice::tabular::{
    evaluate_tabular_policy, extract_policy, solve_critic_full_batch, SolveConfig, TabularArtifact,
};
use fairdice::trainer::{
    evaluate_policy_mc, train, EvalReport, LossMode, NeuralPolicy, TrainArtifact, TrainConfig,
};

use runner::{rebuild_tabular_env, RunKind};
use sweep::{
    load_meta, parse_loss_mode, resolve_forensics, resolve_sweep, EnvKind, EnvParams,
    ForensicsArgs, SweepArgs, MANIFEST_FILE,
};

/// CLI failure split by who has to fix it: the invocation (exit 2) or the
/// run itself (exit 3).
#[derive(Debug)]
pub enum CliError {
    BadArgs(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::BadArgs(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::BadArgs(msg) | CliError::Runtime(msg) => f.write_str(msg),
        }
    }
}

impl From<FairdiceError> for CliError {
    fn from(e: FairdiceError) -> Self {
        match e {
            // Bad hyper-parameters or impossible environment settings are the
            // caller's to fix; everything else failed at runtime.
            FairdiceError::Config(_) | FairdiceError::EnvConstruction(_) => {
                CliError::BadArgs(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "fairdice",
    version,
    about = "Offline multi-objective RL: data generation, training, evaluation and sweeps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect an offline dataset from one of the benchmark environments.
    GenData(GenDataArgs),
    /// Train a single policy on a dataset and save the artifact.
    Train(TrainArgs),
    /// Evaluate a saved artifact or a built-in reference policy.
    Eval(EvalArgs),
    /// Run a (α, β, λ, loss-mode) × seed grid; resumable, CSV + SVG output.
    Sweep(SweepArgs),
    /// Train all three loss modes across β and rank-test their sensitivity.
    Forensics(ForensicsArgs),
    /// Regenerate the derived tables and plots of a finished run directory.
    Report(ReportArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => train_cmd(args),
        Command::Eval(args) => eval_cmd(args),
        Command::Sweep(args) => {
            resolve_sweep(&args).and_then(|(spec, meta)| runner::execute(&spec, &meta, RunKind::Sweep))
        }
        Command::Forensics(args) => resolve_forensics(&args)
            .and_then(|(spec, meta)| runner::execute(&spec, &meta, RunKind::Forensics)),
        Command::Report(args) => report_cmd(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

#[derive(Args)]
struct GenDataArgs {
    /// Environment to collect from.
    #[arg(long, value_enum)]
    env: EnvKind,
    /// Behaviour policy.  four-rooms / momdp: uniform, optimality-mix,
    /// goal-stratified.  group-fair: random, biased, util-optim, fair.
    #[arg(long)]
    behavior: Option<String>,
    /// Probability of the scalarised-optimal action under optimality-mix
    /// (implies that behaviour; default 0.5).
    #[arg(long)]
    optimality: Option<f64>,
    /// Per-goal episode fractions for goal-stratified collection,
    /// comma separated (default 0.8,0.1,0.1).
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
    /// Episodes to collect (four-rooms / momdp; defaults 200 / 100).
    #[arg(long)]
    trajectories: Option<usize>,
    /// Episodes to collect on the allocation simulator (default 100).
    #[arg(long)]
    rollouts: Option<usize>,
    /// Step cap per collected episode (defaults 400 / 200 / 500).
    #[arg(long)]
    horizon: Option<usize>,
    /// Collection seed (behaviour sampling and environment noise).
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Four-rooms slip probability (default 0.1).
    #[arg(long)]
    stochasticity: Option<f64>,
    /// Discount recorded with the dataset (defaults 0.99 four-rooms,
    /// 0.95 momdp; the simulator is fixed at 0.99).
    #[arg(long)]
    gamma: Option<f64>,
    /// Random-MOMDP instance seed (default 0); decides the kernel, unlike
    /// --seed which only drives collection.
    #[arg(long)]
    env_seed: Option<u64>,
    /// Random-MOMDP state count (default 50).
    #[arg(long)]
    momdp_states: Option<usize>,
    /// Random-MOMDP action count (default 4).
    #[arg(long)]
    momdp_actions: Option<usize>,
    /// Random-MOMDP goal/objective count (default 3).
    #[arg(long)]
    momdp_goals: Option<usize>,
    /// Random-MOMDP successors per state-action pair (default 4).
    #[arg(long)]
    momdp_support: Option<usize>,
    /// Output directory (default data/<env>-<behavior>-s<seed>).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn reject_flag<T>(value: &Option<T>, flag: &str, why: &str) -> Result<(), CliError> {
    if value.is_some() {
        return Err(CliError::BadArgs(format!("{flag} does not apply here: {why}")));
    }
    Ok(())
}

fn tabular_behavior(
    args: &GenDataArgs,
    default: TabularBehavior,
) -> Result<Option<TabularBehavior>, CliError> {
    // `None` means goal-stratified, which collects through its own path.
    match args.behavior.as_deref() {
        None => match args.optimality {
            Some(level) => Ok(Some(TabularBehavior::OptimalityMix { level })),
            None => Ok(Some(default)),
        },
        Some("uniform") => {
            reject_flag(&args.optimality, "--optimality", "the uniform behaviour has no level")?;
            Ok(Some(TabularBehavior::UniformRandom))
        }
        Some("optimality-mix") => Ok(Some(TabularBehavior::OptimalityMix {
            level: args.optimality.unwrap_or(0.5),
        })),
        Some("goal-stratified") => {
            reject_flag(&args.optimality, "--optimality", "goal-stratified has no level")?;
            Ok(None)
        }
        Some(other) => Err(CliError::BadArgs(format!(
            "unknown behaviour '{other}' for an index-state environment; expected uniform, \
             optimality-mix or goal-stratified"
        ))),
    }
}

fn parse_reference_policy(s: &str) -> Result<ReferencePolicyKind, CliError> {
    match s {
        "random" => Ok(ReferencePolicyKind::Random),
        "biased" => Ok(ReferencePolicyKind::Biased),
        "util-optim" => Ok(ReferencePolicyKind::UtilOptim),
        "fair" => Ok(ReferencePolicyKind::Fair),
        other => Err(CliError::BadArgs(format!(
            "unknown reference policy '{other}'; expected random, biased, util-optim or fair"
        ))),
    }
}

fn gen_data(args: GenDataArgs) -> Result<(), CliError> {
    let dataset = match args.env {
        EnvKind::FourRooms => {
            reject_flag(&args.rollouts, "--rollouts", "index-state environments collect --trajectories")?;
            reject_flag(&args.env_seed, "--env-seed", "the four-rooms kernel is fixed")?;
            reject_momdp_dims(&args)?;
            let env = fairdice::env::build_four_rooms_with(
                args.stochasticity.unwrap_or(0.1),
                args.gamma.unwrap_or(0.99),
            )?;
            let trajectories = args.trajectories.unwrap_or(200);
            let horizon = args.horizon.unwrap_or(400);
            collect_env_dataset(&args, &env, trajectories, horizon, TabularBehavior::UniformRandom)?
        }
        EnvKind::Momdp => {
            reject_flag(&args.rollouts, "--rollouts", "index-state environments collect --trajectories")?;
            reject_flag(&args.stochasticity, "--stochasticity", "slip is a four-rooms parameter")?;
            let params = EnvParams {
                stochasticity: 0.1,
                env_seed: args.env_seed.unwrap_or(0),
                momdp_states: args.momdp_states.unwrap_or(50),
                momdp_actions: args.momdp_actions.unwrap_or(4),
                momdp_goals: args.momdp_goals.unwrap_or(3),
                momdp_support: args.momdp_support.unwrap_or(4),
            };
            let env = rebuild_tabular_env(EnvKind::Momdp, &params, args.gamma.unwrap_or(0.95))?;
            let trajectories = args.trajectories.unwrap_or(100);
            let horizon = args.horizon.unwrap_or(200);
            collect_env_dataset(
                &args,
                &env,
                trajectories,
                horizon,
                TabularBehavior::OptimalityMix { level: 0.5 },
            )?
        }
        EnvKind::GroupFair => {
            reject_flag(&args.trajectories, "--trajectories", "the simulator collects --rollouts")?;
            reject_flag(&args.gamma, "--gamma", "the simulator's discount is fixed at 0.99")?;
            reject_flag(&args.stochasticity, "--stochasticity", "slip is a four-rooms parameter")?;
            reject_flag(&args.env_seed, "--env-seed", "the simulator's membership is fixed")?;
            reject_flag(&args.optimality, "--optimality", "optimality-mix is an index-state behaviour")?;
            reject_flag(&args.fractions, "--fractions", "goal-stratified is an index-state behaviour")?;
            reject_momdp_dims(&args)?;
            let kind = parse_reference_policy(args.behavior.as_deref().unwrap_or("random"))?;
            let env = GroupFairEnv::fixed_membership();
            collect_group_fair(
                &env,
                kind,
                args.rollouts.unwrap_or(100),
                args.horizon.unwrap_or(GROUP_FAIR_HORIZON),
                args.seed,
            )?
        }
    };

    let meta = dataset.meta();
    let out = match args.out {
        Some(path) => path,
        // Behaviour labels may contain '/', which must not nest directories.
        None => PathBuf::from("data").join(format!(
            "{}-{}-s{}",
            args.env.label(),
            meta.behavior.replace('/', "-"),
            meta.seed
        )),
    };
    dataset.save_dir(&out)?;
    println!(
        "wrote {} transitions ({} episodes, behaviour {}) to {}",
        meta.num_transitions,
        meta.num_episodes,
        meta.behavior,
        out.display()
    );
    Ok(())
}

fn reject_momdp_dims(args: &GenDataArgs) -> Result<(), CliError> {
    for (value, flag) in [
        (&args.momdp_states, "--momdp-states"),
        (&args.momdp_actions, "--momdp-actions"),
        (&args.momdp_goals, "--momdp-goals"),
        (&args.momdp_support, "--momdp-support"),
    ] {
        reject_flag(value, flag, "it shapes the random-MOMDP generator only")?;
    }
    Ok(())
}

fn collect_env_dataset(
    args: &GenDataArgs,
    env: &fairdice::env::TabularMomdp,
    trajectories: usize,
    horizon: usize,
    default_behavior: TabularBehavior,
) -> Result<TransitionDataset, CliError> {
    match tabular_behavior(args, default_behavior)? {
        Some(behavior) => {
            reject_flag(&args.fractions, "--fractions", "only goal-stratified collection uses them")?;
            Ok(collect_tabular(env, behavior, trajectories, horizon, args.seed)?)
        }
        None => {
            let fractions = args.fractions.clone().unwrap_or_else(|| vec![0.8, 0.1, 0.1]);
            Ok(collect_goal_stratified(env, &fractions, trajectories, horizon, args.seed)?)
        }
    }
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn parse_utility(s: &str) -> Result<UtilityKind, String> {
    match s {
        "alpha-fair" => Ok(UtilityKind::AlphaFair),
        "piecewise-log" => Ok(UtilityKind::PiecewiseLog),
        other => Err(format!(
            "unknown utility '{other}'; expected alpha-fair or piecewise-log"
        )),
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory produced by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Artifact path (default artifacts/<env>-<mode>-a<α>-b<β>-s<seed>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fairness exponent α ≥ 0.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Divergence temperature β > 0.
    #[arg(long, default_value_t = 0.01)]
    beta: f64,
    /// Critic input-gradient penalty coefficient λ ≥ 0 (vector datasets).
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    /// fairdice | fairdice-buggy | plain-bc (vector datasets only).
    #[arg(long, default_value = "fairdice", value_parser = parse_loss_mode)]
    loss_mode: LossMode,
    /// Training seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Utility family in the preference regulariser: alpha-fair | piecewise-log.
    #[arg(long, default_value = "alpha-fair", value_parser = parse_utility)]
    utility: UtilityKind,
    /// Train with the inverted regulariser sign (diagnostic; collapses μ).
    #[arg(long)]
    flip_regularizer_sign: bool,
    /// Minibatch iterations (vector datasets; default 10000).
    #[arg(long)]
    iterations: Option<usize>,
    /// Minibatch size (default 256).
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam step size (default 3e-4).
    #[arg(long)]
    lr: Option<f64>,
    /// Hidden widths, comma separated (default 256,256).
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// Iterations between preference snapshots (default 100).
    #[arg(long)]
    snapshot_every: Option<usize>,
    /// Skip reward min-max normalisation.
    #[arg(long)]
    raw_rewards: bool,
    /// Skip observation standardisation.
    #[arg(long)]
    raw_states: bool,
    /// Full-batch solver iteration cap (index-state datasets; default 50000).
    #[arg(long)]
    max_iters: Option<usize>,
    /// Full-batch solver step size (default 3e-4).
    #[arg(long)]
    tabular_lr: Option<f64>,
    /// Full-batch solver gradient stop tolerance (default 1e-5).
    #[arg(long)]
    grad_tolerance: Option<f64>,
}

fn train_cmd(args: TrainArgs) -> Result<(), CliError> {
    let meta = load_meta(&args.data)?;
    let dataset = TransitionDataset::load_dir(&args.data)?;
    let sign = if args.flip_regularizer_sign {
        RegularizerSign::FlippedForTypoTest
    } else {
        RegularizerSign::Correct
    };
    let hp = HyperParams::new(args.alpha, args.beta, meta.gamma)?
        .with_lambda_gp(args.lambda)
        .with_utility_kind(args.utility)
        .with_regularizer_sign(sign);

    match meta.state_space {
        StateSpace::Tabular(_) => {
            if args.loss_mode != LossMode::FairDice {
                return Err(CliError::BadArgs(
                    "index-state datasets run through the exact solver, which has no cloning-loss \
                     variants; drop --loss-mode or use a vector-observation dataset"
                        .into(),
                ));
            }
            if args.lambda > 0.0 {
                return Err(CliError::BadArgs(
                    "the input-gradient penalty needs vector observations; keep --lambda 0".into(),
                ));
            }
            for (set, flag) in [
                (args.iterations.is_some(), "--iterations"),
                (args.batch_size.is_some(), "--batch-size"),
                (args.lr.is_some(), "--lr"),
                (args.hidden.is_some(), "--hidden"),
                (args.snapshot_every.is_some(), "--snapshot-every"),
                (args.raw_rewards, "--raw-rewards"),
                (args.raw_states, "--raw-states"),
            ] {
                if set {
                    return Err(CliError::BadArgs(format!(
                        "{flag} tunes the minibatch trainer; the full-batch solver takes \
                         --max-iters, --tabular-lr and --grad-tolerance"
                    )));
                }
            }
            let cfg = SolveConfig {
                max_iters: args.max_iters.unwrap_or(50_000),
                lr: args.tabular_lr.unwrap_or(3e-4),
                grad_tolerance: args.grad_tolerance.unwrap_or(1e-5),
                schedule: LrSchedule::Constant,
            };
            let solution = solve_critic_full_batch(&dataset, &hp, &cfg)?;
            let policy = extract_policy(&dataset, &solution.critic, &solution.preference, &hp)?;
            let out = args
                .out
                .clone()
                .unwrap_or_else(|| default_artifact_path(&meta.env_id, &args, "json"));
            let artifact =
                TabularArtifact::from_solution(meta.env_id.clone(), args.seed, &hp, &solution, policy);
            artifact.save_json(&out)?;
            println!(
                "{} after {} iterations; final loss {:.6}, min preference {:.6}",
                if artifact.converged { "converged" } else { "hit the iteration cap" },
                artifact.iterations_run,
                artifact.final_loss,
                solution.trace.min_mu.last().copied().unwrap_or(f64::NAN),
            );
            println!("wrote {}", out.display());
        }
        StateSpace::Vector(_) => {
            for (set, flag) in [
                (args.max_iters.is_some(), "--max-iters"),
                (args.tabular_lr.is_some(), "--tabular-lr"),
                (args.grad_tolerance.is_some(), "--grad-tolerance"),
            ] {
                if set {
                    return Err(CliError::BadArgs(format!(
                        "{flag} tunes the full-batch solver; the minibatch trainer takes \
                         --iterations, --batch-size, --lr, --hidden and --snapshot-every"
                    )));
                }
            }
            let mut cfg = TrainConfig::new(hp, args.loss_mode);
            if let Some(v) = args.iterations {
                cfg.iterations = v;
            }
            if let Some(v) = args.batch_size {
                cfg.batch_size = v;
            }
            if let Some(v) = args.lr {
                cfg.lr = v;
            }
            if let Some(v) = args.hidden.clone() {
                cfg.hidden = v;
            }
            if let Some(v) = args.snapshot_every {
                cfg.snapshot_every = v;
            }
            cfg.normalize_rewards = !args.raw_rewards;
            cfg.normalize_states = !args.raw_states;
            let artifact = train(&dataset, &cfg, args.seed)?;
            let out = args
                .out
                .clone()
                .unwrap_or_else(|| default_artifact_path(&meta.env_id, &args, "fdta"));
            if let Some(parent) = out.parent() {
                fs::create_dir_all(parent)?;
            }
            artifact.save(&out)?;
            println!(
                "trained {} for {} iterations; final policy loss {:.6}, min preference {:.6}",
                artifact.header.config.loss_mode.label(),
                cfg.iterations,
                artifact.policy_losses.last().copied().unwrap_or(f64::NAN),
                artifact.min_mus.last().copied().unwrap_or(f64::NAN),
            );
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn default_artifact_path(env_id: &str, args: &TrainArgs, ext: &str) -> PathBuf {
    PathBuf::from("artifacts").join(format!(
        "{env_id}-{}-a{}-b{}-s{}.{ext}",
        args.loss_mode.label(),
        args.alpha,
        args.beta,
        args.seed
    ))
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Args)]
struct EvalArgs {
    /// Training artifact to evaluate (a .fdta network or a solver .json).
    #[arg(long)]
    artifact: Option<PathBuf>,
    /// Built-in simulator reference policy: random | biased | util-optim | fair.
    #[arg(long)]
    policy: Option<String>,
    /// Where to also write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte-Carlo rollouts (simulator evaluations; default 100).
    #[arg(long, default_value_t = 100)]
    rollouts: usize,
    /// Episode cap per rollout (default: the simulator's full length).
    #[arg(long)]
    horizon: Option<usize>,
    /// Rollout seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Four-rooms slip probability used to rebuild the environment; must
    /// match the gen-data value (default 0.1).
    #[arg(long)]
    stochasticity: Option<f64>,
    /// Random-MOMDP instance seed used to rebuild the environment (default 0).
    #[arg(long)]
    env_seed: Option<u64>,
    /// Random-MOMDP state count (default 50).
    #[arg(long)]
    momdp_states: Option<usize>,
    /// Random-MOMDP action count (default 4).
    #[arg(long)]
    momdp_actions: Option<usize>,
    /// Random-MOMDP goal/objective count (default 3).
    #[arg(long)]
    momdp_goals: Option<usize>,
    /// Random-MOMDP successors per state-action pair (default 4).
    #[arg(long)]
    momdp_support: Option<usize>,
}

/// Evaluation report, flat enough to read as JSON or on stdout.
#[derive(Debug, Serialize)]
struct EvalJson {
    /// "exact" (occupancy evaluation) or "monte-carlo".
    kind: String,
    env_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    policy: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rollouts: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    horizon: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    returns: Vec<f64>,
    nsw: f64,
    nsw_ci: f64,
    utilitarian: f64,
    utilitarian_ci: f64,
    jain: f64,
    jain_ci: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    nonpositive_nsw_rollouts: Option<usize>,
}

fn eval_cmd(args: EvalArgs) -> Result<(), CliError> {
    let report = match (&args.artifact, &args.policy) {
        (Some(path), None) => eval_artifact(path, &args)?,
        (None, Some(name)) => {
            let kind = parse_reference_policy(name)?;
            let env = GroupFairEnv::fixed_membership();
            let horizon = args.horizon.unwrap_or(GROUP_FAIR_HORIZON);
            let mc = evaluate_policy_mc(&env, &kind, args.rollouts, horizon, args.seed)?;
            mc_json(&mc, "group-fair", Some(name.clone()), args.rollouts, horizon, args.seed)
        }
        _ => {
            return Err(CliError::BadArgs(
                "pass exactly one of --artifact or --policy".into(),
            ))
        }
    };

    println!("{} evaluation on {}", report.kind, report.env_id);
    if report.returns.len() <= 10 {
        let joined = report
            .returns
            .iter()
            .map(|v| format!("{v:.4}"))
            .collect::<Vec<_>>()
            .join(", ");
        println!("  per-objective returns: [{joined}]");
    } else {
        let min = report.returns.iter().copied().fold(f64::INFINITY, f64::min);
        let max = report.returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = report.returns.iter().sum::<f64>() / report.returns.len() as f64;
        println!(
            "  {} objectives: min {min:.4}, mean {mean:.4}, max {max:.4}",
            report.returns.len()
        );
    }
    println!("  NSW         {:>10.4} ± {:.4}", report.nsw, report.nsw_ci);
    println!("  utilitarian {:>10.4} ± {:.4}", report.utilitarian, report.utilitarian_ci);
    println!("  Jain        {:>10.4} ± {:.4}", report.jain, report.jain_ci);
    if let Some(n) = report.nonpositive_nsw_rollouts {
        if n > 0 {
            println!("  ({n} rollouts had a nonpositive objective; their NSW is −∞)");
        }
    }
    if let Some(out) = &args.out {
        if let Some(parent) = out.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(
            out,
            serde_json::to_string_pretty(&report)
                .map_err(|e| CliError::Runtime(format!("cannot serialise the report: {e}")))?,
        )?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn mc_json(
    mc: &EvalReport,
    env_id: &str,
    policy: Option<String>,
    rollouts: usize,
    horizon: usize,
    seed: u64,
) -> EvalJson {
    EvalJson {
        kind: "monte-carlo".to_string(),
        env_id: env_id.to_string(),
        policy,
        rollouts: Some(rollouts),
        horizon: Some(horizon),
        seed: Some(seed),
        returns: mc.mean_returns.clone(),
        nsw: mc.nsw.mean,
        nsw_ci: mc.nsw.ci_half_width,
        utilitarian: mc.utilitarian.mean,
        utilitarian_ci: mc.utilitarian.ci_half_width,
        jain: mc.jain.mean,
        jain_ci: mc.jain.ci_half_width,
        nonpositive_nsw_rollouts: Some(mc.nonpositive_nsw_rollouts),
    }
}

const ARTIFACT_MAGIC: &[u8; 4] = b"FDTA";

fn eval_artifact(path: &Path, args: &EvalArgs) -> Result<EvalJson, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::BadArgs(format!("cannot read artifact {}: {e}", path.display())))?;
    if bytes.starts_with(ARTIFACT_MAGIC) {
        let artifact = TrainArtifact::from_bytes(&bytes)?;
        if artifact.header.env_id != "group-fair" {
            return Err(CliError::BadArgs(format!(
                "network artifacts roll out on the allocation simulator, but this one was \
                 trained on '{}'",
                artifact.header.env_id
            )));
        }
        let policy = NeuralPolicy::from_artifact(&artifact)?;
        let env = GroupFairEnv::fixed_membership();
        let horizon = args.horizon.unwrap_or(GROUP_FAIR_HORIZON);
        let mc = evaluate_policy_mc(&env, &policy, args.rollouts, horizon, args.seed)?;
        return Ok(mc_json(&mc, "group-fair", None, args.rollouts, horizon, args.seed));
    }

    let artifact: TabularArtifact = serde_json::from_slice(&bytes).map_err(|e| {
        CliError::BadArgs(format!(
            "{} is neither a network artifact nor a solver artifact: {e}",
            path.display()
        ))
    })?;
    let kind = EnvKind::from_env_id(&artifact.env_id).ok_or_else(|| {
        CliError::BadArgs(format!("artifact names an unknown environment '{}'", artifact.env_id))
    })?;
    let params = EnvParams {
        stochasticity: args.stochasticity.unwrap_or(0.1),
        env_seed: args.env_seed.unwrap_or(0),
        momdp_states: args.momdp_states.unwrap_or(50),
        momdp_actions: args.momdp_actions.unwrap_or(4),
        momdp_goals: args.momdp_goals.unwrap_or(3),
        momdp_support: args.momdp_support.unwrap_or(4),
    };
    let env = rebuild_tabular_env(kind, &params, artifact.hp.gamma)?;
    if env.n_states() != artifact.policy.n_states() || env.n_actions() != artifact.policy.n_actions()
    {
        return Err(CliError::BadArgs(format!(
            "rebuilt environment is {}x{} (states x actions) but the policy is {}x{}; check \
             --stochasticity, --env-seed and the momdp dimension flags",
            env.n_states(),
            env.n_actions(),
            artifact.policy.n_states(),
            artifact.policy.n_actions()
        )));
    }
    let returns = evaluate_tabular_policy(&env, &artifact.policy)?;
    Ok(EvalJson {
        kind: "exact".to_string(),
        env_id: artifact.env_id.clone(),
        policy: None,
        rollouts: None,
        horizon: None,
        seed: None,
        nsw: fairdice::metrics::nsw(&returns)?.value,
        nsw_ci: 0.0,
        utilitarian: fairdice::metrics::utilitarian(&returns),
        utilitarian_ci: 0.0,
        jain: fairdice::metrics::jain_index(&returns)?,
        jain_ci: 0.0,
        returns,
        nonpositive_nsw_rollouts: None,
    })
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

#[derive(Args)]
struct ReportArgs {
    /// Run directory holding a manifest and results CSV.
    #[arg(long)]
    dir: PathBuf,
}

fn report_cmd(args: ReportArgs) -> Result<(), CliError> {
    let manifest = sweep::read_manifest(&args.dir.join(MANIFEST_FILE))?;
    runner::emit_report(&args.dir, &manifest)
}
