//! Executes a resolved sweep: rebuilds the evaluation environment, runs the
//! pending grid cells on a bounded worker pool, appends rows through a single
//! CSV writer, and derives the reports.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use fairdice::autodiff::LrSchedule;
use fairdice::data::{DatasetMeta, StateSpace, TransitionDataset};
use fairdice::env::{
    build_four_rooms_with, generate_random_momdp, GroupFairEnv, RandomMomdpConfig, TabularMomdp,
    NUM_INDIVIDUALS, NUM_OPTIONS, OBS_DIM,
};
use fairdice::losses::HyperParams;
use fairdice::metrics::{jain_index, nsw, utilitarian};
use fairdice::stats::kruskal_wallis;
use fairdice::tabular::{
    evaluate_tabular_policy, extract_policy, solve_critic_full_batch, SolveConfig, TabularArtifact,
};
use fairdice::trainer::{evaluate_policy_mc, train, LossMode, NeuralPolicy, TrainConfig};

use crate::sweep::{
    aggregate_rows, read_manifest, read_rows, row_key, write_agg_csv, write_manifest, EnvKind,
    EnvParams, Manifest, RowWriter, RunRow, SweepSpec, CURVES_FILE, FORENSICS_SUMMARY_FILE,
    MANIFEST_FILE, RESULTS_FILE,
};
use crate::{svg, CliError};

/// What a run directory is for; decides which report gets derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunKind {
    Sweep,
    Forensics,
}

impl RunKind {
    pub fn label(self) -> &'static str {
        match self {
            RunKind::Sweep => "sweep",
            RunKind::Forensics => "forensics",
        }
    }

    /// Files the report step regenerates from the CSV alone.
    fn derived(self) -> Vec<String> {
        match self {
            RunKind::Sweep => vec![
                CURVES_FILE.to_string(),
                "nsw.svg".to_string(),
                "utilitarian.svg".to_string(),
                "jain.svg".to_string(),
                "nsw-box.svg".to_string(),
            ],
            RunKind::Forensics => vec![FORENSICS_SUMMARY_FILE.to_string()],
        }
    }
}

/// One grid coordinate paired with one seed.
#[derive(Debug, Clone)]
pub struct Cell {
    pub mode: LossMode,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Cell {
    fn key(&self) -> String {
        row_key(self.mode.label(), self.alpha, self.beta, self.lambda, self.seed)
    }

    fn file_stem(&self) -> String {
        format!(
            "{}-a{}-b{}-l{}-s{}",
            self.mode.label(),
            self.alpha,
            self.beta,
            self.lambda,
            self.seed
        )
    }
}

/// Unit of work for the pool.  Plain cloning ignores the critic entirely, so
/// its trained policy — and therefore its row — is identical at every β; one
/// training run can fill a whole β column.
#[derive(Debug, Clone)]
pub enum Job {
    Single(Cell),
    /// Train `cell` once (its β is `betas[0]`) and replicate the row across
    /// all of `betas`.
    FanBeta { cell: Cell, betas: Vec<f64> },
}

impl Job {
    fn rows_produced(&self) -> usize {
        match self {
            Job::Single(_) => 1,
            Job::FanBeta { betas, .. } => betas.len(),
        }
    }
}

/// Pending jobs in grid order, skipping already-written rows.  The β fan-out
/// stays off while artifacts are kept so every cell gets its own file.
pub fn enumerate_jobs(spec: &SweepSpec, done: &BTreeSet<String>) -> Vec<Job> {
    let mut jobs = Vec::new();
    for &mode in &spec.loss_modes {
        for &lambda in &spec.lambdas {
            for &alpha in &spec.alphas {
                let fan = mode == LossMode::PlainBC && !spec.keep_artifacts && spec.betas.len() > 1;
                if fan {
                    for &seed in &spec.seeds {
                        let pending: Vec<f64> = spec
                            .betas
                            .iter()
                            .copied()
                            .filter(|&beta| {
                                !done.contains(&row_key(mode.label(), alpha, beta, lambda, seed))
                            })
                            .collect();
                        let cell = |beta| Cell { mode, alpha, beta, lambda, seed };
                        match pending.len() {
                            0 => {}
                            1 => jobs.push(Job::Single(cell(pending[0]))),
                            _ => jobs.push(Job::FanBeta {
                                cell: cell(pending[0]),
                                betas: pending,
                            }),
                        }
                    }
                } else {
                    for &beta in &spec.betas {
                        for &seed in &spec.seeds {
                            let cell = Cell { mode, alpha, beta, lambda, seed };
                            if !done.contains(&cell.key()) {
                                jobs.push(Job::Single(cell));
                            }
                        }
                    }
                }
            }
        }
    }
    jobs
}

/// How trained policies get scored: exact occupancy evaluation on a rebuilt
/// finite MDP, or Monte-Carlo rollouts on the simulator.
pub enum EvalTarget {
    Exact(TabularMomdp),
    Simulator(GroupFairEnv),
}

/// Reconstructs the finite environment a dataset was collected on.  The
/// dataset records its discount but not the kernel, so the slip / instance
/// seed / dimension parameters must repeat the gen-data values.
pub fn rebuild_tabular_env(
    kind: EnvKind,
    params: &EnvParams,
    gamma: f64,
) -> Result<TabularMomdp, CliError> {
    match kind {
        EnvKind::FourRooms => Ok(build_four_rooms_with(params.stochasticity, gamma)?),
        EnvKind::Momdp => {
            let cfg = RandomMomdpConfig {
                n_states: params.momdp_states,
                n_actions: params.momdp_actions,
                n_goals: params.momdp_goals,
                support: params.momdp_support,
                gamma,
                ..RandomMomdpConfig::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(params.env_seed);
            Ok(generate_random_momdp(&cfg, &mut rng)?)
        }
        EnvKind::GroupFair => Err(CliError::BadArgs(
            "the allocation simulator is not an index-state environment".into(),
        )),
    }
}

pub fn build_eval_target(spec: &SweepSpec, meta: &DatasetMeta) -> Result<EvalTarget, CliError> {
    match meta.state_space {
        StateSpace::Tabular(n_states) => {
            let env = rebuild_tabular_env(spec.env, &spec.env_params, meta.gamma)?;
            if env.n_states() != n_states
                || env.n_actions() != meta.n_actions
                || env.n_objectives() != meta.num_objectives
            {
                return Err(CliError::BadArgs(format!(
                    "rebuilt environment is {}x{}x{} (states x actions x objectives) but the \
                     dataset was collected on {}x{}x{}; check --stochasticity, --env-seed and \
                     the momdp dimension flags against the gen-data invocation",
                    env.n_states(),
                    env.n_actions(),
                    env.n_objectives(),
                    n_states,
                    meta.n_actions,
                    meta.num_objectives
                )));
            }
            Ok(EvalTarget::Exact(env))
        }
        StateSpace::Vector(dim) => {
            if dim != OBS_DIM
                || meta.n_actions != NUM_OPTIONS
                || meta.num_objectives != NUM_INDIVIDUALS
            {
                return Err(CliError::BadArgs(format!(
                    "vector dataset of dimension {dim} with {} actions and {} objectives does \
                     not fit the allocation simulator ({OBS_DIM}, {NUM_OPTIONS}, {NUM_INDIVIDUALS})",
                    meta.n_actions, meta.num_objectives
                )));
            }
            Ok(EvalTarget::Simulator(GroupFairEnv::fixed_membership()))
        }
    }
}

fn round_walltime(seconds: f64) -> f64 {
    (seconds * 1000.0).round() / 1000.0
}

/// Trains and evaluates one cell.  Index-state datasets go through the
/// deterministic full-batch solve and exact evaluation; vector datasets
/// through minibatch training and Monte-Carlo rollouts seeded by the cell.
pub fn run_cell(
    dataset: &TransitionDataset,
    target: &EvalTarget,
    spec: &SweepSpec,
    cell: &Cell,
    artifact_dir: Option<&Path>,
) -> Result<RunRow, CliError> {
    let start = Instant::now();
    let meta = dataset.meta();
    let hp = HyperParams::new(cell.alpha, cell.beta, meta.gamma)?.with_lambda_gp(cell.lambda);
    let mut row = RunRow {
        loss_mode: cell.mode.label().to_string(),
        alpha: cell.alpha,
        beta: cell.beta,
        lambda: cell.lambda,
        seed: cell.seed,
        nsw_mean: 0.0,
        nsw_ci: 0.0,
        utilitarian_mean: 0.0,
        utilitarian_ci: 0.0,
        jain_mean: 0.0,
        jain_ci: 0.0,
        returns: String::new(),
        wall_time_s: 0.0,
    };
    match target {
        EvalTarget::Exact(env) => {
            let solve_cfg = SolveConfig {
                max_iters: spec.train.max_iters,
                lr: spec.train.tabular_lr,
                grad_tolerance: spec.train.grad_tolerance,
                schedule: LrSchedule::Constant,
            };
            let solution = solve_critic_full_batch(dataset, &hp, &solve_cfg)?;
            let policy = extract_policy(dataset, &solution.critic, &solution.preference, &hp)?;
            let returns = evaluate_tabular_policy(env, &policy)?;
            if let Some(dir) = artifact_dir {
                TabularArtifact::from_solution(meta.env_id.clone(), cell.seed, &hp, &solution, policy)
                    .save_json(&dir.join(format!("{}.json", cell.file_stem())))?;
            }
            row.nsw_mean = nsw(&returns)?.value;
            row.utilitarian_mean = utilitarian(&returns);
            row.jain_mean = jain_index(&returns)?;
            row.returns = crate::sweep::join_floats(&returns);
        }
        EvalTarget::Simulator(env) => {
            let mut cfg = TrainConfig::new(hp, cell.mode);
            cfg.iterations = spec.train.iterations;
            cfg.batch_size = spec.train.batch_size;
            cfg.lr = spec.train.lr;
            cfg.hidden = spec.train.hidden.clone();
            cfg.snapshot_every = spec.train.snapshot_every;
            cfg.normalize_rewards = !spec.train.raw_rewards;
            cfg.normalize_states = !spec.train.raw_states;
            let artifact = train(dataset, &cfg, cell.seed)?;
            let policy = NeuralPolicy::from_artifact(&artifact)?;
            let report =
                evaluate_policy_mc(env, &policy, spec.rollouts, spec.eval_horizon, cell.seed)?;
            if let Some(dir) = artifact_dir {
                artifact.save(&dir.join(format!("{}.fdta", cell.file_stem())))?;
            }
            row.nsw_mean = report.nsw.mean;
            row.nsw_ci = report.nsw.ci_half_width;
            row.utilitarian_mean = report.utilitarian.mean;
            row.utilitarian_ci = report.utilitarian.ci_half_width;
            row.jain_mean = report.jain.mean;
            row.jain_ci = report.jain.ci_half_width;
            row.returns = crate::sweep::join_floats(&report.mean_returns);
        }
    }
    row.wall_time_s = round_walltime(start.elapsed().as_secs_f64());
    Ok(row)
}

fn run_job(
    dataset: &TransitionDataset,
    target: &EvalTarget,
    spec: &SweepSpec,
    job: &Job,
    artifact_dir: Option<&Path>,
) -> Result<Vec<RunRow>, CliError> {
    match job {
        Job::Single(cell) => Ok(vec![run_cell(dataset, target, spec, cell, artifact_dir)?]),
        Job::FanBeta { cell, betas } => {
            let base = run_cell(dataset, target, spec, cell, artifact_dir)?;
            Ok(betas
                .iter()
                .map(|&beta| {
                    let mut row = base.clone();
                    row.beta = beta;
                    row
                })
                .collect())
        }
    }
}

/// Pool width: `FAIRDICE_THREADS` when set (must be a positive integer),
/// otherwise the machine's parallelism, never more than the job count.
pub fn worker_count(jobs: usize) -> Result<usize, CliError> {
    let available = thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let cap = match std::env::var("FAIRDICE_THREADS") {
        Ok(raw) => match raw.trim().parse::<usize>() {
            Ok(n) if n > 0 => n,
            _ => {
                return Err(CliError::BadArgs(format!(
                    "FAIRDICE_THREADS must be a positive integer, got '{raw}'"
                )))
            }
        },
        Err(std::env::VarError::NotPresent) => available,
        Err(e) => {
            return Err(CliError::BadArgs(format!("FAIRDICE_THREADS is unreadable: {e}")))
        }
    };
    Ok(cap.min(jobs).max(1))
}

fn run_pool(
    dataset: &TransitionDataset,
    target: &EvalTarget,
    spec: &SweepSpec,
    jobs: &[Job],
    artifact_dir: Option<&Path>,
    results_path: &Path,
    mut done: usize,
    total: usize,
) -> Result<(), CliError> {
    let mut writer = RowWriter::open(results_path)?;
    let workers = worker_count(jobs.len())?;
    let next = AtomicUsize::new(0);
    let next_ref = &next;
    let (tx, rx) = mpsc::channel::<Result<Vec<RunRow>, CliError>>();
    let mut first_error: Option<CliError> = None;

    thread::scope(|scope| -> Result<(), CliError> {
        for _ in 0..workers {
            let tx = tx.clone();
            scope.spawn(move || loop {
                let i = next_ref.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                // A failed job is reported but does not stop the others:
                // every finished row lands in the CSV for a later resume.
                let result = run_job(dataset, target, spec, &jobs[i], artifact_dir);
                if tx.send(result).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for result in rx {
            match result {
                Ok(rows) => {
                    for row in &rows {
                        writer.append(row)?;
                    }
                    done += rows.len();
                    let r = &rows[0];
                    let note = if rows.len() > 1 {
                        format!(" [replicated across {} β values]", rows.len())
                    } else {
                        String::new()
                    };
                    eprintln!(
                        "[{done}/{total}] {} α={} β={} λ={} seed={}: nsw {:.4} ({:.1}s){note}",
                        r.loss_mode, r.alpha, r.beta, r.lambda, r.seed, r.nsw_mean, r.wall_time_s
                    );
                }
                Err(e) => {
                    if first_error.is_none() {
                        first_error = Some(e);
                    }
                }
            }
        }
        Ok(())
    })?;

    match first_error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Runs a resolved spec to completion: manifest, pending cells, reports.
/// Re-running with the same spec resumes; a different spec on the same
/// directory is refused.
pub fn execute(spec: &SweepSpec, meta: &DatasetMeta, kind: RunKind) -> Result<(), CliError> {
    fs::create_dir_all(&spec.out)?;
    let manifest = Manifest {
        kind: kind.label().to_string(),
        spec: spec.clone(),
        dataset_env_id: meta.env_id.clone(),
        dataset_behavior: meta.behavior.clone(),
        dataset_seed: meta.seed,
        results_csv: RESULTS_FILE.to_string(),
        derived: kind.derived(),
    };
    let manifest_path = spec.out.join(MANIFEST_FILE);
    if manifest_path.exists() {
        let existing = read_manifest(&manifest_path)?;
        if existing != manifest {
            return Err(CliError::BadArgs(format!(
                "{} already holds a different {} run; use a fresh --out or repeat the \
                 original arguments to resume it",
                spec.out.display(),
                existing.kind
            )));
        }
    } else {
        write_manifest(&manifest_path, &manifest)?;
    }

    let dataset = TransitionDataset::load_dir(&spec.data)?;
    let target = build_eval_target(spec, meta)?;
    let artifact_dir = if spec.keep_artifacts {
        let dir = spec.out.join("artifacts");
        fs::create_dir_all(&dir)?;
        Some(dir)
    } else {
        None
    };

    let results_path = spec.out.join(RESULTS_FILE);
    let done: BTreeSet<String> = if results_path.exists() {
        read_rows(&results_path)?.iter().map(RunRow::key).collect()
    } else {
        BTreeSet::new()
    };
    let total = spec.total_rows();
    let jobs = enumerate_jobs(spec, &done);
    let pending: usize = jobs.iter().map(Job::rows_produced).sum();
    if pending == 0 {
        eprintln!("all {total} rows already present in {}", results_path.display());
    } else {
        if !done.is_empty() {
            eprintln!("resuming: {} of {total} rows present, {pending} to go", done.len());
        }
        run_pool(
            &dataset,
            &target,
            spec,
            &jobs,
            artifact_dir.as_deref(),
            &results_path,
            total - pending,
            total,
        )?;
    }
    emit_report(&spec.out, &manifest)
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Derives every presentation file from the results CSV.  Both the end of a
/// run and the `report` subcommand call this, so a deleted plot regenerated
/// later is byte-identical.
pub fn emit_report(dir: &Path, manifest: &Manifest) -> Result<(), CliError> {
    let results_path = dir.join(&manifest.results_csv);
    if !results_path.is_file() {
        return Err(CliError::BadArgs(format!(
            "no results at {}; run the sweep first",
            results_path.display()
        )));
    }
    let rows = read_rows(&results_path)?;
    if rows.is_empty() {
        return Err(CliError::Runtime(format!(
            "{} holds no rows",
            results_path.display()
        )));
    }
    if manifest.kind == RunKind::Forensics.label() {
        forensics_report(dir, manifest, &rows)
    } else {
        sweep_report(dir, &rows)
    }
}

fn sweep_report(dir: &Path, rows: &[RunRow]) -> Result<(), CliError> {
    let agg = aggregate_rows(rows);
    write_agg_csv(&dir.join(CURVES_FILE), &agg)?;
    let plots = svg::emit_plots(&agg, rows, dir)?;
    println!(
        "{:<16} {:>8} {:>6} {:>10} {:>3}  {:>20} {:>20} {:>18}",
        "mode", "lambda", "alpha", "beta", "n", "NSW", "utilitarian", "Jain"
    );
    for p in &agg {
        println!(
            "{:<16} {:>8} {:>6} {:>10} {:>3}  {:>11.4} ±{:>7.4} {:>11.4} ±{:>7.4} {:>9.4} ±{:>7.4}",
            p.loss_mode,
            p.lambda,
            p.alpha,
            p.beta,
            p.n_seeds,
            p.nsw_mean,
            p.nsw_ci,
            p.utilitarian_mean,
            p.utilitarian_ci,
            p.jain_mean,
            p.jain_ci
        );
    }
    println!("wrote {CURVES_FILE} and {} under {}", plots.join(", "), dir.display());
    Ok(())
}

/// One mode's rank-test verdict.
#[derive(Debug, Clone, Serialize)]
pub struct ModeKw {
    pub loss_mode: String,
    pub h: f64,
    pub p_value: f64,
    pub dof: usize,
    pub groups: usize,
    /// p < 0.05 across the β groups.
    pub beta_sensitive: bool,
    /// Weighted cloning should react to β; plain cloning ignores the critic
    /// and the broadcast slip flattens the weights, so neither should.
    pub expected_sensitive: bool,
}

#[derive(Debug, Serialize)]
struct ForensicsSummary {
    alpha: f64,
    lambda: f64,
    betas: Vec<f64>,
    seeds: Vec<u64>,
    modes: Vec<ModeKw>,
}

/// Kruskal–Wallis of NSW across the β groups, one test per loss mode.
pub fn kw_analysis(rows: &[RunRow], spec: &SweepSpec) -> Result<Vec<ModeKw>, CliError> {
    let mut out = Vec::with_capacity(spec.loss_modes.len());
    for &mode in &spec.loss_modes {
        let label = mode.label();
        let mut groups: Vec<Vec<f64>> = Vec::with_capacity(spec.betas.len());
        for &beta in &spec.betas {
            let mut members: Vec<(u64, f64)> = rows
                .iter()
                .filter(|r| r.loss_mode == label && r.beta == beta)
                .map(|r| (r.seed, r.nsw_mean))
                .collect();
            if members.len() != spec.seeds.len() {
                return Err(CliError::Runtime(format!(
                    "{} of {} rows for {label} at β={beta}; the battery is incomplete",
                    members.len(),
                    spec.seeds.len()
                )));
            }
            members.sort_by_key(|&(seed, _)| seed);
            groups.push(members.into_iter().map(|(_, v)| v).collect());
        }
        // The rank test needs an ordering, not magnitudes.  Collapsed welfare
        // (−∞ when some individual's mean return is nonpositive) ranks below
        // every finite value and ties with its peers, so stand in a value
        // just under the finite minimum.
        let mut finite_min = f64::INFINITY;
        for group in &groups {
            for &v in group {
                if v.is_finite() {
                    finite_min = finite_min.min(v);
                }
            }
        }
        let stand_in = if finite_min.is_finite() { finite_min - 1.0 } else { -1.0 };
        for group in &mut groups {
            for v in group.iter_mut() {
                if *v == f64::NEG_INFINITY {
                    *v = stand_in;
                } else if !v.is_finite() {
                    return Err(CliError::Runtime(format!(
                        "non-finite NSW value for {label}"
                    )));
                }
            }
        }
        let kw = kruskal_wallis(&groups)?;
        out.push(ModeKw {
            loss_mode: label.to_string(),
            h: kw.h,
            p_value: kw.p_value,
            dof: kw.dof,
            groups: spec.betas.len(),
            beta_sensitive: kw.p_value < 0.05,
            expected_sensitive: mode == LossMode::FairDice,
        });
    }
    Ok(out)
}

fn forensics_report(dir: &Path, manifest: &Manifest, rows: &[RunRow]) -> Result<(), CliError> {
    let spec = &manifest.spec;
    let modes = kw_analysis(rows, spec)?;
    println!(
        "Kruskal-Wallis beta-sensitivity of NSW ({} beta values x {} seeds, alpha={}, lambda={}):",
        spec.betas.len(),
        spec.seeds.len(),
        spec.alphas[0],
        spec.lambdas[0]
    );
    println!(
        "{:<16} {:>10} {:>12} {:>4}  {:<10} {:<12} verdict",
        "mode", "H", "p", "dof", "observed", "expected"
    );
    let mut all_consistent = true;
    for m in &modes {
        let consistent = m.beta_sensitive == m.expected_sensitive;
        all_consistent &= consistent;
        println!(
            "{:<16} {:>10.4} {:>12.6} {:>4}  {:<10} {:<12} {}",
            m.loss_mode,
            m.h,
            m.p_value,
            m.dof,
            if m.beta_sensitive { "sensitive" } else { "flat" },
            if m.expected_sensitive { "sensitive" } else { "flat" },
            if consistent { "CONSISTENT" } else { "DIVERGES" }
        );
    }
    let summary = ForensicsSummary {
        alpha: spec.alphas[0],
        lambda: spec.lambdas[0],
        betas: spec.betas.clone(),
        seeds: spec.seeds.clone(),
        modes,
    };
    let summary_path = dir.join(FORENSICS_SUMMARY_FILE);
    fs::write(
        &summary_path,
        serde_json::to_string_pretty(&summary)
            .map_err(|e| CliError::Runtime(format!("cannot serialise the summary: {e}")))?,
    )?;
    if all_consistent {
        println!("every mode shows its expected beta-sensitivity");
    } else {
        println!("WARNING: at least one mode diverges from its expected beta-sensitivity");
    }
    println!("wrote {}", summary_path.display());
    Ok(())
}
