//! Sweep specification and its plumbing: the TOML config file, flag
//! overrides, run rows, the append-only CSV, and the run-directory manifest.
//!
//! A sweep is fully described by a [`SweepSpec`]; every CSV row it produces is
//! reproducible from the spec and the row's seed alone.  The informational
//! `wall_time_s` column is the one exception and is excluded from every
//! reproducibility comparison.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use fairdice::data::{DatasetMeta, StateSpace};
use fairdice::env::GROUP_FAIR_HORIZON;
use fairdice::trainer::LossMode;

use crate::CliError;

/// Append-only results table inside a run directory.
pub const RESULTS_FILE: &str = "results.csv";
/// Manifest recording the resolved spec a run directory belongs to.
pub const MANIFEST_FILE: &str = "manifest.json";
/// Seed-averaged per-coordinate table derived from the results.
pub const CURVES_FILE: &str = "curves.csv";
/// Kruskal–Wallis verdicts derived from a forensics run.
pub const FORENSICS_SUMMARY_FILE: &str = "forensics-summary.json";

/// The seven-value divergence-temperature ladder used by default.
pub const DEFAULT_BETAS: [f64; 7] = [1e-5, 1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0];
/// Default fairness exponents: utilitarian plus three fair settings.
pub const DEFAULT_ALPHAS: [f64; 4] = [0.0, 0.5, 1.0, 1.25];

// ---------------------------------------------------------------------------
// Environment selection
// ---------------------------------------------------------------------------

/// Which benchmark environment a dataset belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    /// 11×11 gridworld with three goal cells and slip noise.
    FourRooms,
    /// Seeded random multi-objective MDP with absorbing goals.
    Momdp,
    /// Resource-allocation simulator with overlapping group membership.
    GroupFair,
}

impl EnvKind {
    pub fn label(self) -> &'static str {
        match self {
            EnvKind::FourRooms => "four-rooms",
            EnvKind::Momdp => "momdp",
            EnvKind::GroupFair => "group-fair",
        }
    }

    /// Maps a dataset's recorded environment id back to the CLI name.
    pub fn from_env_id(env_id: &str) -> Option<EnvKind> {
        match env_id {
            "four-rooms" => Some(EnvKind::FourRooms),
            "random-momdp" | "momdp" => Some(EnvKind::Momdp),
            "group-fair" => Some(EnvKind::GroupFair),
            _ => None,
        }
    }

    /// Whether a dataset with this environment id belongs to `self`.
    pub fn matches_env_id(self, env_id: &str) -> bool {
        EnvKind::from_env_id(env_id) == Some(self)
    }
}

/// Parameters needed to rebuild an environment for evaluation.  They must
/// match the values used when the dataset was generated; the discount is
/// always taken from the dataset metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvParams {
    /// Four-rooms slip probability.
    pub stochasticity: f64,
    /// Instance seed of the random-MOMDP generator.
    pub env_seed: u64,
    pub momdp_states: usize,
    pub momdp_actions: usize,
    pub momdp_goals: usize,
    pub momdp_support: usize,
}

impl Default for EnvParams {
    fn default() -> Self {
        EnvParams {
            stochasticity: 0.1,
            env_seed: 0,
            momdp_states: 50,
            momdp_actions: 4,
            momdp_goals: 3,
            momdp_support: 4,
        }
    }
}

/// Loss-mode names accepted on the command line and in config files.
pub fn parse_loss_mode(s: &str) -> Result<LossMode, String> {
    match s {
        "fairdice" => Ok(LossMode::FairDice),
        "fairdice-buggy" => Ok(LossMode::FairDiceBuggy),
        "plain-bc" => Ok(LossMode::PlainBC),
        other => Err(format!(
            "unknown loss mode '{other}'; expected fairdice, fairdice-buggy or plain-bc"
        )),
    }
}

// ---------------------------------------------------------------------------
// Training knobs
// ---------------------------------------------------------------------------

/// Optimiser settings shared by every cell of a sweep.  The first block
/// drives the minibatch trainer (vector observations), the second the
/// full-batch solver (index states); the irrelevant block is ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainKnobs {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub snapshot_every: usize,
    /// Skip reward min-max normalisation.
    pub raw_rewards: bool,
    /// Skip observation standardisation.
    pub raw_states: bool,
    pub max_iters: usize,
    pub tabular_lr: f64,
    pub grad_tolerance: f64,
}

impl Default for TrainKnobs {
    fn default() -> Self {
        TrainKnobs {
            iterations: 10_000,
            batch_size: 256,
            lr: 3e-4,
            hidden: vec![256, 256],
            snapshot_every: 100,
            raw_rewards: false,
            raw_states: false,
            max_iters: 50_000,
            tabular_lr: 3e-4,
            grad_tolerance: 1e-5,
        }
    }
}

// ---------------------------------------------------------------------------
// The resolved sweep specification
// ---------------------------------------------------------------------------

/// Everything a sweep (or forensics battery) needs: the dataset, the grids,
/// the seeds, and the per-run evaluation budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub env: EnvKind,
    pub data: PathBuf,
    pub out: PathBuf,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub loss_modes: Vec<LossMode>,
    pub seeds: Vec<u64>,
    /// Monte-Carlo evaluation rollouts per run (simulator datasets; exact
    /// occupancy evaluation is used for index-state datasets).
    pub rollouts: usize,
    pub eval_horizon: usize,
    /// Save every cell's training artifact under `out/artifacts/`.
    pub keep_artifacts: bool,
    pub env_params: EnvParams,
    pub train: TrainKnobs,
}

impl SweepSpec {
    /// Rows the full grid will produce.
    pub fn total_rows(&self) -> usize {
        self.loss_modes.len()
            * self.lambdas.len()
            * self.alphas.len()
            * self.betas.len()
            * self.seeds.len()
    }
}

// ---------------------------------------------------------------------------
// Config file ([sweep] / [env] / [train] sections) and flag overrides
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub env: EnvSection,
    #[serde(default)]
    pub train: TrainSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub env: Option<String>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub alphas: Option<Vec<f64>>,
    pub betas: Option<Vec<f64>>,
    pub lambdas: Option<Vec<f64>>,
    pub loss_modes: Option<Vec<String>>,
    pub seeds: Option<Vec<u64>>,
    pub rollouts: Option<usize>,
    pub eval_horizon: Option<usize>,
    pub keep_artifacts: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub stochasticity: Option<f64>,
    pub seed: Option<u64>,
    pub states: Option<usize>,
    pub actions: Option<usize>,
    pub goals: Option<usize>,
    pub support: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub iterations: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub hidden: Option<Vec<usize>>,
    pub snapshot_every: Option<usize>,
    pub raw_rewards: Option<bool>,
    pub raw_states: Option<bool>,
    pub max_iters: Option<usize>,
    pub tabular_lr: Option<f64>,
    pub grad_tolerance: Option<f64>,
}

/// Grid sweep over (α, β, λ, loss-mode) × seeds with CSV + SVG artifacts.
#[derive(Args, Debug, Default)]
pub struct SweepArgs {
    /// TOML config file with [sweep], [env] and [train] sections; every
    /// value can be overridden by the matching flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory produced by gen-data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Run directory for the CSV, plots, manifest and artifacts.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Environment the dataset belongs to (inferred from the dataset when omitted).
    #[arg(long, value_enum)]
    pub env: Option<EnvKind>,
    /// Fairness exponents, comma separated (default 0,0.5,1.0,1.25).
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    /// Divergence temperatures, comma separated (default 1e-5…10, 7 values).
    #[arg(long, value_delimiter = ',')]
    pub betas: Option<Vec<f64>>,
    /// Gradient-penalty coefficients, comma separated (default 0).
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    /// Loss modes, comma separated: fairdice, fairdice-buggy, plain-bc.
    #[arg(long, value_delimiter = ',', value_parser = parse_loss_mode)]
    pub loss_modes: Option<Vec<LossMode>>,
    /// Training seeds, comma separated and distinct (default 0,1,2,3,4).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Evaluation rollouts per run on simulator datasets (default 100).
    #[arg(long)]
    pub rollouts: Option<usize>,
    /// Evaluation episode cap on simulator datasets (default 500).
    #[arg(long)]
    pub eval_horizon: Option<usize>,
    /// Save each run's training artifact under the run directory.
    #[arg(long)]
    pub keep_artifacts: bool,
    /// Four-rooms slip probability used to rebuild the environment; must
    /// match the gen-data value (default 0.1).
    #[arg(long)]
    pub stochasticity: Option<f64>,
    /// Random-MOMDP instance seed; must match the gen-data value (default 0).
    #[arg(long)]
    pub env_seed: Option<u64>,
    #[arg(long)]
    pub momdp_states: Option<usize>,
    #[arg(long)]
    pub momdp_actions: Option<usize>,
    #[arg(long)]
    pub momdp_goals: Option<usize>,
    #[arg(long)]
    pub momdp_support: Option<usize>,
    /// Minibatch iterations per run (default 10000).
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Hidden widths, comma separated (default 256,256).
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub snapshot_every: Option<usize>,
    /// Skip reward min-max normalisation.
    #[arg(long)]
    pub raw_rewards: bool,
    /// Skip observation standardisation.
    #[arg(long)]
    pub raw_states: bool,
    /// Full-batch solver iteration cap on index-state datasets (default 50000).
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tabular_lr: Option<f64>,
    #[arg(long)]
    pub grad_tolerance: Option<f64>,
}

/// Train the three loss modes across β on one dataset and test each mode's
/// β-sensitivity with a Kruskal–Wallis rank test.
#[derive(Args, Debug)]
pub struct ForensicsArgs {
    /// Dataset directory (must hold vector observations, i.e. group-fair).
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory for the CSV, summary and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Fairness exponent for the two weighted modes (default 1).
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Gradient-penalty coefficient (default 0).
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// β grid, comma separated, at least 2 values (default 1e-5…10, 7 values).
    #[arg(long, value_delimiter = ',')]
    pub betas: Option<Vec<f64>>,
    /// Seeds, comma separated, at least 5 distinct (default 0-9).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Evaluation rollouts per run (default 30).
    #[arg(long, default_value_t = 30)]
    pub rollouts: usize,
    /// Evaluation episode cap (default 500).
    #[arg(long)]
    pub eval_horizon: Option<usize>,
    /// Minibatch iterations per run (default 2000 — sized for the battery).
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Hidden widths, comma separated (default 64).
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub snapshot_every: Option<usize>,
    /// Save each run's training artifact under the run directory.
    #[arg(long)]
    pub keep_artifacts: bool,
}

impl Default for ForensicsArgs {
    /// Mirrors the clap defaults, so `..Default::default()` in tests reads
    /// as "no flag passed".
    fn default() -> Self {
        ForensicsArgs {
            data: PathBuf::new(),
            out: PathBuf::new(),
            alpha: 1.0,
            lambda: 0.0,
            betas: None,
            seeds: None,
            rollouts: 30,
            eval_horizon: None,
            iterations: None,
            batch_size: None,
            lr: None,
            hidden: None,
            snapshot_every: None,
            keep_artifacts: false,
        }
    }
}

/// Reads the dataset metadata sidecar without loading the transitions.
pub fn load_meta(dir: &Path) -> Result<DatasetMeta, CliError> {
    let meta_path = dir.join("meta.json");
    if !meta_path.is_file() {
        return Err(CliError::BadArgs(format!(
            "no dataset at {} (missing meta.json); run gen-data first",
            dir.display()
        )));
    }
    let text = fs::read_to_string(&meta_path)?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::BadArgs(format!(
            "unreadable dataset metadata {}: {e}",
            meta_path.display()
        ))
    })
}

fn read_config(path: Option<&Path>) -> Result<ConfigFile, CliError> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::BadArgs(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| CliError::BadArgs(format!("bad config {}: {e}", path.display())))
}

/// Merges flags over the config file over defaults into a validated spec.
pub fn resolve_sweep(args: &SweepArgs) -> Result<(SweepSpec, DatasetMeta), CliError> {
    let cfg = read_config(args.config.as_deref())?;
    let data = args
        .data
        .clone()
        .or(cfg.sweep.data)
        .ok_or_else(|| CliError::BadArgs("--data (or [sweep] data in the config) is required".into()))?;
    let meta = load_meta(&data)?;
    let out = args
        .out
        .clone()
        .or(cfg.sweep.out)
        .ok_or_else(|| CliError::BadArgs("--out (or [sweep] out in the config) is required".into()))?;

    let env = match (args.env, cfg.sweep.env.as_deref()) {
        (Some(e), _) => e,
        (None, Some(s)) => EnvKind::from_env_id(s).ok_or_else(|| {
            CliError::BadArgs(format!("unknown environment '{s}' in the config file"))
        })?,
        (None, None) => EnvKind::from_env_id(&meta.env_id).ok_or_else(|| {
            CliError::BadArgs(format!(
                "dataset declares unknown environment '{}'; pass --env explicitly",
                meta.env_id
            ))
        })?,
    };

    let loss_modes = match (&args.loss_modes, &cfg.sweep.loss_modes) {
        (Some(modes), _) => modes.clone(),
        (None, Some(names)) => names
            .iter()
            .map(|s| parse_loss_mode(s).map_err(CliError::BadArgs))
            .collect::<Result<_, _>>()?,
        (None, None) => vec![LossMode::FairDice],
    };

    let defaults = TrainKnobs::default();
    let tr = cfg.train;
    let spec = SweepSpec {
        env,
        data,
        out,
        alphas: args
            .alphas
            .clone()
            .or(cfg.sweep.alphas)
            .unwrap_or_else(|| DEFAULT_ALPHAS.to_vec()),
        betas: args
            .betas
            .clone()
            .or(cfg.sweep.betas)
            .unwrap_or_else(|| DEFAULT_BETAS.to_vec()),
        lambdas: args.lambdas.clone().or(cfg.sweep.lambdas).unwrap_or(vec![0.0]),
        loss_modes,
        seeds: args
            .seeds
            .clone()
            .or(cfg.sweep.seeds)
            .unwrap_or_else(|| (0..5).collect()),
        rollouts: args.rollouts.or(cfg.sweep.rollouts).unwrap_or(100),
        eval_horizon: args
            .eval_horizon
            .or(cfg.sweep.eval_horizon)
            .unwrap_or(GROUP_FAIR_HORIZON),
        keep_artifacts: args.keep_artifacts || cfg.sweep.keep_artifacts.unwrap_or(false),
        env_params: EnvParams {
            stochasticity: args.stochasticity.or(cfg.env.stochasticity).unwrap_or(0.1),
            env_seed: args.env_seed.or(cfg.env.seed).unwrap_or(0),
            momdp_states: args.momdp_states.or(cfg.env.states).unwrap_or(50),
            momdp_actions: args.momdp_actions.or(cfg.env.actions).unwrap_or(4),
            momdp_goals: args.momdp_goals.or(cfg.env.goals).unwrap_or(3),
            momdp_support: args.momdp_support.or(cfg.env.support).unwrap_or(4),
        },
        train: TrainKnobs {
            iterations: args.iterations.or(tr.iterations).unwrap_or(defaults.iterations),
            batch_size: args.batch_size.or(tr.batch_size).unwrap_or(defaults.batch_size),
            lr: args.lr.or(tr.lr).unwrap_or(defaults.lr),
            hidden: args.hidden.clone().or(tr.hidden).unwrap_or(defaults.hidden),
            snapshot_every: args
                .snapshot_every
                .or(tr.snapshot_every)
                .unwrap_or(defaults.snapshot_every),
            raw_rewards: args.raw_rewards || tr.raw_rewards.unwrap_or(false),
            raw_states: args.raw_states || tr.raw_states.unwrap_or(false),
            max_iters: args.max_iters.or(tr.max_iters).unwrap_or(defaults.max_iters),
            tabular_lr: args.tabular_lr.or(tr.tabular_lr).unwrap_or(defaults.tabular_lr),
            grad_tolerance: args
                .grad_tolerance
                .or(tr.grad_tolerance)
                .unwrap_or(defaults.grad_tolerance),
        },
    };
    validate_spec(&spec, &meta)?;
    Ok((spec, meta))
}

/// Fixed three-mode battery over β × seeds at a single (α, λ) coordinate.
pub fn resolve_forensics(args: &ForensicsArgs) -> Result<(SweepSpec, DatasetMeta), CliError> {
    let meta = load_meta(&args.data)?;
    if !matches!(meta.state_space, StateSpace::Vector(_)) {
        return Err(CliError::BadArgs(
            "forensics trains the three policy-loss modes, which need vector observations; \
             use a group-fair dataset"
                .into(),
        ));
    }
    let seeds: Vec<u64> = args.seeds.clone().unwrap_or_else(|| (0..10).collect());
    let distinct: std::collections::BTreeSet<u64> = seeds.iter().copied().collect();
    if distinct.len() < 5 {
        return Err(CliError::BadArgs(format!(
            "forensics needs at least 5 distinct seeds for the rank test, got {}",
            distinct.len()
        )));
    }
    let betas = args.betas.clone().unwrap_or_else(|| DEFAULT_BETAS.to_vec());
    if betas.len() < 2 {
        return Err(CliError::BadArgs(
            "forensics needs at least 2 β values to form rank-test groups".into(),
        ));
    }
    let defaults = TrainKnobs::default();
    let spec = SweepSpec {
        env: EnvKind::GroupFair,
        data: args.data.clone(),
        out: args.out.clone(),
        alphas: vec![args.alpha],
        betas,
        lambdas: vec![args.lambda],
        loss_modes: vec![LossMode::FairDice, LossMode::FairDiceBuggy, LossMode::PlainBC],
        seeds,
        rollouts: args.rollouts,
        eval_horizon: args.eval_horizon.unwrap_or(GROUP_FAIR_HORIZON),
        keep_artifacts: args.keep_artifacts,
        env_params: EnvParams::default(),
        train: TrainKnobs {
            iterations: args.iterations.unwrap_or(2000),
            batch_size: args.batch_size.unwrap_or(defaults.batch_size),
            lr: args.lr.unwrap_or(defaults.lr),
            hidden: args.hidden.clone().unwrap_or_else(|| vec![64]),
            snapshot_every: args.snapshot_every.unwrap_or(defaults.snapshot_every),
            raw_rewards: false,
            raw_states: false,
            max_iters: defaults.max_iters,
            tabular_lr: defaults.tabular_lr,
            grad_tolerance: defaults.grad_tolerance,
        },
    };
    validate_spec(&spec, &meta)?;
    Ok((spec, meta))
}

fn require_distinct(name: &str, values: &[f64]) -> Result<(), CliError> {
    let mut seen = std::collections::BTreeSet::new();
    for &v in values {
        if !seen.insert(v.to_bits()) {
            return Err(CliError::BadArgs(format!(
                "{name} grid contains {v} more than once"
            )));
        }
    }
    Ok(())
}

/// Checks the grid invariants and the dataset/grid compatibility rules.
pub fn validate_spec(spec: &SweepSpec, meta: &DatasetMeta) -> Result<(), CliError> {
    if !spec.env.matches_env_id(&meta.env_id) {
        return Err(CliError::BadArgs(format!(
            "the dataset was collected on '{}' but the sweep names '{}'",
            meta.env_id,
            spec.env.label()
        )));
    }
    for (name, grid) in [
        ("alpha", &spec.alphas),
        ("beta", &spec.betas),
        ("lambda", &spec.lambdas),
    ] {
        if grid.is_empty() {
            return Err(CliError::BadArgs(format!("the {name} grid is empty")));
        }
        require_distinct(name, grid)?;
    }
    if spec.loss_modes.is_empty() {
        return Err(CliError::BadArgs("the loss-mode grid is empty".into()));
    }
    if spec.seeds.is_empty() {
        return Err(CliError::BadArgs("the seed list is empty".into()));
    }
    let distinct_seeds: std::collections::BTreeSet<u64> = spec.seeds.iter().copied().collect();
    if distinct_seeds.len() != spec.seeds.len() {
        return Err(CliError::BadArgs("seeds must be distinct".into()));
    }
    let mut seen_modes = Vec::new();
    for &m in &spec.loss_modes {
        if seen_modes.contains(&m) {
            return Err(CliError::BadArgs(format!(
                "loss mode '{}' appears more than once",
                m.label()
            )));
        }
        seen_modes.push(m);
    }
    if spec.alphas.iter().any(|a| !a.is_finite() || *a < 0.0) {
        return Err(CliError::BadArgs("alphas must be finite and >= 0".into()));
    }
    if spec.betas.iter().any(|b| !b.is_finite() || *b <= 0.0) {
        return Err(CliError::BadArgs("betas must be finite and > 0".into()));
    }
    if spec.lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(CliError::BadArgs("lambdas must be finite and >= 0".into()));
    }
    if spec.rollouts == 0 {
        return Err(CliError::BadArgs("need at least one evaluation rollout".into()));
    }
    match meta.state_space {
        StateSpace::Tabular(_) => {
            if spec.loss_modes != [LossMode::FairDice] {
                return Err(CliError::BadArgs(
                    "index-state datasets run through the exact solver, which optimises the \
                     weighted-cloning objective only; drop the extra loss modes or use a \
                     vector-observation dataset"
                        .into(),
                ));
            }
            if spec.lambdas.iter().any(|&l| l > 0.0) {
                return Err(CliError::BadArgs(
                    "the input-gradient penalty needs vector observations; \
                     index-state sweeps must keep λ = 0"
                        .into(),
                ));
            }
        }
        StateSpace::Vector(_) => {
            if spec.env != EnvKind::GroupFair {
                return Err(CliError::BadArgs(format!(
                    "vector-observation datasets belong to the allocation simulator, not '{}'",
                    spec.env.label()
                )));
            }
            if spec.eval_horizon == 0 || spec.eval_horizon > GROUP_FAIR_HORIZON {
                return Err(CliError::BadArgs(format!(
                    "eval horizon must lie in 1..={GROUP_FAIR_HORIZON}, got {}",
                    spec.eval_horizon
                )));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Run rows and the CSV
// ---------------------------------------------------------------------------

/// One finished run: its grid coordinate, seed, and evaluation metrics.
/// `*_ci` columns are 95% half-widths across evaluation rollouts (zero for
/// exact occupancy evaluation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub loss_mode: String,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub seed: u64,
    pub nsw_mean: f64,
    pub nsw_ci: f64,
    pub utilitarian_mean: f64,
    pub utilitarian_ci: f64,
    pub jain_mean: f64,
    pub jain_ci: f64,
    /// Per-objective mean returns, `;`-joined to keep the schema flat.
    pub returns: String,
    /// Informational; excluded from reproducibility comparisons.
    pub wall_time_s: f64,
}

impl RunRow {
    pub fn key(&self) -> String {
        row_key(&self.loss_mode, self.alpha, self.beta, self.lambda, self.seed)
    }
}

/// Canonical coordinate key.  Float `Display` is shortest-round-trip, so a
/// key built from a parsed CSV row matches the key built from the spec grid.
pub fn row_key(mode: &str, alpha: f64, beta: f64, lambda: f64, seed: u64) -> String {
    format!("{mode}|{alpha}|{beta}|{lambda}|{seed}")
}

pub fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

/// Serialised appender for the results CSV; all writes go through one of
/// these on one thread.
pub struct RowWriter {
    inner: csv::Writer<fs::File>,
}

impl RowWriter {
    pub fn open(path: &Path) -> Result<RowWriter, CliError> {
        let fresh = !path.exists() || fs::metadata(path)?.len() == 0;
        let file = fs::OpenOptions::new().create(true).append(true).open(path)?;
        let inner = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
        Ok(RowWriter { inner })
    }

    /// Appends one row and flushes so a killed sweep keeps every finished row.
    pub fn append(&mut self, row: &RunRow) -> Result<(), CliError> {
        self.inner.serialize(row)?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_rows(path: &Path) -> Result<Vec<RunRow>, CliError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Runtime(format!("cannot open {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row.map_err(|e| CliError::Runtime(format!("corrupt row in {}: {e}", path.display())))?);
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Seed-averaged aggregation (feeds the plots, curves.csv and the summary)
// ---------------------------------------------------------------------------

/// Per-coordinate summary across seeds; `*_ci` is the 95% normal-approximation
/// half-width over the seeds' per-run means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggPoint {
    pub loss_mode: String,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub n_seeds: usize,
    pub nsw_mean: f64,
    pub nsw_ci: f64,
    pub utilitarian_mean: f64,
    pub utilitarian_ci: f64,
    pub jain_mean: f64,
    pub jain_ci: f64,
}

fn seed_summary(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if !mean.is_finite() {
        return (mean, f64::INFINITY);
    }
    if values.len() < 2 || values.iter().all(|&v| v == values[0]) {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

/// Groups rows by (mode, λ, α, β) and averages across seeds, in a fixed
/// order (mode label, then numeric λ, α, β).
pub fn aggregate_rows(rows: &[RunRow]) -> Vec<AggPoint> {
    // Non-negative floats order correctly by their bit patterns.
    let mut groups: BTreeMap<(String, u64, u64, u64), Vec<&RunRow>> = BTreeMap::new();
    for row in rows {
        groups
            .entry((
                row.loss_mode.clone(),
                row.lambda.to_bits(),
                row.alpha.to_bits(),
                row.beta.to_bits(),
            ))
            .or_default()
            .push(row);
    }
    groups
        .into_iter()
        .map(|(_, mut members)| {
            members.sort_by_key(|r| r.seed);
            let collect = |f: fn(&RunRow) -> f64| members.iter().map(|r| f(r)).collect::<Vec<_>>();
            let (nsw_mean, nsw_ci) = seed_summary(&collect(|r| r.nsw_mean));
            let (utilitarian_mean, utilitarian_ci) = seed_summary(&collect(|r| r.utilitarian_mean));
            let (jain_mean, jain_ci) = seed_summary(&collect(|r| r.jain_mean));
            let first = members[0];
            AggPoint {
                loss_mode: first.loss_mode.clone(),
                lambda: first.lambda,
                alpha: first.alpha,
                beta: first.beta,
                n_seeds: members.len(),
                nsw_mean,
                nsw_ci,
                utilitarian_mean,
                utilitarian_ci,
                jain_mean,
                jain_ci,
            }
        })
        .collect()
}

pub fn write_agg_csv(path: &Path, agg: &[AggPoint]) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    for point in agg {
        writer.serialize(point)?;
    }
    writer.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

/// Identifies what a run directory contains and which spec produced it.
/// Resuming with a different spec is refused instead of silently mixing rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// "sweep" or "forensics".
    pub kind: String,
    pub spec: SweepSpec,
    pub dataset_env_id: String,
    pub dataset_behavior: String,
    pub dataset_seed: u64,
    pub results_csv: String,
    /// Files regenerated from the CSV by `report` (pure presentation).
    pub derived: Vec<String>,
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<(), CliError> {
    fs::write(path, serde_json::to_string_pretty(manifest).map_err(|e| {
        CliError::Runtime(format!("cannot serialise manifest: {e}"))
    })?)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest, CliError> {
    if !path.is_file() {
        return Err(CliError::BadArgs(format!(
            "no manifest at {}; run sweep or forensics first",
            path.display()
        )));
    }
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Runtime(format!("corrupt manifest {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use fairdice::metrics::NormStats;

    fn scratch_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("fairdice-sweep-{tag}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).expect("create scratch dir");
        dir
    }

    fn sample_row(beta: f64, seed: u64, nsw: f64) -> RunRow {
        RunRow {
            loss_mode: "fairdice".into(),
            alpha: 1.0,
            beta,
            lambda: 0.0,
            seed,
            nsw_mean: nsw,
            nsw_ci: 0.25,
            utilitarian_mean: 3.5,
            utilitarian_ci: 0.5,
            jain_mean: 0.9,
            jain_ci: 0.01,
            returns: join_floats(&[1.0, 2.5, f64::NEG_INFINITY]),
            wall_time_s: 0.125,
        }
    }

    fn tabular_meta() -> DatasetMeta {
        DatasetMeta {
            env_id: "four-rooms".into(),
            behavior: "uniform".into(),
            seed: 7,
            gamma: 0.99,
            state_space: StateSpace::Tabular(104),
            n_actions: 4,
            num_objectives: 3,
            num_episodes: 5,
            num_transitions: 50,
            norm: NormStats::rewards_from_rows(&[0.0, 1.0, 0.5, 0.0, 0.25, 1.0], 3).unwrap(),
        }
    }

    fn base_spec() -> SweepSpec {
        SweepSpec {
            env: EnvKind::FourRooms,
            data: PathBuf::from("unused"),
            out: PathBuf::from("unused-out"),
            alphas: vec![1.0],
            betas: vec![0.1, 1.0],
            lambdas: vec![0.0],
            loss_modes: vec![LossMode::FairDice],
            seeds: vec![0, 1],
            rollouts: 10,
            eval_horizon: 500,
            keep_artifacts: false,
            env_params: EnvParams::default(),
            train: TrainKnobs::default(),
        }
    }

    #[test]
    fn csv_round_trip_preserves_negative_infinity() {
        let dir = scratch_dir("csv");
        let path = dir.join(RESULTS_FILE);
        let rows = vec![sample_row(0.1, 0, f64::NEG_INFINITY), sample_row(1.0, 1, -2.5)];
        let mut writer = RowWriter::open(&path).unwrap();
        for row in &rows {
            writer.append(row).unwrap();
        }
        drop(writer);
        let back = read_rows(&path).unwrap();
        assert_eq!(back, rows);
        assert_eq!(back[0].nsw_mean, f64::NEG_INFINITY);

        // Appending to an existing file must not repeat the header.
        let mut writer = RowWriter::open(&path).unwrap();
        writer.append(&sample_row(10.0, 2, -1.0)).unwrap();
        drop(writer);
        assert_eq!(read_rows(&path).unwrap().len(), 3);
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn row_keys_survive_the_csv() {
        let dir = scratch_dir("keys");
        let path = dir.join(RESULTS_FILE);
        let row = sample_row(1e-5, 3, -4.0);
        let expected = row_key("fairdice", 1.0, 1e-5, 0.0, 3);
        assert_eq!(row.key(), expected);
        let mut writer = RowWriter::open(&path).unwrap();
        writer.append(&row).unwrap();
        drop(writer);
        assert_eq!(read_rows(&path).unwrap()[0].key(), expected);
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn validation_rejects_bad_grids() {
        let meta = tabular_meta();
        assert!(validate_spec(&base_spec(), &meta).is_ok());

        let mut spec = base_spec();
        spec.betas.clear();
        assert!(matches!(validate_spec(&spec, &meta), Err(CliError::BadArgs(_))));

        let mut spec = base_spec();
        spec.seeds = vec![0, 0];
        assert!(matches!(validate_spec(&spec, &meta), Err(CliError::BadArgs(_))));

        let mut spec = base_spec();
        spec.betas = vec![0.1, 0.1];
        assert!(matches!(validate_spec(&spec, &meta), Err(CliError::BadArgs(_))));

        let mut spec = base_spec();
        spec.betas = vec![0.0];
        assert!(matches!(validate_spec(&spec, &meta), Err(CliError::BadArgs(_))));

        // The exact pipeline has no cloning-loss variants and no penalty.
        let mut spec = base_spec();
        spec.loss_modes = vec![LossMode::FairDice, LossMode::PlainBC];
        assert!(matches!(validate_spec(&spec, &meta), Err(CliError::BadArgs(_))));
        let mut spec = base_spec();
        spec.lambdas = vec![0.001];
        assert!(matches!(validate_spec(&spec, &meta), Err(CliError::BadArgs(_))));

        let mut spec = base_spec();
        spec.env = EnvKind::Momdp;
        assert!(matches!(validate_spec(&spec, &meta), Err(CliError::BadArgs(_))));
    }

    #[test]
    fn config_file_fills_what_flags_leave_open() {
        let dir = scratch_dir("config");
        let data_dir = dir.join("data");
        fs::create_dir_all(&data_dir).unwrap();
        fs::write(
            data_dir.join("meta.json"),
            serde_json::to_string(&tabular_meta()).unwrap(),
        )
        .unwrap();
        let config_path = dir.join("sweep.toml");
        fs::write(
            &config_path,
            format!(
                "[sweep]\n\
                 data = {:?}\n\
                 out = {:?}\n\
                 alphas = [0.0, 1.0]\n\
                 betas = [0.5]\n\
                 seeds = [3]\n\
                 \n\
                 [env]\n\
                 stochasticity = 0.2\n\
                 \n\
                 [train]\n\
                 max_iters = 77\n",
                data_dir.to_str().unwrap(),
                dir.join("run").to_str().unwrap()
            ),
        )
        .unwrap();

        // Flags win over the file; the file wins over defaults.
        let args = SweepArgs {
            config: Some(config_path.clone()),
            betas: Some(vec![2.0]),
            ..SweepArgs::default()
        };
        let (spec, meta) = resolve_sweep(&args).unwrap();
        assert_eq!(meta.env_id, "four-rooms");
        assert_eq!(spec.betas, vec![2.0]);
        assert_eq!(spec.alphas, vec![0.0, 1.0]);
        assert_eq!(spec.seeds, vec![3]);
        assert_eq!(spec.env_params.stochasticity, 0.2);
        assert_eq!(spec.train.max_iters, 77);
        assert_eq!(spec.train.batch_size, TrainKnobs::default().batch_size);

        // Unknown keys are typos, not extensions.
        fs::write(&config_path, "[sweep]\nbetsa = [1.0]\n").unwrap();
        let args = SweepArgs {
            config: Some(config_path),
            data: Some(data_dir),
            out: Some(dir.join("run")),
            ..SweepArgs::default()
        };
        assert!(matches!(resolve_sweep(&args), Err(CliError::BadArgs(_))));
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn aggregation_averages_across_seeds_in_stable_order() {
        let mut rows = vec![
            sample_row(1.0, 1, -3.0),
            sample_row(0.1, 0, -1.0),
            sample_row(1.0, 0, -1.0),
            sample_row(0.1, 1, -2.0),
        ];
        rows[0].jain_mean = 0.7;
        let agg = aggregate_rows(&rows);
        assert_eq!(agg.len(), 2);
        // β ascending within the (mode, λ, α) group.
        assert_eq!(agg[0].beta, 0.1);
        assert_eq!(agg[1].beta, 1.0);
        assert_eq!(agg[0].n_seeds, 2);
        assert_eq!(agg[0].nsw_mean, -1.5);
        let expected_ci = 1.96 * (0.5_f64 / 2.0).sqrt();
        assert!((agg[0].nsw_ci - expected_ci).abs() < 1e-12);
        // A −∞ seed poisons the mean, not the run.
        let rows = vec![sample_row(0.1, 0, f64::NEG_INFINITY), sample_row(0.1, 1, -2.0)];
        let agg = aggregate_rows(&rows);
        assert_eq!(agg[0].nsw_mean, f64::NEG_INFINITY);
        assert_eq!(agg[0].nsw_ci, f64::INFINITY);
        // Finite metrics in the same rows stay usable.
        assert!((agg[0].utilitarian_mean - 3.5).abs() < 1e-12);
        assert_eq!(agg[0].utilitarian_ci, 0.0);
    }

    #[test]
    fn forensics_resolution_enforces_the_battery_shape() {
        let dir = scratch_dir("forensics");
        let data_dir = dir.join("data");
        fs::create_dir_all(&data_dir).unwrap();
        // Tabular data is rejected outright.
        fs::write(
            data_dir.join("meta.json"),
            serde_json::to_string(&tabular_meta()).unwrap(),
        )
        .unwrap();
        let args = ForensicsArgs {
            data: data_dir.clone(),
            out: dir.join("run"),
            ..ForensicsArgs::default()
        };
        assert!(matches!(resolve_forensics(&args), Err(CliError::BadArgs(_))));

        // Vector data with too few seeds is rejected; enough seeds resolve
        // to the fixed three-mode grid.
        let mut meta = tabular_meta();
        meta.env_id = "group-fair".into();
        meta.state_space = StateSpace::Vector(35);
        meta.n_actions = 7;
        fs::write(data_dir.join("meta.json"), serde_json::to_string(&meta).unwrap()).unwrap();
        let args = ForensicsArgs {
            data: data_dir.clone(),
            out: dir.join("run"),
            seeds: Some(vec![0, 1, 2, 3]),
            ..ForensicsArgs::default()
        };
        assert!(matches!(resolve_forensics(&args), Err(CliError::BadArgs(_))));
        let args = ForensicsArgs {
            data: data_dir,
            out: dir.join("run"),
            seeds: Some(vec![0, 1, 2, 3, 4]),
            betas: Some(vec![0.001, 1.0]),
            ..ForensicsArgs::default()
        };
        let (spec, _) = resolve_forensics(&args).unwrap();
        assert_eq!(spec.loss_modes.len(), 3);
        assert_eq!(spec.alphas, vec![1.0]);
        assert_eq!(spec.train.iterations, 2000);
        assert_eq!(spec.train.hidden, vec![64]);
        let _ = fs::remove_dir_all(&dir);
    }
}
