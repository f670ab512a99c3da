//! Minibatch trainer for vector-observation datasets, plus Monte-Carlo policy
//! evaluation.
//!
//! Each iteration samples a batch with replacement, updates the critic pair
//! (ν, ξ) on the preference-weighted correction loss plus the input-gradient
//! penalty, recomputes the correction weights w* with the fresh parameters,
//! and updates a categorical policy network on the selected cloning loss under
//! a cosine-annealed step size.  Two diagnostic modes replace the policy loss:
//! the faulty outer-product variant, and plain unweighted behaviour cloning,
//! which skips the critic entirely.
//!
//! A finished run is packaged as a [`TrainArtifact`]: a JSON header followed
//! by raw little-endian `f64` sections (parameters, preference logits, loss
//! traces, preference snapshots).  The layout is byte-deterministic, so two
//! runs with identical inputs produce identical files.

use std::fs;
use std::path::Path;

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    gather_log_probs, log_softmax_rows, logits_grad_from_log_prob_grad, sample_from_logits,
    Activation, Adam, AdamConfig, Head, LrSchedule, Mlp, MlpSpec, Tensor,
};
use crate::data::{StateSpace, TransitionDataset};
use crate::env::{reference_action, GroupFairEnv, GroupFairState, ReferencePolicyKind};
use crate::error::{FairdiceError, Result};
use crate::losses::{
    critic_mu_loss_with_grads, gradient_penalty_with_grad, policy_loss_buggy_outer,
    policy_loss_weighted, td_error, w_star, HyperParams, PreferenceVector, TdBatch,
};
use crate::metrics::{jain_index, nsw, utilitarian, NormStats};

/// Magic bytes opening a serialized [`TrainArtifact`].
const ARTIFACT_MAGIC: [u8; 4] = *b"FDTA";
/// Artifact format version.
const ARTIFACT_VERSION: u32 = 1;

// Seed salts keeping the three RNG streams independent of each other while
// still fully determined by the run seed.
const BATCH_STREAM_SALT: u64 = 0x9E37_79B9_7F4A_7C15;
const PENALTY_STREAM_SALT: u64 = 0xD1B5_4A32_D192_ED03;

/// Which policy objective a run optimises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossMode {
    /// Weighted behaviour cloning on the correction weights w*.
    FairDice,
    /// The outer-product broadcasting slip: the per-sample weights and
    /// log-probabilities are summed independently and multiplied, so every
    /// sample receives the same gradient scale.
    FairDiceBuggy,
    /// Plain behaviour cloning; the critic pair (ν, ξ) is never updated.
    PlainBC,
}

impl LossMode {
    /// Stable identifier used in file names and reports.
    pub fn label(self) -> &'static str {
        match self {
            LossMode::FairDice => "fairdice",
            LossMode::FairDiceBuggy => "fairdice-buggy",
            LossMode::PlainBC => "plain-bc",
        }
    }
}

/// Hyper-parameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Loss hyper-parameters; `hp.gamma` must match the dataset's discount.
    pub hp: HyperParams,
    /// Objective optimised by the policy network.
    pub loss_mode: LossMode,
    /// Minibatch updates to run.
    pub iterations: usize,
    /// Transitions per minibatch, sampled with replacement.
    pub batch_size: usize,
    /// Adam base step size for both the critic and the policy.
    pub lr: f64,
    /// Hidden-layer widths shared by the critic and policy networks.
    pub hidden: Vec<usize>,
    /// Iterations between recorded preference snapshots.
    pub snapshot_every: usize,
    /// Min-max normalise rewards with the dataset's statistics.
    pub normalize_rewards: bool,
    /// Mean/std normalise observations with the dataset's statistics.
    pub normalize_states: bool,
}

impl TrainConfig {
    /// Defaults: 10000 iterations, batch 256, lr 3e-4, two hidden layers of
    /// width 256, snapshots every 100 iterations, both normalisations on.
    pub fn new(hp: HyperParams, loss_mode: LossMode) -> Self {
        TrainConfig {
            hp,
            loss_mode,
            iterations: 10_000,
            batch_size: 256,
            lr: 3e-4,
            hidden: vec![256, 256],
            snapshot_every: 100,
            normalize_rewards: true,
            normalize_states: true,
        }
    }

    /// Validates the configuration against the dataset it will train on.
    pub fn validate(&self, dataset: &TransitionDataset) -> Result<()> {
        self.hp.validate()?;
        if self.iterations == 0 {
            return Err(FairdiceError::config("need at least one training iteration"));
        }
        if self.batch_size == 0 {
            return Err(FairdiceError::config("batch size must be >= 1"));
        }
        if self.batch_size > dataset.len() {
            return Err(FairdiceError::config(format!(
                "batch size {} exceeds the dataset's {} transitions",
                self.batch_size,
                dataset.len()
            )));
        }
        if self.snapshot_every == 0 {
            return Err(FairdiceError::config("snapshot cadence must be >= 1"));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(FairdiceError::config(format!(
                "learning rate must be finite and > 0, got {}",
                self.lr
            )));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(FairdiceError::config("hidden widths must be positive"));
        }
        let meta_gamma = dataset.meta().gamma;
        if (self.hp.gamma - meta_gamma).abs() > 1e-12 {
            return Err(FairdiceError::config(format!(
                "config gamma {} does not match the dataset's {}",
                self.hp.gamma, meta_gamma
            )));
        }
        Ok(())
    }
}

/// Headline numbers of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub final_critic_loss: f64,
    pub final_policy_loss: f64,
    pub final_min_mu: f64,
}

/// JSON header of a [`TrainArtifact`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactHeader {
    /// Environment the training data came from.
    pub env_id: String,
    /// Behaviour policy that generated the data.
    pub behavior: String,
    /// Run seed.
    pub seed: u64,
    /// Full configuration snapshot.
    pub config: TrainConfig,
    /// Observation dimension.
    pub obs_dim: usize,
    /// Action count of the categorical policy head.
    pub n_actions: usize,
    /// Reward dimensions.
    pub num_objectives: usize,
    /// Normalisation statistics baked into the trained networks.
    pub norm: NormStats,
    /// Iterations at which preference snapshots were recorded.
    pub snapshot_iterations: Vec<usize>,
    /// Final losses and preference floor.
    pub summary: TrainSummary,
}

/// Everything a finished run produced: parameters, traces and metadata.
///
/// Loss traces have one entry per iteration.  `mu_snapshots` is row-major
/// `[snapshots × num_objectives]`, indexed by `header.snapshot_iterations`;
/// each row is the preference vector right after that iteration's update.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainArtifact {
    pub header: ArtifactHeader,
    pub nu_params: Vec<f64>,
    pub policy_params: Vec<f64>,
    pub xi: Vec<f64>,
    pub critic_losses: Vec<f64>,
    pub policy_losses: Vec<f64>,
    pub penalties: Vec<f64>,
    pub min_mus: Vec<f64>,
    pub mu_snapshots: Vec<f64>,
}

impl TrainArtifact {
    /// Architecture of the critic network.
    pub fn nu_spec(&self) -> MlpSpec {
        let mut widths = Vec::with_capacity(self.header.config.hidden.len() + 2);
        widths.push(self.header.obs_dim);
        widths.extend_from_slice(&self.header.config.hidden);
        widths.push(1);
        MlpSpec::new(widths, Activation::ReLU, Head::Scalar)
    }

    /// Architecture of the policy network.
    pub fn policy_spec(&self) -> MlpSpec {
        let mut widths = Vec::with_capacity(self.header.config.hidden.len() + 2);
        widths.push(self.header.obs_dim);
        widths.extend_from_slice(&self.header.config.hidden);
        widths.push(self.header.n_actions);
        MlpSpec::new(widths, Activation::ReLU, Head::Categorical)
    }

    /// Reconstructs the trained critic network.
    pub fn nu_mlp(&self) -> Result<Mlp> {
        let mut mlp = Mlp::new(self.nu_spec(), &mut ChaCha8Rng::seed_from_u64(0))?;
        mlp.set_flat_params(&self.nu_params)?;
        Ok(mlp)
    }

    /// Reconstructs the trained policy network.
    pub fn policy_mlp(&self) -> Result<Mlp> {
        let mut mlp = Mlp::new(self.policy_spec(), &mut ChaCha8Rng::seed_from_u64(0))?;
        mlp.set_flat_params(&self.policy_params)?;
        Ok(mlp)
    }

    /// Number of recorded preference snapshots.
    pub fn num_snapshots(&self) -> usize {
        self.header.snapshot_iterations.len()
    }

    /// The `i`-th recorded preference vector.
    pub fn mu_snapshot(&self, i: usize) -> &[f64] {
        let k = self.header.num_objectives;
        &self.mu_snapshots[i * k..(i + 1) * k]
    }

    /// Serialises to the artifact byte format.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check_shape()?;
        let header = serde_json::to_vec(&self.header)?;
        let sections = self.sections();
        let payload: usize = sections.iter().map(|s| 8 + 8 * s.len()).sum();
        let mut out = Vec::with_capacity(16 + header.len() + payload);
        out.extend_from_slice(&ARTIFACT_MAGIC);
        out.extend_from_slice(&ARTIFACT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for section in sections {
            out.extend_from_slice(&(section.len() as u64).to_le_bytes());
            for v in section {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses the artifact byte format, validating magic, version and all
    /// section lengths against the header.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = ByteCursor::new(bytes);
        if cursor.take(4)? != ARTIFACT_MAGIC {
            return Err(FairdiceError::data("not a training artifact (bad magic)"));
        }
        let version = cursor.read_u32()?;
        if version != ARTIFACT_VERSION {
            return Err(FairdiceError::data(format!(
                "unsupported artifact version {version} (expected {ARTIFACT_VERSION})"
            )));
        }
        let header_len = cursor.read_u64()? as usize;
        let header: ArtifactHeader = serde_json::from_slice(cursor.take(header_len)?)?;
        let nu_params = cursor.read_f64_section()?;
        let policy_params = cursor.read_f64_section()?;
        let xi = cursor.read_f64_section()?;
        let critic_losses = cursor.read_f64_section()?;
        let policy_losses = cursor.read_f64_section()?;
        let penalties = cursor.read_f64_section()?;
        let min_mus = cursor.read_f64_section()?;
        let mu_snapshots = cursor.read_f64_section()?;
        if !cursor.is_done() {
            return Err(FairdiceError::data("trailing bytes after the last section"));
        }
        let artifact = TrainArtifact {
            header,
            nu_params,
            policy_params,
            xi,
            critic_losses,
            policy_losses,
            penalties,
            min_mus,
            mu_snapshots,
        };
        artifact.check_shape()?;
        Ok(artifact)
    }

    /// Writes the artifact to a file.
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    /// Reads an artifact from a file.
    pub fn load(path: &Path) -> Result<Self> {
        TrainArtifact::from_bytes(&fs::read(path)?)
    }

    fn sections(&self) -> [&[f64]; 8] {
        [
            &self.nu_params,
            &self.policy_params,
            &self.xi,
            &self.critic_losses,
            &self.policy_losses,
            &self.penalties,
            &self.min_mus,
            &self.mu_snapshots,
        ]
    }

    /// Cross-checks every section length against the header.
    fn check_shape(&self) -> Result<()> {
        let h = &self.header;
        let iters = h.config.iterations;
        for (name, len) in [
            ("critic loss trace", self.critic_losses.len()),
            ("policy loss trace", self.policy_losses.len()),
            ("penalty trace", self.penalties.len()),
            ("preference floor trace", self.min_mus.len()),
        ] {
            if len != iters {
                return Err(FairdiceError::data(format!(
                    "{name} has {len} entries for {iters} iterations"
                )));
            }
        }
        if self.xi.len() != h.num_objectives {
            return Err(FairdiceError::data(format!(
                "preference logits have {} entries for {} objectives",
                self.xi.len(),
                h.num_objectives
            )));
        }
        if self.mu_snapshots.len() != h.snapshot_iterations.len() * h.num_objectives {
            return Err(FairdiceError::data(format!(
                "{} preference snapshot values do not tile {} snapshots of {} objectives",
                self.mu_snapshots.len(),
                h.snapshot_iterations.len(),
                h.num_objectives
            )));
        }
        if self.nu_params.len() != self.nu_spec().num_params() {
            return Err(FairdiceError::data("critic parameter count mismatch"));
        }
        if self.policy_params.len() != self.policy_spec().num_params() {
            return Err(FairdiceError::data("policy parameter count mismatch"));
        }
        Ok(())
    }
}

/// Bounds-checked little-endian reader over a byte slice.
struct ByteCursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        ByteCursor { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(FairdiceError::data("truncated training artifact"));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn read_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn read_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn read_f64_section(&mut self) -> Result<Vec<f64>> {
        let len = self.read_u64()? as usize;
        if len > (self.buf.len() - self.pos) / 8 {
            return Err(FairdiceError::data("section length exceeds the file size"));
        }
        let raw = self.take(len * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn is_done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Dataset columns flattened into parallel arrays, with normalisation applied.
struct PreparedData {
    obs_dim: usize,
    n: usize,
    states: Vec<f64>,
    next_states: Vec<f64>,
    init_states: Vec<f64>,
    rewards: Vec<f64>,
    actions: Vec<usize>,
    terminal: Vec<bool>,
}

impl PreparedData {
    fn build(dataset: &TransitionDataset, cfg: &TrainConfig) -> Result<Self> {
        let meta = dataset.meta();
        let obs_dim = match meta.state_space {
            StateSpace::Vector(d) => d,
            StateSpace::Tabular(_) => {
                return Err(FairdiceError::config(
                    "the minibatch trainer needs vector observations; \
                     index-state datasets use the exact solver",
                ))
            }
        };
        if cfg.normalize_states && !meta.norm.has_state_stats() {
            return Err(FairdiceError::config(
                "dataset carries no observation statistics to normalise with",
            ));
        }
        let n = dataset.len();
        let k = meta.num_objectives;
        let mut prep = PreparedData {
            obs_dim,
            n,
            states: Vec::with_capacity(n * obs_dim),
            next_states: Vec::with_capacity(n * obs_dim),
            init_states: Vec::with_capacity(n * obs_dim),
            rewards: Vec::with_capacity(n * k),
            actions: Vec::with_capacity(n),
            terminal: Vec::with_capacity(n),
        };
        for tr in dataset.transitions() {
            for (repr, column) in [
                (&tr.state, &mut prep.states),
                (&tr.next_state, &mut prep.next_states),
                (&tr.initial_state, &mut prep.init_states),
            ] {
                let mut row = repr.as_vector()?.to_vec();
                if cfg.normalize_states {
                    meta.norm.normalize_state(&mut row)?;
                }
                column.extend_from_slice(&row);
            }
            let mut reward = tr.rewards.clone();
            if cfg.normalize_rewards {
                meta.norm.normalize_reward(&mut reward)?;
            }
            prep.rewards.extend_from_slice(&reward);
            prep.actions.push(tr.action);
            prep.terminal.push(tr.done);
        }
        Ok(prep)
    }

    fn state_row(&self, i: usize) -> &[f64] {
        &self.states[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    fn next_row(&self, i: usize) -> &[f64] {
        &self.next_states[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    fn init_row(&self, i: usize) -> &[f64] {
        &self.init_states[i * self.obs_dim..(i + 1) * self.obs_dim]
    }
}

/// Rebrands a non-finite failure with the iteration and pipeline stage.
fn tag_nonfinite(e: FairdiceError, iteration: usize, stage: &str) -> FairdiceError {
    match e {
        FairdiceError::NonFinite { what, .. } => FairdiceError::NonFinite {
            iteration,
            what: format!("{stage}: {what}"),
        },
        FairdiceError::NonFiniteLayer { layer } => FairdiceError::NonFinite {
            iteration,
            what: format!("{stage}: non-finite activation in layer {layer}"),
        },
        other => other,
    }
}

/// Runs one training job to completion.
///
/// The three RNG streams (initialisation, batch sampling, penalty ε) are
/// derived from the seed alone and drawn identically in every loss mode, so
/// runs that differ only in `loss_mode` or `lambda_gp` see the same network
/// initialisations and the same batch sequence.
pub fn train(dataset: &TransitionDataset, cfg: &TrainConfig, seed: u64) -> Result<TrainArtifact> {
    cfg.validate(dataset)?;
    let prep = PreparedData::build(dataset, cfg)?;
    let meta = dataset.meta();
    let d = prep.obs_dim;
    let a = meta.n_actions;
    let k = meta.num_objectives;
    let b = cfg.batch_size;

    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nu_widths = vec![d];
    nu_widths.extend_from_slice(&cfg.hidden);
    nu_widths.push(1);
    let mut nu = Mlp::new(MlpSpec::new(nu_widths, Activation::ReLU, Head::Scalar), &mut init_rng)?;
    let mut pi_widths = vec![d];
    pi_widths.extend_from_slice(&cfg.hidden);
    pi_widths.push(a);
    let mut pi = Mlp::new(
        MlpSpec::new(pi_widths, Activation::ReLU, Head::Categorical),
        &mut init_rng,
    )?;
    let mut xi = Tensor::zeros(vec![k]);

    let mut critic_sizes = nu.param_sizes();
    critic_sizes.push(k);
    let mut critic_adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &critic_sizes,
    );
    let mut policy_adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            schedule: LrSchedule::CosineToZero {
                total_steps: cfg.iterations,
            },
            ..AdamConfig::default()
        },
        &pi.param_sizes(),
    );

    let mut batch_rng = ChaCha8Rng::seed_from_u64(seed ^ BATCH_STREAM_SALT);
    let mut penalty_rng = ChaCha8Rng::seed_from_u64(seed ^ PENALTY_STREAM_SALT);

    let mut critic_losses = Vec::with_capacity(cfg.iterations);
    let mut policy_losses = Vec::with_capacity(cfg.iterations);
    let mut penalties = Vec::with_capacity(cfg.iterations);
    let mut min_mus = Vec::with_capacity(cfg.iterations);
    let mut snapshot_iterations = Vec::new();
    let mut mu_snapshots = Vec::new();

    let mut b_states = vec![0.0; b * d];
    let mut b_next = vec![0.0; b * d];
    let mut b_init = vec![0.0; b * d];
    let mut b_rewards = vec![0.0; b * k];
    let mut b_actions = vec![0usize; b];
    let mut b_terminal = vec![false; b];
    let mut x_bar = vec![0.0; b * d];
    let mut weights = vec![1.0; b];

    for t in 0..cfg.iterations {
        for i in 0..b {
            let idx = batch_rng.random_range(0..prep.n);
            b_states[i * d..(i + 1) * d].copy_from_slice(prep.state_row(idx));
            b_next[i * d..(i + 1) * d].copy_from_slice(prep.next_row(idx));
            b_init[i * d..(i + 1) * d].copy_from_slice(prep.init_row(idx));
            b_rewards[i * k..(i + 1) * k].copy_from_slice(&prep.rewards[idx * k..(idx + 1) * k]);
            b_actions[i] = prep.actions[idx];
            b_terminal[i] = prep.terminal[idx];
        }
        // One shared interpolation coefficient per batch, drawn in every mode
        // so the streams stay aligned across modes and λ settings.
        let eps: f64 = penalty_rng.random();

        let mut critic_loss_t = 0.0;
        let mut penalty_t = 0.0;
        if cfg.loss_mode != LossMode::PlainBC {
            let pref = PreferenceVector::from_xi(xi.values().to_vec());
            let fwd_s = nu
                .forward(&b_states, b)
                .map_err(|e| tag_nonfinite(e, t, "critic forward"))?;
            let fwd_next = nu
                .forward(&b_next, b)
                .map_err(|e| tag_nonfinite(e, t, "critic forward"))?;
            let fwd_init = nu
                .forward(&b_init, b)
                .map_err(|e| tag_nonfinite(e, t, "critic forward"))?;
            let td = TdBatch::new(
                fwd_s.outputs().to_vec(),
                fwd_next.outputs().to_vec(),
                fwd_init.outputs().to_vec(),
                b_rewards.clone(),
                b_terminal.clone(),
                k,
            )?;
            let (data_loss, grads) = critic_mu_loss_with_grads(&td, &pref, &cfg.hp)
                .map_err(|e| tag_nonfinite(e, t, "critic loss"))?;
            critic_loss_t = data_loss;

            nu.zero_grad();
            nu.backward(&fwd_s, &grads.d_nu_s)?;
            nu.backward(&fwd_next, &grads.d_nu_s_next)?;
            nu.backward(&fwd_init, &grads.d_nu_s_init)?;

            if cfg.hp.lambda_gp > 0.0 {
                for i in 0..b * d {
                    x_bar[i] = eps * b_init[i] + (1.0 - eps) * b_next[i];
                }
                let fwd_bar = nu
                    .forward(&x_bar, b)
                    .map_err(|e| tag_nonfinite(e, t, "penalty forward"))?;
                let input_grads = nu.input_gradients(&fwd_bar)?;
                let norms: Vec<f64> = (0..b)
                    .map(|r| {
                        input_grads[r * d..(r + 1) * d]
                            .iter()
                            .map(|g| g * g)
                            .sum::<f64>()
                            .sqrt()
                    })
                    .collect();
                let (pen, d_norm) = gradient_penalty_with_grad(&norms, &cfg.hp);
                penalty_t = pen;
                if pen > 0.0 {
                    // d‖g‖/dg = g/‖g‖; rows below the threshold contribute 0.
                    let mut cotangent = vec![0.0; b * d];
                    for r in 0..b {
                        if d_norm[r] != 0.0 && norms[r] > 0.0 {
                            let scale = d_norm[r] / norms[r];
                            for j in 0..d {
                                cotangent[r * d + j] = scale * input_grads[r * d + j];
                            }
                        }
                    }
                    nu.input_gradient_param_backward(&fwd_bar, &cotangent)
                        .map_err(|e| tag_nonfinite(e, t, "penalty backward"))?;
                }
            }

            xi.zero_grad();
            xi.grad_mut().copy_from_slice(&grads.d_xi);
            let mut tensors = nu.param_tensors_mut();
            tensors.push(&mut xi);
            critic_adam
                .step_tensors(&mut tensors)
                .map_err(|e| tag_nonfinite(e, t, "critic update"))?;
        }

        // Preference state after this iteration's critic update (PlainBC
        // leaves ξ at zero, so μ stays pinned at 1).
        let pref_now = PreferenceVector::from_xi(xi.values().to_vec());
        let min_mu_t = pref_now.min_mu();

        if cfg.loss_mode != LossMode::PlainBC {
            // Fresh correction weights from the just-updated critic.
            let fwd_s = nu
                .forward(&b_states, b)
                .map_err(|e| tag_nonfinite(e, t, "weight forward"))?;
            let fwd_next = nu
                .forward(&b_next, b)
                .map_err(|e| tag_nonfinite(e, t, "weight forward"))?;
            let nu_s = fwd_s.outputs();
            let nu_next = fwd_next.outputs();
            for i in 0..b {
                let e = td_error(
                    pref_now.mu(),
                    &b_rewards[i * k..(i + 1) * k],
                    nu_s[i],
                    nu_next[i],
                    cfg.hp.gamma,
                    b_terminal[i],
                )?;
                weights[i] = w_star(e, cfg.hp.beta);
            }
        }

        let fwd_pi = pi
            .forward(&b_states, b)
            .map_err(|e| tag_nonfinite(e, t, "policy forward"))?;
        let log_probs = log_softmax_rows(fwd_pi.outputs(), b, a);
        let taken = gather_log_probs(&log_probs, a, &b_actions)?;
        let (policy_loss_t, lp_grad) = match cfg.loss_mode {
            LossMode::FairDice => {
                let out = policy_loss_weighted(&taken, &weights, &b_terminal)
                    .map_err(|e| tag_nonfinite(e, t, "policy loss"))?;
                (out.loss, out.grad_log_probs)
            }
            LossMode::FairDiceBuggy => {
                let out = policy_loss_buggy_outer(&taken, &weights, &b_terminal)
                    .map_err(|e| tag_nonfinite(e, t, "policy loss"))?;
                (out.loss, out.grad_log_probs)
            }
            LossMode::PlainBC => {
                // Unmasked mean log-likelihood: the outer-product slip's
                // gradient is exactly this scaled by the batch weight sum.
                let inv_b = 1.0 / b as f64;
                let loss = -inv_b * taken.iter().sum::<f64>();
                (loss, vec![-inv_b; b])
            }
        };
        let d_logits = logits_grad_from_log_prob_grad(&log_probs, a, &b_actions, &lp_grad)?;
        pi.zero_grad();
        pi.backward(&fwd_pi, &d_logits)?;
        policy_adam
            .step_tensors(&mut pi.param_tensors_mut())
            .map_err(|e| tag_nonfinite(e, t, "policy update"))?;

        critic_losses.push(critic_loss_t);
        policy_losses.push(policy_loss_t);
        penalties.push(penalty_t);
        min_mus.push(min_mu_t);
        if (t % cfg.snapshot_every == 0 || t + 1 == cfg.iterations)
            && snapshot_iterations.last() != Some(&t)
        {
            snapshot_iterations.push(t);
            mu_snapshots.extend_from_slice(pref_now.mu());
        }
    }

    let summary = TrainSummary {
        final_critic_loss: *critic_losses.last().expect(">= 1 iteration"),
        final_policy_loss: *policy_losses.last().expect(">= 1 iteration"),
        final_min_mu: *min_mus.last().expect(">= 1 iteration"),
    };
    let artifact = TrainArtifact {
        header: ArtifactHeader {
            env_id: meta.env_id.clone(),
            behavior: meta.behavior.clone(),
            seed,
            config: cfg.clone(),
            obs_dim: d,
            n_actions: a,
            num_objectives: k,
            norm: meta.norm.clone(),
            snapshot_iterations,
            summary,
        },
        nu_params: nu.flat_params(),
        policy_params: pi.flat_params(),
        xi: xi.values().to_vec(),
        critic_losses,
        policy_losses,
        penalties,
        min_mus,
        mu_snapshots,
    };
    artifact.check_shape()?;
    Ok(artifact)
}

/// A trained categorical policy with its observation normalisation baked in.
#[derive(Debug, Clone)]
pub struct NeuralPolicy {
    mlp: Mlp,
    norm: Option<NormStats>,
}

impl NeuralPolicy {
    /// Reconstructs the policy of a finished run, including the observation
    /// normalisation it was trained under.
    pub fn from_artifact(artifact: &TrainArtifact) -> Result<Self> {
        let norm = if artifact.header.config.normalize_states {
            Some(artifact.header.norm.clone())
        } else {
            None
        };
        NeuralPolicy::from_parts(artifact.policy_mlp()?, norm)
    }

    /// Wraps an existing network (useful for hand-built fixtures).
    pub fn from_parts(mlp: Mlp, norm: Option<NormStats>) -> Result<Self> {
        if mlp.spec().head != Head::Categorical {
            return Err(FairdiceError::config(
                "a rollout policy needs a categorical head",
            ));
        }
        Ok(NeuralPolicy { mlp, norm })
    }

    /// Action count.
    pub fn n_actions(&self) -> usize {
        self.mlp.spec().output_dim()
    }

    /// Raw action logits for one (unnormalised) observation.
    pub fn logits(&self, observation: &[f64]) -> Result<Vec<f64>> {
        let mut x = observation.to_vec();
        if let Some(norm) = &self.norm {
            norm.normalize_state(&mut x)?;
        }
        let cache = self.mlp.forward(&x, 1)?;
        Ok(cache.outputs().to_vec())
    }

    /// Log-probabilities over all actions for one observation.
    pub fn action_log_probs(&self, observation: &[f64]) -> Result<Vec<f64>> {
        let logits = self.logits(observation)?;
        let n = logits.len();
        Ok(log_softmax_rows(&logits, 1, n))
    }

    /// Samples an action for one observation.
    pub fn act<R: Rng + ?Sized>(&self, observation: &[f64], rng: &mut R) -> Result<usize> {
        Ok(sample_from_logits(&self.logits(observation)?, rng))
    }
}

/// Mean KL(p ‖ q) between two policies' action distributions over a set of
/// raw observations.
pub fn mean_policy_kl(p: &NeuralPolicy, q: &NeuralPolicy, observations: &[Vec<f64>]) -> Result<f64> {
    if observations.is_empty() {
        return Err(FairdiceError::shape("mean KL over zero observations"));
    }
    let mut total = 0.0;
    for obs in observations {
        let lp = p.action_log_probs(obs)?;
        let lq = q.action_log_probs(obs)?;
        if lp.len() != lq.len() {
            return Err(FairdiceError::shape(format!(
                "policies disagree on the action count: {} vs {}",
                lp.len(),
                lq.len()
            )));
        }
        total += lp
            .iter()
            .zip(&lq)
            .map(|(&a, &b)| a.exp() * (a - b))
            .sum::<f64>();
    }
    Ok(total / observations.len() as f64)
}

/// One simulator step: successor state, per-objective rewards, terminal flag.
#[derive(Debug, Clone)]
pub struct RolloutStep<S> {
    pub next: S,
    pub rewards: Vec<f64>,
    pub done: bool,
}

/// A simulator that evaluation rollouts can drive.
pub trait Rollable {
    type State;
    /// Fresh episode state.
    fn reset(&self, rng: &mut ChaCha8Rng) -> Self::State;
    /// The observation a policy network sees.
    fn observation(&self, state: &Self::State) -> Vec<f64>;
    /// Applies an action.
    fn step(&self, state: &Self::State, action: usize, rng: &mut ChaCha8Rng)
        -> Result<RolloutStep<Self::State>>;
    /// Hard episode cap the simulator enforces.
    fn horizon(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn num_objectives(&self) -> usize;
}

impl Rollable for GroupFairEnv {
    type State = GroupFairState;

    fn reset(&self, rng: &mut ChaCha8Rng) -> GroupFairState {
        GroupFairEnv::reset(self, rng)
    }

    fn observation(&self, state: &GroupFairState) -> Vec<f64> {
        state.observation().to_vec()
    }

    fn step(
        &self,
        state: &GroupFairState,
        action: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<RolloutStep<GroupFairState>> {
        let step = GroupFairEnv::step(self, state, action, rng)?;
        Ok(RolloutStep {
            next: step.next,
            rewards: step.rewards,
            done: step.done,
        })
    }

    fn horizon(&self) -> usize {
        crate::env::GROUP_FAIR_HORIZON
    }

    fn n_actions(&self) -> usize {
        crate::env::NUM_OPTIONS
    }

    fn num_objectives(&self) -> usize {
        crate::env::NUM_INDIVIDUALS
    }
}

/// Chooses actions during evaluation rollouts.
pub trait RolloutPolicy<E: Rollable + ?Sized> {
    fn choose(&self, env: &E, state: &E::State, rng: &mut ChaCha8Rng) -> Result<usize>;
}

impl<E: Rollable> RolloutPolicy<E> for NeuralPolicy {
    fn choose(&self, env: &E, state: &E::State, rng: &mut ChaCha8Rng) -> Result<usize> {
        self.act(&env.observation(state), rng)
    }
}

impl RolloutPolicy<GroupFairEnv> for ReferencePolicyKind {
    fn choose(&self, _env: &GroupFairEnv, state: &GroupFairState, rng: &mut ChaCha8Rng) -> Result<usize> {
        Ok(reference_action(*self, state, rng))
    }
}

/// Mean and 95% half-width (1.96 standard errors) of per-rollout values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub ci_half_width: f64,
}

fn summarize(values: &[f64]) -> MetricSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if !mean.is_finite() {
        return MetricSummary {
            mean,
            ci_half_width: f64::INFINITY,
        };
    }
    // Identical samples have zero spread; the two-pass formula below can
    // smear rounding from the mean into a spurious ~1e-17 variance there.
    if values.len() < 2 || values.iter().all(|&v| v == values[0]) {
        return MetricSummary {
            mean,
            ci_half_width: 0.0,
        };
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    MetricSummary {
        mean,
        ci_half_width: 1.96 * (var / n).sqrt(),
    }
}

/// Monte-Carlo evaluation of a policy: per-rollout undiscounted returns and
/// welfare aggregates with rollout-level confidence intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub num_objectives: usize,
    /// Row-major `[n_rollouts × num_objectives]` undiscounted return sums.
    pub returns: Vec<f64>,
    /// Per-objective means across rollouts.
    pub mean_returns: Vec<f64>,
    /// Log Nash welfare per rollout (−∞ when any objective is nonpositive).
    pub nsw: MetricSummary,
    pub utilitarian: MetricSummary,
    pub jain: MetricSummary,
    /// Rollouts whose return vector had a nonpositive entry.
    pub nonpositive_nsw_rollouts: usize,
}

impl EvalReport {
    /// Number of evaluation rollouts.
    pub fn n_rollouts(&self) -> usize {
        self.returns.len() / self.num_objectives
    }

    /// Return vector of rollout `r`.
    pub fn return_row(&self, r: usize) -> &[f64] {
        &self.returns[r * self.num_objectives..(r + 1) * self.num_objectives]
    }
}

/// Seed for one rollout's private stream (SplitMix64 keyed by the index), so
/// rollouts are reproducible independently of evaluation order.
fn rollout_seed(seed: u64, rollout: u64) -> u64 {
    let mut z = seed ^ rollout.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Rolls a policy out `n_rollouts` times for up to `horizon` steps each and
/// aggregates undiscounted returns into welfare metrics.
///
/// `horizon` may not exceed the simulator's own episode cap; episodes also
/// stop early whenever the simulator reports termination.
pub fn evaluate_policy_mc<E: Rollable, P: RolloutPolicy<E>>(
    env: &E,
    policy: &P,
    n_rollouts: usize,
    horizon: usize,
    seed: u64,
) -> Result<EvalReport> {
    if n_rollouts == 0 {
        return Err(FairdiceError::config("need at least one evaluation rollout"));
    }
    if horizon == 0 || horizon > env.horizon() {
        return Err(FairdiceError::config(format!(
            "evaluation horizon {horizon} outside 1..={}",
            env.horizon()
        )));
    }
    let k = env.num_objectives();
    let mut returns = vec![0.0; n_rollouts * k];
    for r in 0..n_rollouts {
        let mut rng = ChaCha8Rng::seed_from_u64(rollout_seed(seed, r as u64));
        let mut state = env.reset(&mut rng);
        let row = &mut returns[r * k..(r + 1) * k];
        for _ in 0..horizon {
            let action = policy.choose(env, &state, &mut rng)?;
            let step = env.step(&state, action, &mut rng)?;
            if step.rewards.len() != k {
                return Err(FairdiceError::shape(format!(
                    "simulator paid {} rewards for {k} objectives",
                    step.rewards.len()
                )));
            }
            for (acc, &ri) in row.iter_mut().zip(&step.rewards) {
                *acc += ri;
            }
            state = step.next;
            if step.done {
                break;
            }
        }
    }

    let mut mean_returns = vec![0.0; k];
    for r in 0..n_rollouts {
        for (m, &v) in mean_returns.iter_mut().zip(&returns[r * k..(r + 1) * k]) {
            *m += v / n_rollouts as f64;
        }
    }
    let mut nsw_values = Vec::with_capacity(n_rollouts);
    let mut util_values = Vec::with_capacity(n_rollouts);
    let mut jain_values = Vec::with_capacity(n_rollouts);
    let mut nonpositive = 0;
    for r in 0..n_rollouts {
        let row = &returns[r * k..(r + 1) * k];
        let w = nsw(row)?;
        if w.had_nonpositive {
            nonpositive += 1;
        }
        nsw_values.push(w.value);
        util_values.push(utilitarian(row));
        jain_values.push(jain_index(row)?);
    }
    Ok(EvalReport {
        num_objectives: k,
        mean_returns,
        nsw: summarize(&nsw_values),
        utilitarian: summarize(&util_values),
        jain: summarize(&jain_values),
        nonpositive_nsw_rollouts: nonpositive,
        returns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{collect_group_fair, StateRepr, Transition};
    use approx::assert_relative_eq;

    fn group_fair_dataset(seed: u64) -> TransitionDataset {
        let env = GroupFairEnv::fixed_membership();
        collect_group_fair(&env, ReferencePolicyKind::Random, 3, 40, seed).unwrap()
    }

    fn small_config(loss_mode: LossMode, beta: f64) -> TrainConfig {
        let hp = HyperParams::new(1.0, beta, 0.99).unwrap().with_lambda_gp(1e-4);
        let mut cfg = TrainConfig::new(hp, loss_mode);
        cfg.iterations = 60;
        cfg.batch_size = 32;
        cfg.hidden = vec![16];
        cfg.snapshot_every = 20;
        cfg
    }

    /// Raw observations from rollouts the training data never saw.
    fn held_out_observations(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let env = GroupFairEnv::fixed_membership();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        let mut state = env.reset(&mut rng);
        for _ in 0..n {
            out.push(state.observation().to_vec());
            let action = rng.random_range(0..7);
            state = env.step(&state, action, &mut rng).unwrap().next;
        }
        out
    }

    #[test]
    fn config_validation_catches_bad_inputs() {
        let ds = group_fair_dataset(3);
        let good = small_config(LossMode::FairDice, 1.0);
        assert!(good.validate(&ds).is_ok());

        let mut cfg = good.clone();
        cfg.iterations = 0;
        assert!(cfg.validate(&ds).is_err());

        let mut cfg = good.clone();
        cfg.batch_size = ds.len() + 1;
        assert!(cfg.validate(&ds).is_err());

        let mut cfg = good.clone();
        cfg.snapshot_every = 0;
        assert!(cfg.validate(&ds).is_err());

        let mut cfg = good.clone();
        cfg.lr = 0.0;
        assert!(cfg.validate(&ds).is_err());

        let mut cfg = good.clone();
        cfg.hidden = vec![16, 0];
        assert!(cfg.validate(&ds).is_err());

        // Discount disagreement with the dataset is rejected.
        let mut cfg = good;
        cfg.hp = HyperParams::new(1.0, 1.0, 0.95).unwrap();
        assert!(matches!(cfg.validate(&ds), Err(FairdiceError::Config(_))));
    }

    #[test]
    fn tabular_datasets_are_rejected() {
        let env = crate::env::build_four_rooms();
        let ds = crate::data::collect_tabular(
            &env,
            crate::data::TabularBehavior::UniformRandom,
            5,
            30,
            0,
        )
        .unwrap();
        let mut cfg = small_config(LossMode::PlainBC, 1.0);
        cfg.hp = HyperParams::new(1.0, 1.0, ds.meta().gamma).unwrap();
        cfg.batch_size = 4;
        assert!(matches!(train(&ds, &cfg, 0), Err(FairdiceError::Config(_))));
    }

    #[test]
    fn traces_cover_every_iteration_and_snapshots_are_ordered() {
        let ds = group_fair_dataset(5);
        let mut cfg = small_config(LossMode::FairDice, 1.0);
        cfg.iterations = 12;
        cfg.snapshot_every = 5;
        let artifact = train(&ds, &cfg, 7).unwrap();
        assert_eq!(artifact.critic_losses.len(), 12);
        assert_eq!(artifact.policy_losses.len(), 12);
        assert_eq!(artifact.penalties.len(), 12);
        assert_eq!(artifact.min_mus.len(), 12);
        assert_eq!(artifact.header.snapshot_iterations, vec![0, 5, 10, 11]);
        assert_eq!(artifact.num_snapshots(), 4);
        assert_eq!(artifact.mu_snapshots.len(), 4 * 100);
        // Snapshot 0 is taken after the first update, so it already moved.
        assert_eq!(artifact.mu_snapshot(3).len(), 100);
        assert!(artifact.min_mus.iter().all(|&m| m > 0.0));
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let ds = group_fair_dataset(11);
        let cfg = small_config(LossMode::FairDice, 1.0);
        let a = train(&ds, &cfg, 3).unwrap();
        let b = train(&ds, &cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
        let c = train(&ds, &cfg, 4).unwrap();
        assert_ne!(a.policy_params, c.policy_params);
    }

    #[test]
    fn plain_bc_leaves_critic_and_preferences_at_init() {
        let ds = group_fair_dataset(13);
        let cfg = small_config(LossMode::PlainBC, 1.0);
        let artifact = train(&ds, &cfg, 9).unwrap();
        assert!(artifact.xi.iter().all(|&x| x == 0.0));
        assert!(artifact.min_mus.iter().all(|&m| m == 1.0));
        assert!(artifact.critic_losses.iter().all(|&l| l == 0.0));
        assert!(artifact.penalties.iter().all(|&p| p == 0.0));
        // The critic parameters equal a fresh draw from the same init stream.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let fresh = Mlp::new(artifact.nu_spec(), &mut rng).unwrap();
        assert_eq!(artifact.nu_params, fresh.flat_params());
        // The policy did train.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let _ = Mlp::new(artifact.nu_spec(), &mut rng).unwrap();
        let fresh_pi = Mlp::new(artifact.policy_spec(), &mut rng).unwrap();
        assert_ne!(artifact.policy_params, fresh_pi.flat_params());
    }

    #[test]
    fn buggy_mode_reproduces_plain_cloning() {
        let ds = group_fair_dataset(17);
        let mut buggy_cfg = small_config(LossMode::FairDiceBuggy, 0.1);
        buggy_cfg.iterations = 250;
        let mut bc_cfg = buggy_cfg.clone();
        bc_cfg.loss_mode = LossMode::PlainBC;
        let buggy = train(&ds, &buggy_cfg, 21).unwrap();
        let bc = train(&ds, &bc_cfg, 21).unwrap();
        let p = NeuralPolicy::from_artifact(&buggy).unwrap();
        let q = NeuralPolicy::from_artifact(&bc).unwrap();
        let held_out = held_out_observations(50, 999);
        let kl = mean_policy_kl(&p, &q, &held_out).unwrap();
        assert!(kl >= 0.0);
        assert!(kl < 1e-3, "buggy-vs-BC mean KL = {kl}");
    }

    #[test]
    fn huge_beta_collapses_the_weighting_to_plain_cloning() {
        let ds = group_fair_dataset(19);
        let mut fd_cfg = small_config(LossMode::FairDice, 1e6);
        fd_cfg.iterations = 250;
        let mut bc_cfg = fd_cfg.clone();
        bc_cfg.loss_mode = LossMode::PlainBC;
        let fd = train(&ds, &fd_cfg, 5).unwrap();
        let bc = train(&ds, &bc_cfg, 5).unwrap();
        let p = NeuralPolicy::from_artifact(&fd).unwrap();
        let q = NeuralPolicy::from_artifact(&bc).unwrap();
        let held_out = held_out_observations(50, 1234);
        let kl = mean_policy_kl(&p, &q, &held_out).unwrap();
        assert!(kl < 1e-3, "beta-collapse mean KL = {kl}");
    }

    /// Hand-built 2-d dataset with large unnormalised rewards, so the critic
    /// must grow steep and the input-gradient penalty eventually activates.
    fn steep_synthetic_dataset() -> TransitionDataset {
        let n = 40;
        let mut transitions = Vec::with_capacity(n);
        for i in 0..n {
            let x = -1.0 + 2.0 * (i as f64) / (n - 1) as f64;
            let y = if i % 2 == 0 { -0.5 } else { 0.5 };
            let x_next = -1.0 + 2.0 * (((i + 7) % n) as f64) / (n - 1) as f64;
            transitions.push(Transition {
                state: StateRepr::Vector(vec![x, y]),
                action: i % 2,
                rewards: vec![30.0 + 60.0 * x],
                next_state: StateRepr::Vector(vec![x_next, -y]),
                done: false,
                initial_state: StateRepr::Vector(vec![-1.0, -0.5]),
                preference: None,
            });
        }
        TransitionDataset::from_transitions(
            "synthetic-steep",
            "scripted",
            0,
            0.5,
            StateSpace::Vector(2),
            2,
            1,
            1,
            transitions,
        )
        .unwrap()
    }

    #[test]
    fn lambda_changes_nothing_until_the_penalty_activates() {
        let ds = steep_synthetic_dataset();
        let hp = HyperParams::new(1.0, 1.0, 0.5).unwrap();
        let mut base = TrainConfig::new(hp, LossMode::FairDice);
        base.iterations = 400;
        base.batch_size = 32;
        base.lr = 0.05;
        base.hidden = vec![8];
        base.snapshot_every = 100;
        base.normalize_rewards = false;
        base.normalize_states = false;
        let with_penalty = {
            let mut cfg = base.clone();
            cfg.hp = cfg.hp.with_lambda_gp(1e-4);
            train(&ds, &cfg, 2).unwrap()
        };
        let without = train(&ds, &base, 2).unwrap();

        assert!(without.penalties.iter().all(|&p| p == 0.0));
        let first_active = with_penalty
            .penalties
            .iter()
            .position(|&p| p > 0.0)
            .expect("penalty should activate once the critic grows steep");
        // The two runs march in lockstep (identical batches, identical init)
        // until the iteration where the penalty first contributes a gradient.
        assert_eq!(
            with_penalty.critic_losses[..=first_active],
            without.critic_losses[..=first_active]
        );
        assert_ne!(
            with_penalty.critic_losses[first_active + 1..],
            without.critic_losses[first_active + 1..]
        );
    }

    #[test]
    fn nonfinite_loss_reports_iteration_and_stage() {
        let mut transitions = Vec::new();
        for i in 0..8 {
            transitions.push(Transition {
                state: StateRepr::Vector(vec![i as f64]),
                action: 0,
                rewards: vec![1e160],
                next_state: StateRepr::Vector(vec![i as f64 + 0.5]),
                done: false,
                initial_state: StateRepr::Vector(vec![0.0]),
                preference: None,
            });
        }
        let ds = TransitionDataset::from_transitions(
            "synthetic-overflow",
            "scripted",
            0,
            0.9,
            StateSpace::Vector(1),
            1,
            1,
            1,
            transitions,
        )
        .unwrap();
        let mut cfg = TrainConfig::new(
            HyperParams::new(1.0, 1.0, 0.9).unwrap(),
            LossMode::FairDice,
        );
        cfg.iterations = 5;
        cfg.batch_size = 4;
        cfg.hidden = vec![4];
        cfg.normalize_rewards = false;
        cfg.normalize_states = false;
        match train(&ds, &cfg, 0) {
            Err(FairdiceError::NonFinite { iteration, what }) => {
                assert_eq!(iteration, 0);
                assert!(what.contains("critic"), "diagnostic was: {what}");
            }
            other => panic!("expected a non-finite abort, got {other:?}"),
        }
    }

    #[test]
    fn artifact_bytes_round_trip() {
        let ds = group_fair_dataset(23);
        let cfg = small_config(LossMode::FairDice, 1.0);
        let artifact = train(&ds, &cfg, 1).unwrap();
        let bytes = artifact.to_bytes().unwrap();
        let back = TrainArtifact::from_bytes(&bytes).unwrap();
        assert_eq!(artifact, back);

        let path = std::env::temp_dir().join(format!(
            "fairdice-train-artifact-{}.bin",
            std::process::id()
        ));
        artifact.save(&path).unwrap();
        let loaded = TrainArtifact::load(&path).unwrap();
        std::fs::remove_file(&path).unwrap();
        assert_eq!(artifact, loaded);
    }

    #[test]
    fn artifact_parsing_rejects_corruption() {
        let ds = group_fair_dataset(29);
        let mut cfg = small_config(LossMode::PlainBC, 1.0);
        cfg.iterations = 3;
        let artifact = train(&ds, &cfg, 1).unwrap();
        let bytes = artifact.to_bytes().unwrap();

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(TrainArtifact::from_bytes(&bad_magic).is_err());

        let mut bad_version = bytes.clone();
        bad_version[4] = 99;
        assert!(TrainArtifact::from_bytes(&bad_version).is_err());

        assert!(TrainArtifact::from_bytes(&bytes[..bytes.len() - 3]).is_err());

        let mut trailing = bytes.clone();
        trailing.extend_from_slice(&[0u8; 5]);
        assert!(TrainArtifact::from_bytes(&trailing).is_err());
    }

    #[test]
    fn reconstructed_policy_is_a_distribution() {
        let ds = group_fair_dataset(31);
        let mut cfg = small_config(LossMode::FairDice, 1.0);
        cfg.iterations = 30;
        let artifact = train(&ds, &cfg, 2).unwrap();
        let policy = NeuralPolicy::from_artifact(&artifact).unwrap();
        assert_eq!(policy.n_actions(), 7);
        let obs = held_out_observations(5, 77);
        for o in &obs {
            let lp = policy.action_log_probs(o).unwrap();
            let total: f64 = lp.iter().map(|l| l.exp()).sum();
            assert_relative_eq!(total, 1.0, epsilon = 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            assert!(policy.act(&obs[0], &mut rng).unwrap() < 7);
        }
        // KL of a policy against itself is zero.
        let kl = mean_policy_kl(&policy, &policy, &obs).unwrap();
        assert_relative_eq!(kl, 0.0, epsilon = 1e-14);
    }

    /// Deterministic two-objective chain used to pin evaluation arithmetic.
    struct ChainSim;

    impl Rollable for ChainSim {
        type State = usize;

        fn reset(&self, _rng: &mut ChaCha8Rng) -> usize {
            0
        }

        fn observation(&self, state: &usize) -> Vec<f64> {
            vec![*state as f64]
        }

        fn step(&self, state: &usize, action: usize, _rng: &mut ChaCha8Rng) -> Result<RolloutStep<usize>> {
            if action >= 2 {
                return Err(FairdiceError::domain("chain has two actions"));
            }
            let next = state + 1;
            Ok(RolloutStep {
                next,
                rewards: vec![1.0, 2.0],
                done: next == 3,
            })
        }

        fn horizon(&self) -> usize {
            10
        }

        fn n_actions(&self) -> usize {
            2
        }

        fn num_objectives(&self) -> usize {
            2
        }
    }

    struct AlwaysAction(usize);

    impl<E: Rollable> RolloutPolicy<E> for AlwaysAction {
        fn choose(&self, _env: &E, _state: &E::State, _rng: &mut ChaCha8Rng) -> Result<usize> {
            Ok(self.0)
        }
    }

    #[test]
    fn deterministic_rollouts_have_zero_variance() {
        let report = evaluate_policy_mc(&ChainSim, &AlwaysAction(1), 8, 10, 0).unwrap();
        assert_eq!(report.n_rollouts(), 8);
        // Three steps of [1, 2] before the chain terminates.
        for r in 0..8 {
            assert_eq!(report.return_row(r), &[3.0, 6.0]);
        }
        assert_eq!(report.mean_returns, vec![3.0, 6.0]);
        assert_relative_eq!(report.utilitarian.mean, 9.0, epsilon = 1e-12);
        assert_eq!(report.utilitarian.ci_half_width, 0.0);
        assert_relative_eq!(report.jain.mean, 81.0 / 90.0, epsilon = 1e-12);
        assert_eq!(report.jain.ci_half_width, 0.0);
        assert_relative_eq!(report.nsw.mean, 3.0f64.ln() + 6.0f64.ln(), epsilon = 1e-12);
        assert_eq!(report.nsw.ci_half_width, 0.0);
        assert_eq!(report.nonpositive_nsw_rollouts, 0);
    }

    #[test]
    fn evaluation_is_seeded_and_respects_the_episode_cap() {
        let env = GroupFairEnv::fixed_membership();
        let a = evaluate_policy_mc(&env, &ReferencePolicyKind::Random, 5, 20, 42).unwrap();
        let b = evaluate_policy_mc(&env, &ReferencePolicyKind::Random, 5, 20, 42).unwrap();
        assert_eq!(a, b);
        let c = evaluate_policy_mc(&env, &ReferencePolicyKind::Random, 5, 20, 43).unwrap();
        assert_ne!(a.returns, c.returns);
        // Stochastic rollouts produce a nondegenerate confidence interval
        // that the same seed reproduces exactly.
        assert!(a.nsw.ci_half_width > 0.0);
        assert!(a.nsw.mean.is_finite());

        assert!(evaluate_policy_mc(&env, &ReferencePolicyKind::Random, 5, 501, 0).is_err());
        assert!(evaluate_policy_mc(&env, &ReferencePolicyKind::Random, 0, 20, 0).is_err());
        assert!(evaluate_policy_mc(&env, &ReferencePolicyKind::Random, 5, 0, 0).is_err());
    }

    #[test]
    fn reference_policies_plug_into_evaluation() {
        let env = GroupFairEnv::fixed_membership();
        // The biased allocator starves individuals outside group 0 relative
        // to the fair allocator, which shows up as a lower Jain index.
        let biased = evaluate_policy_mc(&env, &ReferencePolicyKind::Biased, 4, 60, 7).unwrap();
        let fair = evaluate_policy_mc(&env, &ReferencePolicyKind::Fair, 4, 60, 7).unwrap();
        assert!(
            fair.jain.mean > biased.jain.mean,
            "fair {} vs biased {}",
            fair.jain.mean,
            biased.jain.mean
        );
    }
}
