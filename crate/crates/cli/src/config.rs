//! Run configuration: defaults, JSON config files, and flag overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use ssrcnn_core::assignment::AssignConfig;
use ssrcnn_core::heads::ModelConfig;
use ssrcnn_core::losses::{FitOptions, FocalParams, Gamma, LossCoefficients};
use ssrcnn_core::metrics::{Averaging, EvalOptions};
use ssrcnn_core::synth::{PerturbModel, SceneConfig};

use crate::formats::read_json;

/// Evaluation protocol family. It picks the recall averaging (per-image
/// mean vs pooled over all ground-truth triplets) and the default
/// graph-constraint setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Vg,
    Oi,
}

impl Profile {
    pub fn averaging(self) -> Averaging {
        match self {
            Profile::Vg => Averaging::Macro,
            Profile::Oi => Averaging::Micro,
        }
    }

    pub fn default_graph_constraint(self) -> bool {
        matches!(self, Profile::Vg)
    }
}

/// Explicit on/off switch for `--graph-constraint`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

impl Toggle {
    pub fn as_bool(self) -> bool {
        matches!(self, Toggle::On)
    }
}

/// Focal-loss block of the config file. The focusing strength here is a
/// single fixed exponent; per-class adaptive values are derived by
/// `calibrate` from a frequency sidecar.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FocalConfig {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self { alpha: 0.25, gamma: 2.0 }
    }
}

impl FocalConfig {
    pub fn params(&self) -> FocalParams {
        FocalParams {
            alpha: self.alpha,
            gamma: Gamma::Fixed(self.gamma),
        }
    }
}

/// Descent options for `fit`. The step budget is deliberately smaller than
/// the library default so interactive runs stay quick; raise `steps` in a
/// config file for stubborn scenes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub steps: usize,
    pub step_size: f64,
    pub backtracking: bool,
    pub recall_k: usize,
    pub early_stop_recall: Option<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            step_size: 0.05,
            backtracking: true,
            recall_k: 20,
            early_stop_recall: Some(1.0),
        }
    }
}

/// Grid for the `calibrate` τ sweep: 0, step, 2·step, … up to `tau_max`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub tau_max: f64,
    pub tau_step: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { tau_max: 0.6, tau_step: 0.05 }
    }
}

/// The full resolved run configuration, embedded verbatim in every output
/// artifact. Defaults follow the reference training recipe: 300 triplet
/// queries, 6 cascaded heads, μ = 4, τ = 0.3, and the published loss
/// coefficient block.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub images: usize,
    pub queries: usize,
    pub heads: usize,
    pub mu: f64,
    pub tau: f64,
    pub k_at: Vec<usize>,
    pub profile: Profile,
    /// `None` defers to the profile default (vg → on, oi → off).
    pub graph_constraint: Option<bool>,
    /// Worker threads for per-image stages; `None` uses all cores. Not
    /// serialized: artifacts must be byte-identical across thread counts.
    #[serde(skip_serializing)]
    pub jobs: Option<usize>,
    /// Pixel canvas written by `gen` (square images).
    pub canvas: u32,
    pub model: ModelConfig,
    pub scene: SceneConfig,
    pub perturb: PerturbModel,
    pub coefficients: LossCoefficients,
    pub focal: FocalConfig,
    pub assign: AssignConfig,
    pub fit: FitConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            images: 8,
            queries: 300,
            heads: 6,
            mu: 4.0,
            tau: 0.3,
            k_at: vec![20, 50, 100],
            profile: Profile::Vg,
            graph_constraint: None,
            jobs: None,
            canvas: 1024,
            model: ModelConfig::default(),
            scene: SceneConfig::default(),
            perturb: PerturbModel::default(),
            coefficients: LossCoefficients::default(),
            focal: FocalConfig::default(),
            assign: AssignConfig::default(),
            fit: FitConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => read_json(p),
            None => Ok(Self::default()),
        }
    }

    /// Post-merge consistency: the head count drives the cascade depth, and
    /// the cheap scalar knobs are range-checked once here so subcommands
    /// can trust them.
    pub fn finalize(&mut self) -> Result<()> {
        if self.queries == 0 {
            bail!("queries must be positive");
        }
        if self.heads == 0 {
            bail!("heads must be positive");
        }
        if self.k_at.is_empty() || self.k_at.contains(&0) {
            bail!("k-at values must be positive and non-empty");
        }
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            bail!("mu must be a positive finite number");
        }
        if !self.tau.is_finite() {
            bail!("tau must be finite");
        }
        if self.canvas == 0 {
            bail!("canvas must be positive");
        }
        if !(self.sweep.tau_step > 0.0) || !(self.sweep.tau_max >= 0.0) {
            bail!("sweep grid requires tau_step > 0 and tau_max >= 0");
        }
        self.model.depth = self.heads;
        self.k_at.sort_unstable();
        self.k_at.dedup();
        Ok(())
    }

    pub fn focal_params(&self) -> FocalParams {
        self.focal.params()
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            steps: self.fit.steps,
            step_size: self.fit.step_size,
            backtracking: self.fit.backtracking,
            focal: self.focal_params(),
            assign: self.assign,
            recall_k: self.fit.recall_k,
            early_stop_recall: self.fit.early_stop_recall,
        }
    }

    pub fn graph_constraint(&self) -> bool {
        self.graph_constraint
            .unwrap_or_else(|| self.profile.default_graph_constraint())
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            ks: self.k_at.clone(),
            graph_constraint: self.graph_constraint(),
            averaging: self.profile.averaging(),
        }
    }
}

/// Flags shared by the artifact-producing subcommands.
#[derive(Debug, clap::Args)]
pub struct CommonArgs {
    /// Base random seed
    #[arg(long)]
    pub seed: Option<u64>,

    /// JSON config file; explicit flags override its fields
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads for per-image stages (default: all cores)
    #[arg(long, value_name = "N")]
    pub jobs: Option<usize>,

    /// Directory artifacts are written into
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
}

impl CommonArgs {
    /// Config-file values overlaid with the shared flags.
    pub fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::from_file(self.config.as_deref())
            .with_context(|| "loading config file".to_string())?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(jobs) = self.jobs {
            cfg.jobs = Some(jobs);
        }
        Ok(cfg)
    }
}
