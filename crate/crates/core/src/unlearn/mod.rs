//! Unlearning algorithms.
//!
//! Every method takes the original parameters (or, for `retrain`, only the
//! architecture) plus an [`UnlearnSplit`], and returns an [`UnlearnOutcome`]
//! with the final parameters, a per-epoch log and the wall-clock run time.
//! All methods are deterministic given their inputs and seed.

mod baselines;
mod our;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use baselines::{finetune_ft, gradient_ascent_ga, l1_sparse_ft, random_label_rl, retrain, resample_labels};
pub use our::{
    mean_squared_cosine, orthogonality_loss, our, our_phase1_orthogonal, our_phase2_replay, random_model_delta,
};

use crate::data::UnlearnSplit;
use crate::error::{Error, Result};
use crate::nn::{MlpArchitecture, ParamSet, SgdConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnlearnMethod {
    Retrain,
    Ft,
    Ga,
    Rl,
    L1Sparse,
    Our,
}

impl UnlearnMethod {
    pub const ALL: [UnlearnMethod; 6] = [
        UnlearnMethod::Retrain,
        UnlearnMethod::Ft,
        UnlearnMethod::Ga,
        UnlearnMethod::Rl,
        UnlearnMethod::L1Sparse,
        UnlearnMethod::Our,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            UnlearnMethod::Retrain => "retrain",
            UnlearnMethod::Ft => "ft",
            UnlearnMethod::Ga => "ga",
            UnlearnMethod::Rl => "rl",
            UnlearnMethod::L1Sparse => "l1_sparse",
            UnlearnMethod::Our => "our",
        }
    }
}

impl std::str::FromStr for UnlearnMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        UnlearnMethod::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| Error::rejected(format!("unknown unlearning method `{s}`")))
    }
}

impl std::fmt::Display for UnlearnMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Phase-1 objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrthObjective {
    /// Squared inner product between current and snapshot features.
    #[default]
    SquaredInnerProduct,
    /// Squared L2 distance between current and snapshot features (ablation).
    L2Distance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnlearnConfig {
    pub method: UnlearnMethod,
    /// Epochs of the only phase for single-phase methods; `e₁` for OUR.
    pub epochs_phase1: usize,
    /// `e₂` (OUR replay).
    pub epochs_phase2: usize,
    pub sgd: SgdConfig,
    pub sgd_phase2: SgdConfig,
    pub delta_threshold: f64,
    /// Replace `delta_threshold` with Δ_max between two fresh random models.
    pub delta_from_random_models: bool,
    pub per_batch_delta_check: bool,
    pub orth_layers: Vec<usize>,
    pub orth_objective: OrthObjective,
    /// L2-normalize features before the inner product.
    pub normalize_features: bool,
    /// Relative scale of the seeded perturbation applied at phase-1 entry.
    /// With normalized features the entry point is a stationary point of
    /// the orthogonality loss, so a nonzero jitter is needed to leave it.
    pub phase1_jitter: f64,
    pub l1_lambda: f64,
    pub ga_clip_norm: f64,
    pub seed: u64,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        Self {
            method: UnlearnMethod::Ft,
            epochs_phase1: 5,
            epochs_phase2: 0,
            sgd: SgdConfig::with_lr(0.01),
            sgd_phase2: SgdConfig::with_lr(0.01),
            delta_threshold: 5e-3,
            delta_from_random_models: false,
            per_batch_delta_check: false,
            orth_layers: Vec::new(),
            orth_objective: OrthObjective::default(),
            normalize_features: true,
            phase1_jitter: 1e-2,
            l1_lambda: 0.0,
            ga_clip_norm: 10.0,
            seed: 0,
        }
    }
}

impl UnlearnConfig {
    /// Desk-scale defaults for `method` on `arch`.
    pub fn defaults_for(method: UnlearnMethod, arch: &MlpArchitecture) -> Self {
        let base = Self {
            method,
            ..Self::default()
        };
        match method {
            UnlearnMethod::Retrain => Self {
                epochs_phase1: 30,
                sgd: SgdConfig::with_lr(0.05),
                ..base
            },
            UnlearnMethod::Ft => Self {
                epochs_phase1: 5,
                sgd: SgdConfig::with_lr(0.01),
                ..base
            },
            UnlearnMethod::Ga => Self {
                epochs_phase1: 1,
                sgd: SgdConfig {
                    momentum: 0.0,
                    ..SgdConfig::with_lr(0.1)
                },
                ..base
            },
            UnlearnMethod::Rl => Self {
                epochs_phase1: 1,
                sgd: SgdConfig::with_lr(0.01),
                ..base
            },
            UnlearnMethod::L1Sparse => Self {
                epochs_phase1: 5,
                sgd: SgdConfig::with_lr(0.01),
                l1_lambda: 1e-4,
                ..base
            },
            UnlearnMethod::Our => Self {
                epochs_phase1: 8,
                epochs_phase2: 8,
                sgd: SgdConfig {
                    momentum: 0.9,
                    weight_decay: 0.0,
                    ..SgdConfig::with_lr(0.1)
                },
                delta_threshold: 0.05,
                phase1_jitter: 0.02,
                sgd_phase2: SgdConfig {
                    decay_factor: 0.5,
                    decay_epochs: vec![3],
                    ..SgdConfig::with_lr(0.02)
                },
                orth_layers: arch.deep_probe_layers(),
                l1_lambda: 1e-5,
                ..base
            },
        }
    }

    pub fn validate(&self, arch: &MlpArchitecture) -> Result<()> {
        self.sgd.validate()?;
        if self.method == UnlearnMethod::Our {
            self.sgd_phase2.validate()?;
            if self.orth_layers.is_empty() {
                return Err(Error::RejectedSpec("OUR needs at least one orthogonality layer".into()));
            }
            if let Some(&l) = self.orth_layers.iter().find(|&&l| l >= arch.hidden_count()) {
                return Err(Error::RejectedSpec(format!(
                    "orth layer {l} is not a hidden layer (model has {})",
                    arch.hidden_count()
                )));
            }
        }
        if !(self.delta_threshold >= 0.0) {
            return Err(Error::RejectedSpec("delta_threshold must be non-negative".into()));
        }
        if !(self.phase1_jitter >= 0.0) {
            return Err(Error::RejectedSpec("phase1_jitter must be non-negative".into()));
        }
        if self.l1_lambda < 0.0 {
            return Err(Error::RejectedSpec("l1_lambda must be non-negative".into()));
        }
        if !(self.ga_clip_norm > 0.0) {
            return Err(Error::RejectedSpec("ga_clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// One log line: `epoch` 0 records the state before any update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: u8,
    pub epoch: usize,
    pub loss: f64,
    pub delta_max: Option<f64>,
    pub lr: f64,
    pub early_stop: bool,
}

#[derive(Debug, Clone)]
pub struct UnlearnOutcome {
    pub final_params: ParamSet,
    pub rte_seconds: f64,
    pub phase_log: Vec<PhaseRecord>,
    pub method_tag: String,
}

impl UnlearnOutcome {
    pub const LOG_HEADER: &'static str = "epoch,phase,loss,delta_max,lr";

    pub fn phase_log_csv(&self) -> String {
        let mut s = String::from(Self::LOG_HEADER);
        s.push('\n');
        for r in &self.phase_log {
            let d = r.delta_max.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.phase, r.loss, d, r.lr));
        }
        s
    }

    pub fn write_phase_log(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.phase_log_csv().as_bytes())?;
        Ok(())
    }
}

/// Runs the configured method against `original`.
pub fn run_unlearning(
    original: &ParamSet,
    arch: &MlpArchitecture,
    split: &UnlearnSplit,
    cfg: &UnlearnConfig,
) -> Result<UnlearnOutcome> {
    cfg.validate(arch)?;
    let e = cfg.epochs_phase1;
    match cfg.method {
        UnlearnMethod::Retrain => retrain(arch, split, &cfg.sgd, e, cfg.seed),
        UnlearnMethod::Ft => finetune_ft(original, arch, split, &cfg.sgd, e, cfg.seed),
        UnlearnMethod::Ga => gradient_ascent_ga(original, arch, split, &cfg.sgd, e, cfg.ga_clip_norm, cfg.seed),
        UnlearnMethod::Rl => random_label_rl(original, arch, split, &cfg.sgd, e, cfg.seed),
        UnlearnMethod::L1Sparse => l1_sparse_ft(original, arch, split, &cfg.sgd, e, cfg.l1_lambda, cfg.seed),
        UnlearnMethod::Our => our(original, arch, split, cfg),
    }
}

pub(crate) fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed().as_secs_f64()))
}
