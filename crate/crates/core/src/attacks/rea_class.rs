use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ResonanceEntry;
use crate::data::{LabeledDataset, UnlearnSplit};
use crate::error::{Error, Result};
use crate::nn::{
    backward, cross_entropy, forward, predict_logits, sgd_step, soft_cross_entropy, softmax, MlpArchitecture,
    ParamSet, SgdConfig, Velocity,
};
use crate::par::{self, ExecMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReaClassConfig {
    pub learning_rates: Vec<f64>,
    pub idx_max: usize,
    /// Fraction of the inferred set that must be predicted as `unlearn_label`.
    pub convergence_threshold: f64,
    /// Reference-set size divided by inferred-set size.
    pub reference_ratio: f64,
    /// Rows of the candidate class fed to the fine-tuning.
    pub inferred_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Label slot the inferred set is pushed toward.
    pub unlearn_label: usize,
    pub seed: u64,
}

impl Default for ReaClassConfig {
    fn default() -> Self {
        Self {
            learning_rates: vec![0.001, 0.005, 0.007, 0.01],
            idx_max: 75,
            convergence_threshold: 0.75,
            reference_ratio: 6.0,
            inferred_size: 20,
            momentum: 0.9,
            weight_decay: 5e-4,
            unlearn_label: 0,
            seed: 0,
        }
    }
}

impl ReaClassConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rates.is_empty() {
            return Err(Error::RejectedSpec("ReA needs at least one learning rate".into()));
        }
        if self.learning_rates.iter().any(|&lr| !(lr >= 0.0 && lr.is_finite())) {
            return Err(Error::RejectedSpec("ReA learning rates must be finite and non-negative".into()));
        }
        if !(self.convergence_threshold > 0.0 && self.convergence_threshold < 1.0) {
            return Err(Error::RejectedSpec("convergence_threshold must lie in (0, 1)".into()));
        }
        if self.idx_max == 0 {
            return Err(Error::RejectedSpec("idx_max must be positive".into()));
        }
        if !(self.reference_ratio >= 0.0) {
            return Err(Error::RejectedSpec("reference_ratio must be non-negative".into()));
        }
        Ok(())
    }
}

fn converged(params: &ParamSet, arch: &MlpArchitecture, inferred: &LabeledDataset, label: usize, thr: f64) -> Result<bool> {
    let logits = predict_logits(params, arch, &inferred.features)?;
    let hits = (0..inferred.len()).filter(|&i| logits.argmax_row(i) == label).count();
    Ok(hits as f64 / inferred.len() as f64 > thr)
}

/// Iterations of reminiscence fine-tuning until the inferred set is
/// predicted as `cfg.unlearn_label` above the convergence threshold;
/// `cfg.idx_max` when that never happens. A victim that already satisfies
/// the threshold gets index 1.
///
/// Each iteration is one full-batch step on
/// `CE(inferred → y_u) + CE(reference → initial softmax)`.
pub fn resonance_index(
    victim: &ParamSet,
    arch: &MlpArchitecture,
    inferred: &LabeledDataset,
    reference: &LabeledDataset,
    lr: f64,
    cfg: &ReaClassConfig,
) -> Result<usize> {
    if inferred.is_empty() {
        return Err(Error::rejected("resonance index needs a non-empty inferred set"));
    }
    let y_u = cfg.unlearn_label;
    if y_u >= arch.class_count() {
        return Err(Error::RejectedSpec(format!("unlearn label {y_u} outside the output layer")));
    }
    let thr = cfg.convergence_threshold;
    if converged(victim, arch, inferred, y_u, thr)? {
        return Ok(1);
    }
    let x = inferred.features.vstack(&reference.features)?;
    let n_inf = inferred.len();
    let n_ref = reference.len();
    let targets_inf = vec![y_u; n_inf];
    let frozen = if n_ref > 0 {
        Some(softmax(&predict_logits(victim, arch, &reference.features)?))
    } else {
        None
    };
    let sgd = SgdConfig {
        learning_rate: lr,
        momentum: cfg.momentum,
        weight_decay: cfg.weight_decay,
        ..SgdConfig::default()
    };
    let mut params = victim.clone();
    let mut velocity = Velocity::zeros_like(&params);
    let context = format!("reminiscence at lr {lr}");
    for i in 1..=cfg.idx_max {
        let trace = forward(&params, arch, &x)?;
        let logits = trace.logits();
        let idx_inf: Vec<usize> = (0..n_inf).collect();
        let (l_inf, g_inf) = cross_entropy(&logits.select_rows(&idx_inf), &targets_inf)?;
        let mut loss = l_inf;
        let mut grad = g_inf;
        if let Some(t) = &frozen {
            let idx_ref: Vec<usize> = (n_inf..n_inf + n_ref).collect();
            let (l_ref, g_ref) = soft_cross_entropy(&logits.select_rows(&idx_ref), t)?;
            loss += l_ref;
            grad = grad.vstack(&g_ref)?;
        }
        if !loss.is_finite() {
            return Err(Error::divergence(context, format!("non-finite loss at iteration {i}")));
        }
        let grads = backward(&params, arch, &trace, &grad)?;
        sgd_step(&mut params, &grads, &sgd, lr, &mut velocity).map_err(|e| Error::divergence(&context, e.to_string()))?;
        if converged(&params, arch, inferred, y_u, thr)? {
            return Ok(i);
        }
    }
    Ok(cfg.idx_max)
}

/// `1 − Σ_j Idx_r(lr_j) / (J · Idx_max)`.
pub fn aggregate_confidence(indices: &[usize], idx_max: usize) -> f64 {
    if indices.is_empty() || idx_max == 0 {
        return 0.0;
    }
    let total: usize = indices.iter().sum();
    (1.0 - total as f64 / (indices.len() * idx_max) as f64).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaClassOutcome {
    pub confidence: f64,
    pub indices: Vec<ResonanceEntry>,
}

/// Multi-learning-rate class-wise ReA confidence for one candidate class.
/// A learning rate whose fine-tuning diverges contributes `Idx_max`.
pub fn rea_classwise(
    victim: &ParamSet,
    arch: &MlpArchitecture,
    candidate: &LabeledDataset,
    reference: &LabeledDataset,
    cfg: &ReaClassConfig,
    mode: ExecMode,
) -> Result<ReaClassOutcome> {
    cfg.validate()?;
    let runs = par::map(mode, &cfg.learning_rates, |&lr| {
        match resonance_index(victim, arch, candidate, reference, lr, cfg) {
            Ok(idx) => Ok((lr, idx, false)),
            Err(Error::Divergence { .. }) => Ok((lr, cfg.idx_max, true)),
            Err(e) => Err(e),
        }
    });
    let mut indices = Vec::with_capacity(runs.len());
    for r in runs {
        let (lr, idx_r, diverged) = r?;
        indices.push(ResonanceEntry {
            target: candidate.name.clone(),
            lr,
            idx_r,
            diverged,
        });
    }
    let raw: Vec<usize> = indices.iter().map(|e| e.idx_r).collect();
    Ok(ReaClassOutcome {
        confidence: aggregate_confidence(&raw, cfg.idx_max),
        indices,
    })
}

/// Inferred and reference sets for one candidate class of a class-wise
/// split. The inferred rows come from the candidate's rows in the unlearned
/// set or the OOD pool; the reference rows from the OOD pool classes other
/// than the candidate.
pub fn class_probe(
    split: &UnlearnSplit,
    candidate: usize,
    cfg: &ReaClassConfig,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let seed = cfg.seed ^ (candidate as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source = if split.unlearned.labels.contains(&candidate) {
        &split.unlearned
    } else {
        &split.ood_pool
    };
    let mut rows = source.rows_with_labels(&[candidate]);
    if rows.is_empty() {
        return Err(Error::RejectedSpec(format!("candidate class {candidate} has no attack rows")));
    }
    rows.shuffle(&mut rng);
    rows.truncate(cfg.inferred_size.max(1));
    rows.sort_unstable();
    let inferred = source.subset(&rows, format!("class_{candidate}"));

    let others: Vec<usize> = split
        .ood_pool
        .classes_present()
        .into_iter()
        .filter(|&c| c != candidate)
        .collect();
    let mut ref_rows = split.ood_pool.rows_with_labels(&others);
    ref_rows.shuffle(&mut rng);
    ref_rows.truncate((cfg.reference_ratio * inferred.len() as f64).round() as usize);
    ref_rows.sort_unstable();
    let reference = split.ood_pool.subset(&ref_rows, format!("reference_{candidate}"));
    Ok((inferred, reference))
}
