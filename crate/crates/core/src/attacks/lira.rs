use serde::{Deserialize, Serialize};

use super::AttackReport;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::train::train;
use crate::nn::{predict_logits, softmax, MlpArchitecture, ParamSet, SgdConfig};
use crate::par::{self, ExecMode};

const P_CLAMP: f64 = 1e-6;

/// Shadow models for the likelihood-ratio attack. In the offline variant
/// every shadow is trained on fresh data, so every mask entry is `false`.
#[derive(Debug, Clone)]
pub struct ShadowEnsemble {
    pub shadow_count: usize,
    pub shadow_params: Vec<ParamSet>,
    /// `in_out_masks[s][i]`: whether population row `i` was in shadow `s`'s
    /// training data.
    pub in_out_masks: Vec<Vec<bool>>,
    pub seed: u64,
}

impl ShadowEnsemble {
    pub fn validate(&self, population_len: usize) -> Result<()> {
        if self.shadow_params.len() != self.shadow_count || self.in_out_masks.len() != self.shadow_count {
            return Err(Error::Internal("shadow ensemble counts disagree".into()));
        }
        if self.in_out_masks.iter().any(|m| m.len() != population_len) {
            return Err(Error::rejected("shadow membership masks do not match the population"));
        }
        Ok(())
    }
}

/// Trains `count` shadows; shadow `k` sees `draw(k)` and starts from a
/// fresh initialization seeded from `seed` and `k`.
#[allow(clippy::too_many_arguments)]
pub fn train_shadow_ensemble<D>(
    arch: &MlpArchitecture,
    draw: D,
    sgd: &SgdConfig,
    epochs: usize,
    count: usize,
    population_len: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<ShadowEnsemble>
where
    D: Fn(usize) -> LabeledDataset + Sync + Send,
{
    let trained = par::map_range(mode, count, |k| {
        let data = draw(k);
        let s = seed.wrapping_add(1 + k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut p = arch.init_params_with_seed(s);
        train(&mut p, arch, &data, sgd, epochs, s)?;
        Ok(p)
    });
    let shadow_params = trained.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(ShadowEnsemble {
        shadow_count: count,
        shadow_params,
        in_out_masks: vec![vec![false; population_len]; count],
        seed,
    })
}

/// `ln(p / (1 − p))` of the clamped true-label probability, per row.
pub fn logit_confidence(params: &ParamSet, arch: &MlpArchitecture, data: &LabeledDataset) -> Result<Vec<f64>> {
    let probs = softmax(&predict_logits(params, arch, &data.features)?);
    Ok(data
        .labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let p = probs.get(i, y).clamp(P_CLAMP, 1.0 - P_CLAMP);
            (p / (1.0 - p)).ln()
        })
        .collect())
}

/// Offline likelihood-ratio scores: `(φ(p_victim) − μ_out) / σ_out` per
/// population row, with the Gaussian fitted to the confidences of the
/// shadows that did not train on that row.
pub fn mia_lira_scores(
    ensemble: &ShadowEnsemble,
    arch: &MlpArchitecture,
    victim: &ParamSet,
    population: &LabeledDataset,
) -> Result<Vec<f64>> {
    ensemble.validate(population.len())?;
    let victim_conf = logit_confidence(victim, arch, population)?;
    let shadow_conf = ensemble
        .shadow_params
        .iter()
        .map(|p| logit_confidence(p, arch, population))
        .collect::<Result<Vec<_>>>()?;
    let mut scores = Vec::with_capacity(population.len());
    for (i, &v) in victim_conf.iter().enumerate() {
        let outs: Vec<f64> = (0..ensemble.shadow_count)
            .filter(|&s| !ensemble.in_out_masks[s][i])
            .map(|s| shadow_conf[s][i])
            .collect();
        if outs.len() < 2 {
            return Err(Error::DegenerateFit(format!("row {i} has fewer than two out-shadows")));
        }
        let mean = outs.iter().sum::<f64>() / outs.len() as f64;
        let var = outs.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (outs.len() - 1) as f64;
        if var <= 0.0 {
            return Err(Error::DegenerateFit(format!("row {i}: shadow confidences have zero spread")));
        }
        scores.push((v - mean) / var.sqrt());
    }
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReaSampleConfig {
    /// `N_r`: rows of the inference set kept as the pseudo retain set.
    pub pseudo_retain_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ReaSampleConfig {
    fn default() -> Self {
        Self {
            pseudo_retain_size: 100,
            epochs: 5,
            learning_rate: 0.005,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Indices of the `n` highest scores, ties broken by lower index.
pub fn top_n(scores: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx.sort_unstable();
    idx
}

/// Sample-wise reminiscence: score the inference set with the likelihood
/// ratio test, fine-tune a victim copy on the top-`N_r` rows, then rescore.
pub fn rea_samplewise(
    victim: &ParamSet,
    arch: &MlpArchitecture,
    inference_set: &LabeledDataset,
    cfg: &ReaSampleConfig,
    ensemble: &ShadowEnsemble,
) -> Result<AttackReport> {
    if cfg.pseudo_retain_size > inference_set.len() {
        return Err(Error::RejectedSpec(format!(
            "pseudo retain size {} exceeds the inference set ({})",
            cfg.pseudo_retain_size,
            inference_set.len()
        )));
    }
    let first = mia_lira_scores(ensemble, arch, victim, inference_set)?;
    let scores = if cfg.epochs == 0 {
        first
    } else {
        let pseudo = inference_set.subset(&top_n(&first, cfg.pseudo_retain_size), "pseudo_retain");
        let mut p = victim.clone();
        let sgd = SgdConfig {
            batch_size: cfg.batch_size,
            ..SgdConfig::with_lr(cfg.learning_rate)
        };
        train(&mut p, arch, &pseudo, &sgd, cfg.epochs, cfg.seed)?;
        mia_lira_scores(ensemble, arch, &p, inference_set)?
    };
    Ok(AttackReport::from_scores("rea_sample", &scores))
}

/// Plain offline LiRA wrapped as a report.
pub fn mia_lira(
    ensemble: &ShadowEnsemble,
    arch: &MlpArchitecture,
    victim: &ParamSet,
    population: &LabeledDataset,
) -> Result<AttackReport> {
    let scores = mia_lira_scores(ensemble, arch, victim, population)?;
    Ok(AttackReport::from_scores("mia_lira", &scores))
}
