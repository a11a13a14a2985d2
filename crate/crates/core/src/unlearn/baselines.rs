use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{timed, PhaseRecord, UnlearnOutcome};
use crate::data::{LabeledDataset, UnlearnSplit};
use crate::error::{Error, Result};
use crate::nn::train::{batch_ce_gradient, run_epochs, EpochRecord};
use crate::nn::{clip_grad_norm, cross_entropy, predict_logits, MlpArchitecture, ParamSet, SgdConfig};

pub(crate) fn mean_ce(params: &ParamSet, arch: &MlpArchitecture, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let logits = predict_logits(params, arch, &data.features)?;
    Ok(cross_entropy(&logits, &data.labels)?.0)
}

pub(crate) fn to_phase_log(phase: u8, initial_loss: f64, initial_lr: f64, log: Vec<EpochRecord>) -> Vec<PhaseRecord> {
    let mut out = vec![PhaseRecord {
        phase,
        epoch: 0,
        loss: initial_loss,
        delta_max: None,
        lr: initial_lr,
        early_stop: false,
    }];
    out.extend(log.into_iter().map(|r| PhaseRecord {
        phase,
        epoch: r.epoch,
        loss: r.loss,
        delta_max: None,
        lr: r.lr,
        early_stop: false,
    }));
    out
}

fn outcome(tag: &str, params: ParamSet, log: Vec<PhaseRecord>, secs: f64) -> UnlearnOutcome {
    UnlearnOutcome {
        final_params: params,
        rte_seconds: secs,
        phase_log: log,
        method_tag: tag.to_owned(),
    }
}

/// Exact unlearning: fresh initialization trained on the retained set only.
pub fn retrain(
    arch: &MlpArchitecture,
    split: &UnlearnSplit,
    sgd: &SgdConfig,
    epochs: usize,
    seed: u64,
) -> Result<UnlearnOutcome> {
    let ((params, log), secs) = timed(|| {
        let mut params = arch.init_params_with_seed(seed);
        let init_loss = mean_ce(&params, arch, &split.retained)?;
        let log = run_epochs(&mut params, sgd, epochs, split.retained.len(), seed, "retrain", |p, rows| {
            batch_ce_gradient(p, arch, &split.retained, rows)
        })?;
        Ok((params, to_phase_log(1, init_loss, sgd.learning_rate, log)))
    })?;
    Ok(outcome("retrain", params, log, secs))
}

/// Continues training on the retained set.
pub fn finetune_ft(
    params: &ParamSet,
    arch: &MlpArchitecture,
    split: &UnlearnSplit,
    sgd: &SgdConfig,
    epochs: usize,
    seed: u64,
) -> Result<UnlearnOutcome> {
    l1_sparse_ft_tagged(params, arch, split, sgd, epochs, 0.0, seed, "ft")
}

/// Fine-tuning on the retained set with an added `l1_lambda · ‖θ‖₁` penalty
/// (subgradient `sign(θ)`, zero at zero).
pub fn l1_sparse_ft(
    params: &ParamSet,
    arch: &MlpArchitecture,
    split: &UnlearnSplit,
    sgd: &SgdConfig,
    epochs: usize,
    l1_lambda: f64,
    seed: u64,
) -> Result<UnlearnOutcome> {
    l1_sparse_ft_tagged(params, arch, split, sgd, epochs, l1_lambda, seed, "l1_sparse")
}

pub(crate) fn add_l1_subgradient(grads: &mut ParamSet, params: &ParamSet, lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    for i in 0..grads.len() {
        let p = params.tensor(i).values();
        for (g, &v) in grads.tensor_mut(i).values_mut().iter_mut().zip(p) {
            if v > 0.0 {
                *g += lambda;
            } else if v < 0.0 {
                *g -= lambda;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn l1_sparse_ft_tagged(
    params: &ParamSet,
    arch: &MlpArchitecture,
    split: &UnlearnSplit,
    sgd: &SgdConfig,
    epochs: usize,
    l1_lambda: f64,
    seed: u64,
    tag: &str,
) -> Result<UnlearnOutcome> {
    if l1_lambda < 0.0 {
        return Err(Error::RejectedSpec("l1_lambda must be non-negative".into()));
    }
    let ((out, log), secs) = timed(|| {
        let mut p = params.clone();
        let init_loss = mean_ce(&p, arch, &split.retained)?;
        let log = run_epochs(&mut p, sgd, epochs, split.retained.len(), seed, tag, |cur, rows| {
            let (loss, mut g) = batch_ce_gradient(cur, arch, &split.retained, rows)?;
            add_l1_subgradient(&mut g, cur, l1_lambda);
            Ok((loss, g))
        })?;
        Ok((p, to_phase_log(1, init_loss, sgd.learning_rate, log)))
    })?;
    Ok(outcome(tag, out, log, secs))
}

/// Ascends the cross-entropy on the unlearned set. Each step's gradient is
/// clipped to global norm `clip_norm`.
pub fn gradient_ascent_ga(
    params: &ParamSet,
    arch: &MlpArchitecture,
    split: &UnlearnSplit,
    sgd: &SgdConfig,
    epochs: usize,
    clip_norm: f64,
    seed: u64,
) -> Result<UnlearnOutcome> {
    let ((out, log), secs) = timed(|| {
        let mut p = params.clone();
        let init_loss = mean_ce(&p, arch, &split.unlearned)?;
        let log = run_epochs(&mut p, sgd, epochs, split.unlearned.len(), seed, "ga", |cur, rows| {
            let (loss, mut g) = batch_ce_gradient(cur, arch, &split.unlearned, rows)?;
            g.scale(-1.0);
            clip_grad_norm(&mut g, clip_norm);
            Ok((loss, g))
        })?;
        Ok((p, to_phase_log(1, init_loss, sgd.learning_rate, log)))
    })?;
    Ok(outcome("ga", out, log, secs))
}

/// Uniformly resampled labels, each different from the true one, drawn from
/// the classes present in `train_full`.
pub fn resample_labels(split: &UnlearnSplit, seed: u64) -> Result<Vec<usize>> {
    let classes: Vec<usize> = split.train_full.classes_present().into_iter().collect();
    if classes.len() < 2 {
        return Err(Error::RejectedSpec("random labels need at least two training classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_1AB3);
    Ok(split
        .unlearned
        .labels
        .iter()
        .map(|&y| {
            let others: Vec<usize> = classes.iter().copied().filter(|&c| c != y).collect();
            others[rng.random_range(0..others.len())]
        })
        .collect())
}

/// Trains on the unlearned set with random wrong labels, mixing in one
/// retained batch per unlearned batch.
pub fn random_label_rl(
    params: &ParamSet,
    arch: &MlpArchitecture,
    split: &UnlearnSplit,
    sgd: &SgdConfig,
    epochs: usize,
    seed: u64,
) -> Result<UnlearnOutcome> {
    let random_labels = resample_labels(split, seed)?;
    let ((out, log), secs) = timed(|| {
        let forget = LabeledDataset {
            labels: random_labels.clone(),
            ..split.unlearned.clone()
        };
        let mut p = params.clone();
        let init_loss = mean_ce(&p, arch, &forget)?;
        let retained = &split.retained;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA11C_E5ED);
        let mut order: Vec<usize> = (0..retained.len()).collect();
        order.shuffle(&mut rng);
        let mut cursor = 0usize;
        let log = run_epochs(&mut p, sgd, epochs, forget.len(), seed, "rl", |cur, rows| {
            let mut x = forget.features.select_rows(rows);
            let mut y: Vec<usize> = rows.iter().map(|&i| forget.labels[i]).collect();
            if !order.is_empty() {
                let take = sgd.batch_size.min(order.len());
                let mut r_rows = Vec::with_capacity(take);
                for _ in 0..take {
                    if cursor == order.len() {
                        order.shuffle(&mut rng);
                        cursor = 0;
                    }
                    r_rows.push(order[cursor]);
                    cursor += 1;
                }
                x = x.vstack(&retained.features.select_rows(&r_rows))?;
                y.extend(r_rows.iter().map(|&i| retained.labels[i]));
            }
            let trace = crate::nn::forward(cur, arch, &x)?;
            let (loss, g) = cross_entropy(trace.logits(), &y)?;
            Ok((loss, crate::nn::backward(cur, arch, &trace, &g)?))
        })?;
        Ok((p, to_phase_log(1, init_loss, sgd.learning_rate, log)))
    })?;
    Ok(outcome("rl", out, log, secs))
}
