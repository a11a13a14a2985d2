use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::cross_entropy;
use super::mlp::{backward, forward, MlpArchitecture};
use super::optim::{sgd_step, SgdConfig, Velocity};
use super::params::{GradSet, ParamSet};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Shuffled minibatch order for one epoch.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    idx.shuffle(&mut rng);
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Mean CE loss and gradient over the given rows of `data`.
pub fn batch_ce_gradient(
    params: &ParamSet,
    arch: &MlpArchitecture,
    data: &LabeledDataset,
    rows: &[usize],
) -> Result<(f64, GradSet)> {
    let x = data.features.select_rows(rows);
    let y: Vec<usize> = rows.iter().map(|&i| data.labels[i]).collect();
    let trace = forward(params, arch, &x)?;
    let (loss, g) = cross_entropy(trace.logits(), &y)?;
    let grads = backward(params, arch, &trace, &g)?;
    Ok((loss, grads))
}

/// Generic epoch loop: `objective` maps a batch of row indices to
/// `(loss, gradient)`; the optimizer applies the SGD update.
pub fn run_epochs<F>(
    params: &mut ParamSet,
    sgd: &SgdConfig,
    epochs: usize,
    rows: usize,
    seed: u64,
    context: &str,
    mut objective: F,
) -> Result<Vec<EpochRecord>>
where
    F: FnMut(&ParamSet, &[usize]) -> Result<(f64, GradSet)>,
{
    sgd.validate()?;
    let mut velocity = Velocity::zeros_like(params);
    let mut log = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        let lr = sgd.lr_at_epoch(epoch);
        let mut total = 0.0;
        let mut batches = 0usize;
        for batch in epoch_batches(rows, sgd.batch_size, seed, epoch) {
            let (loss, grads) = objective(params, &batch)?;
            if !loss.is_finite() {
                return Err(Error::divergence(context, format!("non-finite loss at epoch {epoch}")));
            }
            sgd_step(params, &grads, sgd, lr, &mut velocity)
                .map_err(|e| Error::divergence(context, e.to_string()))?;
            total += loss;
            batches += 1;
        }
        log.push(EpochRecord {
            epoch,
            loss: if batches == 0 { 0.0 } else { total / batches as f64 },
            lr,
        });
    }
    Ok(log)
}

/// Supervised cross-entropy training on `data`.
pub fn train(
    params: &mut ParamSet,
    arch: &MlpArchitecture,
    data: &LabeledDataset,
    sgd: &SgdConfig,
    epochs: usize,
    seed: u64,
) -> Result<Vec<EpochRecord>> {
    run_epochs(params, sgd, epochs, data.len(), seed, "train", |p, rows| {
        batch_ce_gradient(p, arch, data, rows)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_every_row_once() {
        let b = epoch_batches(103, 10, 4, 2);
        assert_eq!(b.len(), 11);
        let mut all: Vec<usize> = b.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, (0..103).collect::<Vec<_>>());
        assert_ne!(epoch_batches(50, 50, 4, 1), epoch_batches(50, 50, 4, 2));
    }
}
