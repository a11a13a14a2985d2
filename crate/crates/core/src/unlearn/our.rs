use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::baselines::{add_l1_subgradient, mean_ce, to_phase_log};
use super::{timed, OrthObjective, PhaseRecord, UnlearnConfig, UnlearnOutcome};
use crate::data::{LabeledDataset, UnlearnSplit};
use crate::error::{Error, Result};
use crate::nn::train::{batch_ce_gradient, epoch_batches, run_epochs};
use crate::nn::{
    backward_with_features, forward, param_delta, sgd_step, squared_cosine, MlpArchitecture, ParamSet, Tensor2D,
    Velocity,
};

/// Snapshot features `F_l(x; θ⁰)` for every orth layer, optionally
/// L2-normalized row by row.
struct Snapshot {
    layers: Vec<usize>,
    features: Vec<Tensor2D>,
}

impl Snapshot {
    fn capture(
        params: &ParamSet,
        arch: &MlpArchitecture,
        data: &LabeledDataset,
        layers: &[usize],
        normalize: bool,
    ) -> Result<Self> {
        let trace = forward(params, arch, &data.features)?;
        let mut features = Vec::with_capacity(layers.len());
        for &l in layers {
            let mut f = trace
                .per_layer_outputs
                .get(l)
                .filter(|_| l + 1 < trace.layer_count())
                .ok_or_else(|| Error::RejectedSpec(format!("layer {l} is not a hidden layer")))?
                .clone();
            if normalize {
                for r in 0..f.rows() {
                    let row = f.row_mut(r);
                    let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if n > 0.0 {
                        row.iter_mut().for_each(|v| *v /= n);
                    }
                }
            }
            features.push(f);
        }
        Ok(Self {
            layers: layers.to_vec(),
            features,
        })
    }
}

/// Per-example loss term and its gradient with respect to the current
/// feature `a`, given the (possibly normalized) snapshot feature `b`.
/// `None` marks a degenerate pair that is skipped.
fn term(a: &[f64], b: &[f64], objective: OrthObjective, normalize: bool, grad: &mut [f64]) -> Option<f64> {
    match objective {
        OrthObjective::L2Distance => {
            let mut loss = 0.0;
            for ((g, &x), &y) in grad.iter_mut().zip(a).zip(b) {
                loss += (x - y) * (x - y);
                *g = 2.0 * (x - y);
            }
            Some(loss)
        }
        OrthObjective::SquaredInnerProduct => {
            let c: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            if !normalize {
                for (g, &y) in grad.iter_mut().zip(b) {
                    *g = 2.0 * c * y;
                }
                return Some(c * c);
            }
            let n2: f64 = a.iter().map(|v| v * v).sum();
            let b2: f64 = b.iter().map(|v| v * v).sum();
            if n2 == 0.0 || b2 == 0.0 {
                grad.iter_mut().for_each(|g| *g = 0.0);
                return None;
            }
            let k1 = 2.0 * c / n2;
            let k2 = 2.0 * c * c / (n2 * n2);
            for ((g, &x), &y) in grad.iter_mut().zip(a).zip(b) {
                *g = k1 * y - k2 * x;
            }
            Some(c * c / n2)
        }
    }
}

struct OrthEval {
    loss: f64,
    grads: ParamSet,
    skipped: usize,
}

/// Mean over the given rows of `Σ_l` term, with the parameter gradient.
fn orth_batch(
    params: &ParamSet,
    arch: &MlpArchitecture,
    data: &LabeledDataset,
    snap: &Snapshot,
    rows: &[usize],
    objective: OrthObjective,
    normalize: bool,
) -> Result<OrthEval> {
    let x = data.features.select_rows(rows);
    let trace = forward(params, arch, &x)?;
    let n = rows.len().max(1) as f64;
    let mut loss = 0.0;
    let mut skipped = 0;
    let mut feature_grads = Vec::with_capacity(snap.layers.len());
    for (&l, snap_f) in snap.layers.iter().zip(&snap.features) {
        let cur = &trace.per_layer_outputs[l];
        let mut g = Tensor2D::zeros(cur.rows(), cur.cols());
        for (r, &i) in rows.iter().enumerate() {
            match term(cur.row(r), snap_f.row(i), objective, normalize, g.row_mut(r)) {
                Some(v) => loss += v,
                None => skipped += 1,
            }
        }
        g.scale(1.0 / n);
        feature_grads.push((l, g));
    }
    let grads = backward_with_features(params, arch, &trace, None, &feature_grads)?;
    Ok(OrthEval {
        loss: loss / n,
        grads,
        skipped,
    })
}

/// Orthogonality loss of `params` against the `snapshot` model on `data`:
/// mean over examples of `Σ_l (F_l(x;θ)ᵀ F_l(x;θ⁰))²`, with features
/// L2-normalized when `normalize` is set. Zero for an empty dataset.
pub fn orthogonality_loss(
    params: &ParamSet,
    snapshot: &ParamSet,
    arch: &MlpArchitecture,
    data: &LabeledDataset,
    layers: &[usize],
    objective: OrthObjective,
    normalize: bool,
) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let snap = Snapshot::capture(snapshot, arch, data, layers, normalize)?;
    let rows: Vec<usize> = (0..data.len()).collect();
    Ok(orth_batch(params, arch, data, &snap, &rows, objective, normalize)?.loss)
}

/// Mean squared cosine between `F_l(x;θ)` and `F_l(x;θ⁰)` over examples and
/// layers. Pairs where both features vanish are left out.
pub fn mean_squared_cosine(
    params: &ParamSet,
    snapshot: &ParamSet,
    arch: &MlpArchitecture,
    data: &LabeledDataset,
    layers: &[usize],
) -> Result<f64> {
    let cur = forward(params, arch, &data.features)?;
    let old = forward(snapshot, arch, &data.features)?;
    let (mut total, mut count) = (0.0, 0usize);
    for &l in layers {
        if l + 1 >= cur.layer_count() {
            return Err(Error::RejectedSpec(format!("layer {l} is not a hidden layer")));
        }
        let (a, b) = (&cur.per_layer_outputs[l], &old.per_layer_outputs[l]);
        for r in 0..a.rows() {
            match squared_cosine(a.row(r), b.row(r)) {
                Ok(v) => {
                    total += v;
                    count += 1;
                }
                Err(Error::UndefinedSimilarity) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Δ_max between two independent fresh initializations of `arch`.
pub fn random_model_delta(arch: &MlpArchitecture, seed: u64) -> Result<f64> {
    let a = arch.init_params_with_seed(seed);
    let b = arch.init_params_with_seed(seed.wrapping_add(1));
    Ok(param_delta(&a, &b)?.max)
}

/// Adds `N(0, (scale·rms_i)²)` noise to every entry `i`, where `rms_i` is
/// the entry's root-mean-square value.
fn jittered(params: &ParamSet, scale: f64, seed: u64) -> ParamSet {
    let mut out = params.clone();
    if scale == 0.0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0B5E_55ED);
    for i in 0..out.len() {
        let t = out.tensor_mut(i);
        if t.is_empty() {
            continue;
        }
        let rms = (t.norm_sq() / t.len() as f64).sqrt();
        for v in t.values_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += scale * rms * z;
        }
    }
    out
}

fn effective_threshold(arch: &MlpArchitecture, cfg: &UnlearnConfig) -> Result<f64> {
    if cfg.delta_from_random_models {
        random_model_delta(arch, cfg.seed)
    } else {
        Ok(cfg.delta_threshold)
    }
}

/// Phase 1: minimizes the orthogonality loss on the unlearned set. Δ_max
/// against the entry parameters is checked after every epoch (or batch);
/// at the first violation the phase stops and returns the last parameters
/// that were within the threshold.
pub fn our_phase1_orthogonal(
    params: &ParamSet,
    arch: &MlpArchitecture,
    split: &UnlearnSplit,
    cfg: &UnlearnConfig,
) -> Result<(ParamSet, Vec<PhaseRecord>)> {
    cfg.sgd.validate()?;
    let data = &split.unlearned;
    let theta0 = params.clone();
    let sgd = &cfg.sgd;
    let initial = PhaseRecord {
        phase: 1,
        epoch: 0,
        loss: orthogonality_loss(params, &theta0, arch, data, &cfg.orth_layers, cfg.orth_objective, cfg.normalize_features)?,
        delta_max: Some(0.0),
        lr: sgd.learning_rate,
        early_stop: false,
    };
    let mut log = vec![initial];
    if data.is_empty() || cfg.epochs_phase1 == 0 {
        return Ok((theta0, log));
    }
    let threshold = effective_threshold(arch, cfg)?;
    let snap = Snapshot::capture(&theta0, arch, data, &cfg.orth_layers, cfg.normalize_features)?;
    let mut current = jittered(&theta0, cfg.phase1_jitter, cfg.seed);
    let mut last_good = theta0.clone();
    let mut velocity = Velocity::zeros_like(&current);
    let mut skipped_total = 0usize;

    for epoch in 1..=cfg.epochs_phase1 {
        let lr = sgd.lr_at_epoch(epoch);
        let (mut total, mut batches) = (0.0, 0usize);
        let mut violation = None;
        for batch in epoch_batches(data.len(), sgd.batch_size, cfg.seed, epoch) {
            let eval = orth_batch(&current, arch, data, &snap, &batch, cfg.orth_objective, cfg.normalize_features)?;
            if !eval.loss.is_finite() {
                return Err(Error::divergence("our phase 1", format!("non-finite loss at epoch {epoch}")));
            }
            skipped_total += eval.skipped;
            sgd_step(&mut current, &eval.grads, sgd, lr, &mut velocity)
                .map_err(|e| Error::divergence("our phase 1", e.to_string()))?;
            total += eval.loss;
            batches += 1;
            if cfg.per_batch_delta_check {
                let d = param_delta(&current, &theta0)?.max;
                if d > threshold {
                    violation = Some(d);
                    break;
                }
                last_good = current.clone();
            }
        }
        let delta = match violation {
            Some(d) => d,
            None => param_delta(&current, &theta0)?.max,
        };
        let stop = delta > threshold;
        log.push(PhaseRecord {
            phase: 1,
            epoch,
            loss: total / batches.max(1) as f64,
            delta_max: Some(delta),
            lr,
            early_stop: stop,
        });
        if stop {
            current = last_good;
            break;
        }
        last_good = current.clone();
    }
    if skipped_total > 0 {
        eprintln!("our phase 1: skipped {skipped_total} degenerate zero-feature terms");
    }
    Ok((current, log))
}

/// Phase 2: replay on the retained set with l1 regularization and the
/// phase-2 learning-rate schedule.
pub fn our_phase2_replay(
    params: &ParamSet,
    arch: &MlpArchitecture,
    split: &UnlearnSplit,
    cfg: &UnlearnConfig,
) -> Result<(ParamSet, Vec<PhaseRecord>)> {
    let sgd = &cfg.sgd_phase2;
    let mut p = params.clone();
    let init_loss = mean_ce(&p, arch, &split.retained)?;
    let log = run_epochs(
        &mut p,
        sgd,
        cfg.epochs_phase2,
        split.retained.len(),
        cfg.seed.wrapping_add(2),
        "our phase 2",
        |cur, rows| {
            let (loss, mut g) = batch_ce_gradient(cur, arch, &split.retained, rows)?;
            add_l1_subgradient(&mut g, cur, cfg.l1_lambda);
            Ok((loss, g))
        },
    )?;
    Ok((p, to_phase_log(2, init_loss, sgd.learning_rate, log)))
}

/// Orthogonal unlearning followed by replay.
pub fn our(params: &ParamSet, arch: &MlpArchitecture, split: &UnlearnSplit, cfg: &UnlearnConfig) -> Result<UnlearnOutcome> {
    cfg.validate(arch)?;
    let ((final_params, phase_log), rte_seconds) = timed(|| {
        let (p1, mut log) = our_phase1_orthogonal(params, arch, split, cfg)?;
        let (p2, log2) = our_phase2_replay(&p1, arch, split, cfg)?;
        log.extend(log2);
        Ok((p2, log))
    })?;
    Ok(UnlearnOutcome {
        final_params,
        rte_seconds,
        phase_log,
        method_tag: "our".into(),
    })
}
