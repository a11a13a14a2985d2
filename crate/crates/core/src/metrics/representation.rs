//! Representation-space residual metrics on hidden features of one class:
//! intra-class variance, silhouette and KDE overlap with the other classes.

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{forward, MlpArchitecture, ParamSet, Tensor2D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepresentationMetrics {
    pub variance: f64,
    pub silhouette: f64,
    pub overlap: f64,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn centroid(features: &Tensor2D, rows: &[usize]) -> Vec<f64> {
    let mut c = vec![0.0; features.cols()];
    for &r in rows {
        for (cv, v) in c.iter_mut().zip(features.row(r)) {
            *cv += v;
        }
    }
    let n = rows.len().max(1) as f64;
    c.iter_mut().for_each(|v| *v /= n);
    c
}

fn rows_of(labels: &[usize], class: usize) -> Vec<usize> {
    (0..labels.len()).filter(|&i| labels[i] == class).collect()
}

/// Mean squared distance of the class's points to its centroid.
pub fn intra_class_variance(features: &Tensor2D, labels: &[usize], class: usize) -> Result<f64> {
    let rows = rows_of(labels, class);
    if rows.is_empty() {
        return Err(Error::rejected(format!("class {class} has no points")));
    }
    let c = centroid(features, &rows);
    Ok(rows
        .iter()
        .map(|&r| features.row(r).iter().zip(&c).map(|(x, m)| (x - m) * (x - m)).sum::<f64>())
        .sum::<f64>()
        / rows.len() as f64)
}

/// Silhouette coefficient of every point (Euclidean distance). Singleton
/// classes make the coefficient undefined.
pub fn silhouette_samples(features: &Tensor2D, labels: &[usize]) -> Result<Vec<f64>> {
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::rejected("silhouette needs at least two classes"));
    }
    let members: Vec<Vec<usize>> = classes.iter().map(|&c| rows_of(labels, c)).collect();
    if let Some(k) = members.iter().position(|m| m.len() < 2) {
        return Err(Error::rejected(format!(
            "silhouette undefined for singleton class {}",
            classes[k]
        )));
    }
    let mut out = Vec::with_capacity(labels.len());
    for i in 0..labels.len() {
        let xi = features.row(i);
        let own = classes.binary_search(&labels[i]).expect("present");
        let mut a = 0.0;
        let mut b = f64::INFINITY;
        for (k, rows) in members.iter().enumerate() {
            let total: f64 = rows.iter().map(|&j| dist(xi, features.row(j))).sum();
            if k == own {
                a = total / (rows.len() - 1) as f64;
            } else {
                b = b.min(total / rows.len() as f64);
            }
        }
        let m = a.max(b);
        out.push(if m > 0.0 { (b - a) / m } else { 0.0 });
    }
    Ok(out)
}

/// Mean silhouette over the points of `class`.
pub fn class_silhouette(features: &Tensor2D, labels: &[usize], class: usize) -> Result<f64> {
    let s = silhouette_samples(features, labels)?;
    let rows = rows_of(labels, class);
    if rows.is_empty() {
        return Err(Error::rejected(format!("class {class} has no points")));
    }
    Ok(rows.iter().map(|&r| s[r]).sum::<f64>() / rows.len() as f64)
}

fn silverman_bandwidth(xs: &[f64], floor: f64) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    (0.9 * spread * n.powf(-0.2)).max(floor)
}

fn kde(xs: &[f64], h: f64, at: f64) -> f64 {
    let norm = 1.0 / (xs.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    xs.iter().map(|x| (-0.5 * ((at - x) / h).powi(2)).exp()).sum::<f64>() * norm
}

/// Overlap coefficient `∫ min(f, g)` of two Gaussian-kernel density estimates
/// with Silverman bandwidths, integrated on a dense grid.
pub fn kde_overlap_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::rejected("KDE overlap needs two non-empty samples"));
    }
    let scale = a.iter().chain(b).fold(1.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-6 * scale;
    let (ha, hb) = (silverman_bandwidth(a, floor), silverman_bandwidth(b, floor));
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min) - 6.0 * ha.max(hb);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max) + 6.0 * ha.max(hb);
    const STEPS: usize = 4000;
    let step = (hi - lo) / STEPS as f64;
    let mut total = 0.0;
    let mut prev = kde(a, ha, lo).min(kde(b, hb, lo));
    for k in 1..=STEPS {
        let x = lo + step * k as f64;
        let cur = kde(a, ha, x).min(kde(b, hb, x));
        total += 0.5 * (prev + cur) * step;
        prev = cur;
    }
    Ok(total.clamp(0.0, 1.0))
}

/// Mean KDE overlap between `class` and each other class, each pair projected
/// onto the line joining the two centroids.
pub fn class_overlap(features: &Tensor2D, labels: &[usize], class: usize) -> Result<f64> {
    let own = rows_of(labels, class);
    if own.is_empty() {
        return Err(Error::rejected(format!("class {class} has no points")));
    }
    let mut others: Vec<usize> = labels.iter().copied().filter(|&c| c != class).collect();
    others.sort_unstable();
    others.dedup();
    if others.is_empty() {
        return Err(Error::rejected("overlap needs at least two classes"));
    }
    let c_own = centroid(features, &own);
    let mut total = 0.0;
    for &o in &others {
        let rows = rows_of(labels, o);
        let c_o = centroid(features, &rows);
        let mut dir: Vec<f64> = c_o.iter().zip(&c_own).map(|(a, b)| a - b).collect();
        let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            dir.iter_mut().for_each(|v| *v /= n);
        } else {
            dir.iter_mut().for_each(|v| *v = 0.0);
            dir[0] = 1.0;
        }
        let project = |r: usize| features.row(r).iter().zip(&dir).map(|(x, d)| x * d).sum::<f64>();
        let pa: Vec<f64> = own.iter().map(|&r| project(r)).collect();
        let pb: Vec<f64> = rows.iter().map(|&r| project(r)).collect();
        total += kde_overlap_1d(&pa, &pb)?;
    }
    Ok(total / others.len() as f64)
}

pub fn representation_metrics_from_features(
    features: &Tensor2D,
    labels: &[usize],
    class: usize,
) -> Result<RepresentationMetrics> {
    Ok(RepresentationMetrics {
        variance: intra_class_variance(features, labels, class)?,
        silhouette: class_silhouette(features, labels, class)?,
        overlap: class_overlap(features, labels, class)?,
    })
}

/// Metrics on `F_probe_layer` features of `dataset` for `class`. The probe
/// defaults to the last hidden layer when `None`.
pub fn representation_metrics(
    params: &ParamSet,
    arch: &MlpArchitecture,
    dataset: &LabeledDataset,
    probe_layer: Option<usize>,
    class: usize,
) -> Result<RepresentationMetrics> {
    let layer = probe_layer.unwrap_or_else(|| arch.hidden_count().saturating_sub(1));
    if layer >= arch.layer_count() {
        return Err(Error::rejected(format!("probe layer {layer} out of range")));
    }
    if dataset.classes_present().len() < 2 {
        return Err(Error::rejected("representation metrics need at least two classes"));
    }
    let trace = forward(params, arch, &dataset.features)?;
    representation_metrics_from_features(&trace.per_layer_outputs[layer], &dataset.labels, class)
}
