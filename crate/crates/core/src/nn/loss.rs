use super::tensor::Tensor2D;
use crate::error::{Error, Result};

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor2D) -> Tensor2D {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}

fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

fn check_labels(logits: &Tensor2D, labels: &[usize]) -> Result<()> {
    if labels.len() != logits.rows() {
        return Err(Error::rejected(format!(
            "{} labels for {} rows",
            labels.len(),
            logits.rows()
        )));
    }
    if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= logits.cols()) {
        return Err(Error::rejected(format!(
            "label {y} at row {i} out of range for {} classes",
            logits.cols()
        )));
    }
    Ok(())
}

/// Mean cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &Tensor2D, labels: &[usize]) -> Result<(f64, Tensor2D)> {
    check_labels(logits, labels)?;
    let n = logits.rows();
    if n == 0 {
        return Ok((0.0, logits.clone()));
    }
    let mut grad = softmax(logits);
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        loss -= log_softmax_row(logits.row(r))[y];
        grad.row_mut(r)[y] -= 1.0;
    }
    grad.scale(1.0 / n as f64);
    Ok((loss / n as f64, grad))
}

/// Cross-entropy of each row separately.
pub fn per_example_cross_entropy(logits: &Tensor2D, labels: &[usize]) -> Result<Vec<f64>> {
    check_labels(logits, labels)?;
    Ok(labels
        .iter()
        .enumerate()
        .map(|(r, &y)| -log_softmax_row(logits.row(r))[y])
        .collect())
}

/// Mean cross-entropy against soft target distributions (rows of `targets`).
pub fn soft_cross_entropy(logits: &Tensor2D, targets: &Tensor2D) -> Result<(f64, Tensor2D)> {
    if logits.shape() != targets.shape() {
        return Err(Error::rejected("soft targets shape differs from logits"));
    }
    let n = logits.rows();
    if n == 0 {
        return Ok((0.0, logits.clone()));
    }
    let p = softmax(logits);
    let mut loss = 0.0;
    let mut grad = Tensor2D::zeros(n, logits.cols());
    for r in 0..n {
        let ls = log_softmax_row(logits.row(r));
        let t = targets.row(r);
        let tsum: f64 = t.iter().sum();
        loss -= t.iter().zip(&ls).map(|(a, b)| a * b).sum::<f64>();
        for ((g, &pv), &tv) in grad.row_mut(r).iter_mut().zip(p.row(r)).zip(t) {
            *g = pv * tsum - tv;
        }
    }
    grad.scale(1.0 / n as f64);
    Ok((loss / n as f64, grad))
}
