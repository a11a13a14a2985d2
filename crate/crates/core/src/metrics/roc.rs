use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One operating point: predicting "member" for every score `>= threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// `+inf` for the all-negative start point (serialized as `null`).
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    /// JSON array of `[fpr, tpr, threshold]` triples.
    pub fn to_json(&self) -> String {
        let rows: Vec<[serde_json::Value; 3]> = self
            .points
            .iter()
            .map(|p| {
                let t = if p.threshold.is_finite() {
                    serde_json::json!(p.threshold)
                } else {
                    serde_json::Value::Null
                };
                [serde_json::json!(p.fpr), serde_json::json!(p.tpr), t]
            })
            .collect();
        serde_json::to_string(&rows).expect("plain values serialize")
    }
}

fn class_counts(scores: &[(f64, bool)]) -> Result<(usize, usize)> {
    let pos = scores.iter().filter(|s| s.1).count();
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::rejected("ROC analysis needs both members and non-members"));
    }
    if scores.iter().any(|s| s.0.is_nan()) {
        return Err(Error::rejected("NaN score"));
    }
    Ok((pos, neg))
}

/// Full threshold sweep with tied scores grouped at one threshold; AUC by the
/// trapezoid rule.
pub fn roc_curve(scores: &[(f64, bool)]) -> Result<RocCurve> {
    let (pos, neg) = class_counts(scores)?;
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: t,
        });
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum();
    Ok(RocCurve { points, auc })
}

/// TPR (percent) at the largest achieved FPR not above `fpr_target`.
pub fn tpr_at_fpr(curve: &RocCurve, fpr_target: f64) -> f64 {
    curve
        .points
        .iter()
        .filter(|p| p.fpr <= fpr_target + 1e-15)
        .map(|p| p.tpr)
        .fold(0.0, f64::max)
        * 100.0
}

/// `(TPR + TNR) / 2` in percent with decisions `score > tau`.
pub fn balanced_accuracy(scores: &[(f64, bool)], tau: f64) -> Result<f64> {
    let (pos, neg) = class_counts(scores)?;
    let tp = scores.iter().filter(|s| s.1 && s.0 > tau).count();
    let tn = scores.iter().filter(|s| !s.1 && s.0 <= tau).count();
    Ok(50.0 * (tp as f64 / pos as f64 + tn as f64 / neg as f64))
}

/// Threshold maximizing balanced accuracy (midpoints between distinct scores;
/// the lowest such threshold wins ties). Returns `(tau, balanced accuracy)`.
pub fn best_balanced_threshold(scores: &[(f64, bool)]) -> Result<(f64, f64)> {
    class_counts(scores)?;
    let mut distinct: Vec<f64> = scores.iter().map(|s| s.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut candidates = vec![distinct[0] - 1.0];
    candidates.extend(distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    candidates.push(distinct[distinct.len() - 1]);
    let mut best = (candidates[0], balanced_accuracy(scores, candidates[0])?);
    for &t in &candidates[1..] {
        let b = balanced_accuracy(scores, t)?;
        if b > best.1 {
            best = (t, b);
        }
    }
    Ok(best)
}

/// Smallest-FPR-respecting threshold: with decisions `score > tau`, the
/// fraction of `negatives` above `tau` is at most `fpr_target`.
pub fn threshold_at_fpr(negatives: &[f64], fpr_target: f64) -> Result<f64> {
    if negatives.is_empty() {
        return Err(Error::rejected("threshold calibration needs negatives"));
    }
    let mut desc = negatives.to_vec();
    desc.sort_by(|a, b| b.total_cmp(a));
    let allowed = (fpr_target * desc.len() as f64).floor() as usize;
    Ok(if allowed >= desc.len() {
        desc[desc.len() - 1] - 1.0
    } else {
        desc[allowed]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_and_degenerate() {
        let s = vec![(0.9, true), (0.8, true), (0.1, false), (0.2, false)];
        let c = roc_curve(&s).unwrap();
        assert_eq!(c.auc, 1.0);
        assert_eq!(tpr_at_fpr(&c, 0.1), 100.0);
        let flat = vec![(0.5, true), (0.5, false), (0.5, true)];
        assert_eq!(roc_curve(&flat).unwrap().auc, 0.5);
        assert!(roc_curve(&[(1.0, true)]).is_err());
    }

    #[test]
    fn endpoints_and_order() {
        let s = vec![(0.3, true), (0.1, false), (0.7, false), (0.5, true)];
        let c = roc_curve(&s).unwrap();
        assert_eq!((c.points[0].fpr, c.points[0].tpr), (0.0, 0.0));
        let last = c.points.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        assert!(c.points.windows(2).all(|w| w[0].fpr <= w[1].fpr));
        assert!(c.to_json().starts_with("[[0.0,0.0,null]"));
    }

    #[test]
    fn tpr_at_fpr_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s: Vec<(f64, bool)> = (0..150)
            .map(|i| {
                let m = i % 3 == 0;
                (rng.random::<f64>() + if m { 0.3 } else { 0.0 }, m)
            })
            .collect();
        let c = roc_curve(&s).unwrap();
        let got = tpr_at_fpr(&c, 0.1);
        // Recount: best TPR over all thresholds t with FPR(score >= t) <= 0.1.
        let pos = s.iter().filter(|x| x.1).count() as f64;
        let neg = s.len() as f64 - pos;
        let mut best = 0.0f64;
        for &(t, _) in &s {
            let fp = s.iter().filter(|x| !x.1 && x.0 >= t).count() as f64;
            let tp = s.iter().filter(|x| x.1 && x.0 >= t).count() as f64;
            if fp / neg <= 0.1 {
                best = best.max(tp / pos);
            }
        }
        assert!((got - best * 100.0).abs() < 1e-12);
    }

    #[test]
    fn balanced_examples() {
        // TPR 0.8, TNR 0.6.
        let mut s = Vec::new();
        for i in 0..10 {
            s.push((if i < 8 { 1.0 } else { 0.0 }, true));
            s.push((if i < 4 { 1.0 } else { 0.0 }, false));
        }
        assert!((balanced_accuracy(&s, 0.5).unwrap() - 70.0).abs() < 1e-12);
        let sep = vec![(0.9, true), (0.8, true), (0.1, false)];
        assert_eq!(best_balanced_threshold(&sep).unwrap().1, 100.0);
        let flat = vec![(0.5, true), (0.5, false)];
        assert_eq!(best_balanced_threshold(&flat).unwrap().1, 50.0);
    }

    #[test]
    fn fpr_threshold_respects_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let neg: Vec<f64> = (0..rng.random_range(5..80)).map(|_| rng.random::<f64>()).collect();
            let tau = threshold_at_fpr(&neg, 0.1).unwrap();
            let fpr = neg.iter().filter(|&&v| v > tau).count() as f64 / neg.len() as f64;
            assert!(fpr <= 0.1);
        }
    }
}
