use super::AttackReport;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{predict_logits, softmax, MlpArchitecture, ParamSet, Tensor2D};

/// One shadow model after it went through the victim's unlearning
/// algorithm, with its own unlearned and test rows.
#[derive(Debug, Clone)]
pub struct UpShadow {
    pub params: ParamSet,
    pub unlearned: LabeledDataset,
    pub test: LabeledDataset,
}

/// Softmax outputs with each row sorted in descending order.
pub fn sorted_softmax_features(params: &ParamSet, arch: &MlpArchitecture, data: &LabeledDataset) -> Result<Tensor2D> {
    let mut p = softmax(&predict_logits(params, arch, &data.features)?);
    for r in 0..p.rows() {
        p.row_mut(r).sort_by(|a, b| b.total_cmp(a));
    }
    Ok(p)
}

/// Logistic model on standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticScorer {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticScorer {
    /// Full-batch gradient descent on the mean log-loss. Classes more
    /// imbalanced than 10:1 are rejected.
    pub fn fit(features: &Tensor2D, labels: &[bool], iterations: usize, lr: f64) -> Result<Self> {
        let n = features.rows();
        if n != labels.len() {
            return Err(Error::rejected("scorer features and labels differ in length"));
        }
        let pos = labels.iter().filter(|&&b| b).count();
        let neg = n - pos;
        if pos == 0 || neg == 0 {
            return Err(Error::rejected("scorer needs both positive and negative examples"));
        }
        if pos > 10 * neg || neg > 10 * pos {
            return Err(Error::rejected(format!("scorer classes imbalanced beyond 10:1 ({pos} vs {neg})")));
        }
        let d = features.cols();
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(features.row(r)) {
                *m += v / n as f64;
            }
        }
        let mut scale = vec![0.0; d];
        for r in 0..n {
            for ((s, v), m) in scale.iter_mut().zip(features.row(r)).zip(&mean) {
                *s += (v - m) * (v - m) / n as f64;
            }
        }
        for s in &mut scale {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        let x: Vec<Vec<f64>> = (0..n)
            .map(|r| {
                features
                    .row(r)
                    .iter()
                    .zip(&mean)
                    .zip(&scale)
                    .map(|((v, m), s)| (v - m) / s)
                    .collect()
            })
            .collect();
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        for _ in 0..iterations {
            let mut gw = vec![0.0; d];
            let mut gb = 0.0;
            for (xi, &yi) in x.iter().zip(labels) {
                let z: f64 = xi.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b;
                let err = sigmoid(z) - if yi { 1.0 } else { 0.0 };
                for (g, a) in gw.iter_mut().zip(xi) {
                    *g += err * a;
                }
                gb += err;
            }
            for (wv, g) in w.iter_mut().zip(&gw) {
                *wv -= lr * g / n as f64;
            }
            b -= lr * gb / n as f64;
        }
        Ok(Self {
            weights: w,
            bias: b,
            mean,
            scale,
        })
    }

    pub fn score_row(&self, row: &[f64]) -> f64 {
        let z: f64 = row
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .zip(&self.weights)
            .map(|(((v, m), s), w)| (v - m) / s * w)
            .sum::<f64>()
            + self.bias;
        sigmoid(z)
    }

    pub fn score(&self, features: &Tensor2D) -> Vec<f64> {
        (0..features.rows()).map(|r| self.score_row(features.row(r))).collect()
    }
}

/// Unlearning-aware attack: a logistic scorer learns to tell shadow
/// unlearned rows (positive) from shadow test rows (negative) by their
/// sorted softmax vectors, and is then applied to the victim.
pub fn mia_up(
    shadows: &[UpShadow],
    arch: &MlpArchitecture,
    victim: &ParamSet,
    population: &LabeledDataset,
) -> Result<AttackReport> {
    if shadows.is_empty() {
        return Err(Error::rejected("MIA-UP needs at least one shadow"));
    }
    let mut feats: Option<Tensor2D> = None;
    let mut labels = Vec::new();
    for s in shadows {
        for (data, member) in [(&s.unlearned, true), (&s.test, false)] {
            if data.is_empty() {
                continue;
            }
            let f = sorted_softmax_features(&s.params, arch, data)?;
            feats = Some(match feats {
                None => f,
                Some(acc) => acc.vstack(&f)?,
            });
            labels.extend(std::iter::repeat_n(member, data.len()));
        }
    }
    let feats = feats.ok_or_else(|| Error::rejected("MIA-UP shadows carry no rows"))?;
    let scorer = LogisticScorer::fit(&feats, &labels, 500, 0.5)?;
    let scores = scorer.score(&sorted_softmax_features(victim, arch, population)?);
    Ok(AttackReport::from_scores("mia_up", &scores))
}
