//! Evaluation stack: accuracies, ToW, residuals, ROC analysis and
//! representation metrics.

mod representation;
mod roc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use representation::{
    class_overlap, class_silhouette, intra_class_variance, kde_overlap_1d, representation_metrics,
    representation_metrics_from_features, silhouette_samples, RepresentationMetrics,
};
pub use roc::{
    balanced_accuracy, best_balanced_threshold, roc_curve, threshold_at_fpr, tpr_at_fpr, RocCurve,
    RocPoint,
};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{per_example_cross_entropy, predict_logits, softmax, MlpArchitecture, ParamSet};

/// Argmax accuracy in percent; ties go to the lowest class index.
pub fn accuracy_on(params: &ParamSet, arch: &MlpArchitecture, dataset: &LabeledDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::rejected(format!("accuracy on empty dataset `{}`", dataset.name)));
    }
    let logits = predict_logits(params, arch, &dataset.features)?;
    let correct = (0..dataset.len())
        .filter(|&i| logits.argmax_row(i) == dataset.labels[i])
        .count();
    Ok(100.0 * correct as f64 / dataset.len() as f64)
}

/// Fraction of rows predicted as `label`, in percent.
pub fn prediction_rate(params: &ParamSet, arch: &MlpArchitecture, dataset: &LabeledDataset, label: usize) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::rejected("prediction rate on empty dataset"));
    }
    let logits = predict_logits(params, arch, &dataset.features)?;
    let hits = (0..dataset.len()).filter(|&i| logits.argmax_row(i) == label).count();
    Ok(100.0 * hits as f64 / dataset.len() as f64)
}

/// Tug-of-war alignment between an unlearned model's metrics and the
/// retrained reference's, all on the `[0, 1]` scale.
///
/// Each factor is `1 − |m_u − m_0| / m_0`; a zero reference uses
/// `1 − |m_u − m_0|`. Factors are clamped to `[0, 1]`.
pub fn tow(metrics_u: [f64; 3], metrics_0: [f64; 3]) -> f64 {
    metrics_u
        .iter()
        .zip(&metrics_0)
        .map(|(&u, &r)| {
            let d = (u - r).abs();
            let f = if r > 0.0 { 1.0 - d / r } else { 1.0 - d };
            f.clamp(0.0, 1.0)
        })
        .product()
}

/// Behavioural discrepancy measure for residuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualDistance {
    /// `|mean CE(unlearned) − mean CE(non-training)|`.
    #[default]
    MeanLoss,
    /// `|mean max-softmax(unlearned) − mean max-softmax(non-training)|`.
    MeanConfidence,
}

fn mean_statistic(
    params: &ParamSet,
    arch: &MlpArchitecture,
    data: &LabeledDataset,
    d: ResidualDistance,
) -> Result<f64> {
    let logits = predict_logits(params, arch, &data.features)?;
    let vals: Vec<f64> = match d {
        ResidualDistance::MeanLoss => per_example_cross_entropy(&logits, &data.labels)?,
        ResidualDistance::MeanConfidence => {
            let p = softmax(&logits);
            (0..p.rows())
                .map(|r| p.row(r).iter().copied().fold(0.0, f64::max))
                .collect()
        }
    };
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Residual of an unlearned model: distance between its behaviour on the
/// unlearned set and on a matched non-training set.
pub fn residual(
    params: &ParamSet,
    arch: &MlpArchitecture,
    unlearned: &LabeledDataset,
    non_training: &LabeledDataset,
    d: ResidualDistance,
) -> Result<f64> {
    if unlearned.is_empty() || non_training.is_empty() {
        return Err(Error::rejected("residual needs two non-empty sets"));
    }
    let a = mean_statistic(params, arch, unlearned, d)?;
    let b = mean_statistic(params, arch, non_training, d)?;
    Ok((a - b).abs())
}

/// `after − before`, in accuracy points.
pub fn ua_recovery(before: f64, after: f64) -> f64 {
    after - before
}

/// Mean resonance index of non-member candidates minus that of members.
/// Positive values mean members converge faster.
pub fn resonance_difference(member_idx: &[f64], nonmember_idx: &[f64]) -> Result<f64> {
    if member_idx.is_empty() || nonmember_idx.is_empty() {
        return Err(Error::rejected("resonance difference needs both groups"));
    }
    let m = member_idx.iter().sum::<f64>() / member_idx.len() as f64;
    let n = nonmember_idx.iter().sum::<f64>() / nonmember_idx.len() as f64;
    Ok(n - m)
}

/// Percentile bootstrap interval for `mean(a) − mean(b)`.
pub fn bootstrap_mean_diff(a: &[f64], b: &[f64], reps: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() || reps == 0 {
        return Err(Error::rejected("bootstrap needs data and repetitions"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut diffs: Vec<f64> = (0..reps)
        .map(|_| {
            let ma = (0..a.len()).map(|_| a[rng.random_range(0..a.len())]).sum::<f64>() / a.len() as f64;
            let mb = (0..b.len()).map(|_| b[rng.random_range(0..b.len())]).sum::<f64>() / b.len() as f64;
            ma - mb
        })
        .collect();
    diffs.sort_by(f64::total_cmp);
    let lo = ((1.0 - level) / 2.0 * reps as f64).floor() as usize;
    let hi = (((1.0 + level) / 2.0 * reps as f64).ceil() as usize).min(reps) - 1;
    Ok((diffs[lo], diffs[hi]))
}

/// One evaluation row per (method, trial).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub trial: usize,
    pub method: String,
    pub ta: f64,
    pub ua: f64,
    pub ra: f64,
    /// TPR at 0.1 FPR (percent) of the MIA-LiRA attack, when it was run.
    pub mia_efficacy: Option<f64>,
    pub tow: Option<f64>,
    pub residual: f64,
    pub rte_seconds: f64,
    pub representation: Option<RepresentationMetrics>,
}

impl EvalReport {
    /// Column order of `eval.csv`. Wall-clock RTE lives in `timing.csv` so
    /// that result files stay byte-reproducible.
    pub const CSV_HEADER: &'static str =
        "trial,method,ta,ua,ra,mia_efficacy,tow,residual,variance,silhouette,overlap";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let rep = self.representation;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.trial,
            self.method,
            self.ta,
            self.ua,
            self.ra,
            opt(self.mia_efficacy),
            opt(self.tow),
            self.residual,
            opt(rep.map(|r| r.variance)),
            opt(rep.map(|r| r.silhouette)),
            opt(rep.map(|r| r.overlap)),
        )
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("ta", self.ta), ("ua", self.ua), ("ra", self.ra)] {
            if !(0.0..=100.0).contains(&v) {
                return Err(Error::Internal(format!("{name} = {v} outside [0, 100]")));
            }
        }
        if let Some(t) = self.tow {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Internal(format!("tow = {t} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Tensor2D};
    use proptest::prelude::*;

    #[test]
    fn tow_examples() {
        assert_eq!(tow([0.3, 0.0, 0.9], [0.3, 0.0, 0.9]), 1.0);
        assert_eq!(tow([0.5, 0.25, 1.0], [0.5, 0.5, 1.0]), 0.5);
        assert_eq!(tow([0.9, 0.0, 0.9], [0.9, 0.0, 0.9]), 1.0);
        assert!((tow([0.9, 0.1, 0.9], [0.9, 0.0, 0.9]) - 0.9).abs() < 1e-15);
        assert_eq!(tow([0.0, 0.0, 0.0], [0.2, 0.5, 0.9]), 0.0);
    }

    proptest! {
        #[test]
        fn tow_bounded_and_monotone(
            r in proptest::array::uniform3(0.0f64..1.0),
            d in proptest::array::uniform3(0.0f64..0.5),
            k in 0usize..3,
            extra in 0.0f64..0.3,
        ) {
            let u = [r[0] + d[0], r[1] + d[1], r[2] + d[2]];
            let t = tow(u, r);
            prop_assert!((0.0..=1.0).contains(&t));
            let mut u2 = u;
            u2[k] += extra;
            prop_assert!(tow(u2, r) <= t + 1e-15);
        }
    }

    fn constant_model(classes: usize) -> (MlpArchitecture, ParamSet) {
        let arch = MlpArchitecture::new(vec![2, classes], Activation::Relu, 0).unwrap();
        let p = arch.init_params().zeros_like();
        (arch, p)
    }

    #[test]
    fn constant_logits_predict_class_zero() {
        let (arch, p) = constant_model(3);
        let x = Tensor2D::from_rows(&[vec![1.0, 2.0], vec![0.0, 0.0], vec![3.0, -1.0], vec![0.5, 0.5]]).unwrap();
        let d = LabeledDataset::new(x, vec![0, 1, 0, 2], 3, "d").unwrap();
        assert_eq!(accuracy_on(&p, &arch, &d).unwrap(), 50.0);
        let empty = d.subset(&[], "e");
        assert!(accuracy_on(&p, &arch, &empty).is_err());
    }

    #[test]
    fn residual_examples() {
        let (arch, mut p) = constant_model(2);
        // logits = x · W with W = I: example losses are known in closed form.
        p.tensor_mut(0).values_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let a = LabeledDataset::new(Tensor2D::from_rows(&[vec![2.0, 0.0]]).unwrap(), vec![0], 2, "a").unwrap();
        let b = LabeledDataset::new(Tensor2D::from_rows(&[vec![0.0, 0.0]]).unwrap(), vec![0], 2, "b").unwrap();
        let la = (1.0 + (-2.0f64).exp()).ln();
        let lb = 2.0f64.ln();
        let r = residual(&p, &arch, &a, &b, ResidualDistance::MeanLoss).unwrap();
        assert!((r - (lb - la)).abs() < 1e-14);
        assert_eq!(residual(&p, &arch, &a, &a, ResidualDistance::MeanLoss).unwrap(), 0.0);
        let r2 = residual(&p, &arch, &b, &a, ResidualDistance::MeanLoss).unwrap();
        assert_eq!(r, r2);
        let rc = residual(&p, &arch, &a, &b, ResidualDistance::MeanConfidence).unwrap();
        let conf_a = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((rc - (conf_a - 0.5)).abs() < 1e-14);
    }

    #[test]
    fn recovery_and_resonance() {
        assert_eq!(ua_recovery(60.0, 75.0), 15.0);
        assert_eq!(ua_recovery(40.0, 40.0), 0.0);
        assert_eq!(resonance_difference(&[10.0, 20.0], &[40.0, 60.0]).unwrap(), 35.0);
    }

    #[test]
    fn bootstrap_contains_truth_for_identical_samples() {
        let a: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let (lo, hi) = bootstrap_mean_diff(&a, &a, 2000, 0.95, 1).unwrap();
        assert!(lo <= 0.0 && hi >= 0.0);
    }
}
