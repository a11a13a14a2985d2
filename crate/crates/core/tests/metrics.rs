use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use unlearn_forge::metrics::{
    balanced_accuracy, best_balanced_threshold, class_silhouette, intra_class_variance, resonance_difference,
    roc_curve, silhouette_samples, threshold_at_fpr, tow, tpr_at_fpr,
};
use unlearn_forge::nn::Tensor2D;

fn pairwise_auc(s: &[(f64, bool)]) -> f64 {
    let pos: Vec<f64> = s.iter().filter(|x| x.1).map(|x| x.0).collect();
    let neg: Vec<f64> = s.iter().filter(|x| !x.1).map(|x| x.0).collect();
    let mut total = 0.0;
    for p in &pos {
        for n in &neg {
            total += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
        }
    }
    total / (pos.len() * neg.len()) as f64
}

proptest! {
    #[test]
    fn auc_equals_pairwise_probability(
        raw in prop::collection::vec((0u8..6, any::<bool>()), 2..60)
    ) {
        let mut s: Vec<(f64, bool)> = raw.iter().map(|&(v, m)| (v as f64, m)).collect();
        s[0].1 = true;
        s[1].1 = false;
        let c = roc_curve(&s).unwrap();
        prop_assert!((c.auc - pairwise_auc(&s)).abs() <= 1e-12);
    }

    #[test]
    fn tow_is_one_only_on_match(a in 0.01f64..1.0, b in 0.01f64..1.0, c in 0.01f64..1.0) {
        prop_assert_eq!(tow([a, b, c], [a, b, c]), 1.0);
        let t = tow([a, b, c], [b, c, a]);
        prop_assert!((0.0..=1.0).contains(&t));
    }
}

#[test]
fn roc_points_are_monotone_and_tpr_lookup_is_conservative() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s: Vec<(f64, bool)> = (0..200)
        .map(|i| {
            let m = i % 2 == 0;
            (rng.random::<f64>() + if m { 0.3 } else { 0.0 }, m)
        })
        .collect();
    let c = roc_curve(&s).unwrap();
    assert_eq!((c.points[0].fpr, c.points[0].tpr), (0.0, 0.0));
    let last = c.points.last().unwrap();
    assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
    assert!(c.points.windows(2).all(|w| w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr));
    let t = tpr_at_fpr(&c, 0.1);
    let oracle = c
        .points
        .iter()
        .filter(|p| p.fpr <= 0.1)
        .map(|p| p.tpr * 100.0)
        .fold(0.0, f64::max);
    assert_eq!(t, oracle);
}

#[test]
fn roc_rejects_one_sided_populations() {
    assert!(roc_curve(&[(1.0, true), (2.0, true)]).is_err());
    assert!(roc_curve(&[(f64::NAN, true), (2.0, false)]).is_err());
}

#[test]
fn balanced_accuracy_hand_example() {
    let s = [(0.9, true), (0.4, true), (0.7, false), (0.1, false), (0.2, false)];
    // tau 0.5: TPR 1/2, TNR 2/3.
    assert!((balanced_accuracy(&s, 0.5).unwrap() - 50.0 * (0.5 + 2.0 / 3.0)).abs() < 1e-12);
    let (tau, best) = best_balanced_threshold(&s).unwrap();
    for t in [-1.0, 0.15, 0.3, 0.55, 0.8, 1.0] {
        assert!(balanced_accuracy(&s, t).unwrap() <= best + 1e-12);
    }
    assert_eq!(balanced_accuracy(&s, tau).unwrap(), best);
}

#[test]
fn threshold_at_fpr_bounds_false_positives() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for n in [1usize, 7, 50, 333] {
        let neg: Vec<f64> = (0..n).map(|_| (rng.random_range(0..20) as f64) / 4.0).collect();
        for fpr in [0.0, 0.05, 0.1, 0.5, 1.0] {
            let tau = threshold_at_fpr(&neg, fpr).unwrap();
            let above = neg.iter().filter(|&&v| v > tau).count() as f64 / n as f64;
            assert!(above <= fpr + 1e-12, "n {n} fpr {fpr}: {above}");
        }
    }
    assert!(threshold_at_fpr(&[], 0.1).is_err());
}

#[test]
fn tow_worked_values() {
    assert!((tow([0.5, 1.0, 1.0], [1.0, 1.0, 1.0]) - 0.5).abs() < 1e-15);
    assert!((tow([0.9, 0.8, 0.3], [0.6, 0.8, 0.2]) - 0.5 * 1.0 * 0.5).abs() < 1e-12);
    assert_eq!(tow([1.0, 1.0, 1.0], [0.2, 1.0, 1.0]), 0.0);
    assert!((tow([0.25, 1.0, 1.0], [0.0, 1.0, 1.0]) - 0.75).abs() < 1e-15);
}

#[test]
fn resonance_difference_is_mean_gap() {
    assert_eq!(resonance_difference(&[1.0, 3.0], &[4.0, 6.0, 8.0]).unwrap(), 4.0);
    assert!(resonance_difference(&[], &[1.0]).is_err());
}

fn brute_silhouette(x: &[[f64; 2]], y: &[usize]) -> Vec<f64> {
    let d = |a: &[f64; 2], b: &[f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let classes: Vec<usize> = {
        let mut c = y.to_vec();
        c.sort_unstable();
        c.dedup();
        c
    };
    (0..x.len())
        .map(|i| {
            let mean_to = |c: usize, skip_self: bool| {
                let js: Vec<usize> = (0..x.len()).filter(|&j| y[j] == c && !(skip_self && j == i)).collect();
                js.iter().map(|&j| d(&x[i], &x[j])).sum::<f64>() / js.len() as f64
            };
            let a = mean_to(y[i], true);
            let b = classes
                .iter()
                .filter(|&&c| c != y[i])
                .map(|&c| mean_to(c, false))
                .fold(f64::INFINITY, f64::min);
            (b - a) / a.max(b)
        })
        .collect()
}

#[test]
fn silhouette_matches_brute_force() {
    let x = [[0.0, 0.0], [0.5, 0.2], [0.1, 0.9], [4.0, 4.0], [4.5, 3.0], [-3.0, 5.0], [-2.0, 5.5]];
    let y = [0, 0, 0, 1, 1, 2, 2];
    let t = Tensor2D::from_rows(&x.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
    let got = silhouette_samples(&t, &y).unwrap();
    for (a, b) in got.iter().zip(brute_silhouette(&x, &y)) {
        assert!((a - b).abs() < 1e-12);
    }
    let c1 = class_silhouette(&t, &y, 1).unwrap();
    assert!((c1 - (got[3] + got[4]) / 2.0).abs() < 1e-15);
    assert!(silhouette_samples(&t, &[0, 0, 0, 1, 1, 2, 3]).is_err());
}

#[test]
fn intra_class_variance_oracle() {
    let t = Tensor2D::from_rows(&[vec![0.0, 0.0], vec![2.0, 0.0], vec![9.0, 9.0]]).unwrap();
    // centroid (1, 0): each point at squared distance 1.
    assert_eq!(intra_class_variance(&t, &[3, 3, 1], 3).unwrap(), 1.0);
    assert!(intra_class_variance(&t, &[3, 3, 1], 0).is_err());
}
