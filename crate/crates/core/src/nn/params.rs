use serde::{Deserialize, Serialize};

use super::tensor::Tensor2D;
use crate::error::{Error, Result};

/// Named, ordered parameter tensors of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor2D)>,
}

/// Gradients share the parameter layout.
pub type GradSet = ParamSet;

impl ParamSet {
    pub fn new(entries: Vec<(String, Tensor2D)>) -> Result<Self> {
        for (i, (name, _)) in entries.iter().enumerate() {
            if entries[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::rejected(format!("duplicate parameter name `{name}`")));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(String, Tensor2D)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tensor(&self, i: usize) -> &Tensor2D {
        &self.entries[i].1
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor2D {
        &mut self.entries[i].1
    }

    pub fn name(&self, i: usize) -> &str {
        &self.entries[i].0
    }

    pub fn get(&self, name: &str) -> Option<&Tensor2D> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor2D)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor2D::zeros(t.rows(), t.cols())))
                .collect(),
        }
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((na, ta), (nb, tb))| na == nb && ta.shape() == tb.shape())
    }

    pub fn check_layout(&self, other: &Self) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::rejected("parameter layouts differ"))
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        debug_assert!(self.same_layout(other));
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(&other.entries) {
            for (x, y) in a.values_mut().iter_mut().zip(b.values()) {
                *x += alpha * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, t) in &mut self.entries {
            t.scale(s);
        }
    }

    /// Flattened inner product over all entries.
    pub fn dot(&self, other: &Self) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|((_, a), (_, b))| a.dot(b))
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.entries
            .iter()
            .flat_map(|(_, t)| t.values().iter().copied())
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.all_finite())
    }

    /// Name of the first entry holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.entries
            .iter()
            .find(|(_, t)| !t.all_finite())
            .map(|(n, _)| n.as_str())
    }
}

/// Per-entry normalized change relative to a reference snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDelta {
    pub per_entry: Vec<(String, f64)>,
    pub max: f64,
}

/// `Δ(θ_i) = ‖θ_i − θ_i^ref‖₂ / |θ_i|`, with `|θ_i|` the entry's element
/// count, and `Δ_max` over all entries.
pub fn param_delta(params: &ParamSet, reference: &ParamSet) -> Result<ParamDelta> {
    params.check_layout(reference)?;
    let mut per_entry = Vec::with_capacity(params.len());
    let mut max = 0.0f64;
    for ((name, a), (_, b)) in params.entries.iter().zip(&reference.entries) {
        let d = if a.is_empty() {
            0.0
        } else {
            let sq: f64 = a
                .values()
                .iter()
                .zip(b.values())
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            sq.sqrt() / a.len() as f64
        };
        max = max.max(d);
        per_entry.push((name.clone(), d));
    }
    Ok(ParamDelta { per_entry, max })
}

/// Sum of absolute values of every parameter.
pub fn l1_norm(params: &ParamSet) -> f64 {
    params
        .entries
        .iter()
        .flat_map(|(_, t)| t.values())
        .map(|v| v.abs())
        .sum()
}

/// `(aᵀb)² / (‖a‖²‖b‖²)`. A single zero vector gives 0; two zero vectors
/// are undefined.
pub fn squared_cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::rejected(format!(
            "squared_cosine length mismatch {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let na: f64 = a.iter().map(|v| v * v).sum();
    let nb: f64 = b.iter().map(|v| v * v).sum();
    if na == 0.0 && nb == 0.0 {
        return Err(Error::UndefinedSimilarity);
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(((ab * ab) / (na * nb)).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(values: Vec<f64>) -> ParamSet {
        let n = values.len();
        ParamSet::new(vec![("w".into(), Tensor2D::new(1, n, values).unwrap())]).unwrap()
    }

    #[test]
    fn duplicate_names_rejected() {
        let t = Tensor2D::zeros(1, 1);
        assert!(ParamSet::new(vec![("a".into(), t.clone()), ("a".into(), t)]).is_err());
    }

    #[test]
    fn delta_examples() {
        let p = single(vec![0.3, -0.2, 0.1, 0.0]);
        let d = param_delta(&p, &p).unwrap();
        assert_eq!(d.max, 0.0);
        assert!(d.per_entry.iter().all(|(_, v)| *v == 0.0));

        let mut q = p.clone();
        q.tensor_mut(0).values_mut()[2] += 0.01;
        let d = param_delta(&q, &p).unwrap();
        assert!((d.max - 0.0025).abs() < 1e-15);
    }

    #[test]
    fn delta_layout_mismatch() {
        let p = single(vec![1.0, 2.0]);
        let q = single(vec![1.0, 2.0, 3.0]);
        assert!(matches!(param_delta(&p, &q), Err(Error::RejectedInput(_))));
    }

    #[test]
    fn l1_examples() {
        assert_eq!(l1_norm(&single(vec![0.0; 7])), 0.0);
        assert_eq!(l1_norm(&single(vec![1.0; 9])), 9.0);
        let vals = vec![0.5, -1.25, 3.0, -0.125, 0.0];
        let oracle: f64 = vals.iter().map(|v: &f64| v.abs()).sum();
        assert_eq!(l1_norm(&single(vals)), oracle);
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(squared_cosine(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert!((squared_cosine(&[2.0, -1.0], &[2.0, -1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((squared_cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(
            squared_cosine(&[0.0, 0.0], &[0.0, 0.0]),
            Err(Error::UndefinedSimilarity)
        ));
    }

    proptest! {
        #[test]
        fn delta_self_is_zero(vals in proptest::collection::vec(-10.0f64..10.0, 1..40)) {
            let p = single(vals);
            prop_assert_eq!(param_delta(&p, &p).unwrap().max, 0.0);
        }

        #[test]
        fn cosine_in_unit_interval(
            a in proptest::collection::vec(-5.0f64..5.0, 6),
            b in proptest::collection::vec(-5.0f64..5.0, 6),
        ) {
            if let Ok(c) = squared_cosine(&a, &b) {
                prop_assert!((0.0..=1.0).contains(&c));
            }
        }
    }
}
