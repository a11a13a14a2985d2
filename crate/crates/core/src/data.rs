//! Datasets and unlearning partitions.
//!
//! Example identity is the row index in the source dataset; every split keeps
//! the index lists it was built from, so partitions can be persisted and
//! audited exactly.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor2D;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Tensor2D,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub name: String,
}

impl LabeledDataset {
    pub fn new(features: Tensor2D, labels: Vec<usize>, class_count: usize, name: impl Into<String>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::rejected(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::rejected(format!("label {bad} >= class_count {class_count}")));
        }
        Ok(Self {
            features,
            labels,
            class_count,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, rows: &[usize], name: impl Into<String>) -> Self {
        Self {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            name: name.into(),
        }
    }

    /// Rows whose label is in `classes`.
    pub fn rows_with_labels(&self, classes: &[usize]) -> Vec<usize> {
        (0..self.len()).filter(|&i| classes.contains(&self.labels[i])).collect()
    }

    /// Same rows, every label replaced by `label`.
    pub fn relabeled(&self, label: usize) -> Self {
        Self {
            labels: vec![label; self.len()],
            ..self.clone()
        }
    }

    pub fn concat(&self, other: &Self, name: impl Into<String>) -> Result<Self> {
        Ok(Self {
            features: self.features.vstack(&other.features)?,
            labels: self.labels.iter().chain(&other.labels).copied().collect(),
            class_count: self.class_count.max(other.class_count),
            name: name.into(),
        })
    }

    pub fn classes_present(&self) -> BTreeSet<usize> {
        self.labels.iter().copied().collect()
    }
}

/// Isotropic Gaussian clusters: one seed-determined mean per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub class_count: usize,
    pub dim: usize,
    pub per_class: usize,
    pub spread: f64,
    /// Half-width of the uniform box class means are drawn from.
    pub mean_scale: f64,
    /// Test rows per class, as a fraction of `per_class`.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            class_count: 12,
            dim: 16,
            per_class: 200,
            spread: 0.5,
            mean_scale: 1.0,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn class_means(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.class_count)
            .map(|_| {
                (0..self.dim)
                    .map(|_| rng.random_range(-self.mean_scale..=self.mean_scale))
                    .collect()
            })
            .collect()
    }

    /// Draws `per_class` rows per class from noise stream `stream`; the class
    /// means are shared across streams.
    pub fn sample(&self, per_class: usize, stream: u64, name: &str) -> LabeledDataset {
        let means = self.class_means();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream + 1);
        let mut values = Vec::with_capacity(self.class_count * per_class * self.dim);
        let mut labels = Vec::with_capacity(self.class_count * per_class);
        for (c, mean) in means.iter().enumerate() {
            for _ in 0..per_class {
                for &m in mean {
                    let z: f64 = rng.sample(StandardNormal);
                    values.push(m + self.spread * z);
                }
                labels.push(c);
            }
        }
        let features = Tensor2D::new(labels.len(), self.dim, values).expect("finite gaussian draws");
        LabeledDataset::new(features, labels, self.class_count, name).expect("labels in range")
    }

    pub fn train_set(&self) -> LabeledDataset {
        self.sample(self.per_class, 0, "train")
    }

    pub fn test_set(&self) -> LabeledDataset {
        let n = ((self.per_class as f64) * self.test_fraction).round().max(1.0) as usize;
        self.sample(n, 1, "test")
    }
}

pub fn make_synthetic_gaussian(class_count: usize, dim: usize, per_class: usize, spread: f64, seed: u64) -> LabeledDataset {
    SyntheticSpec {
        class_count,
        dim,
        per_class,
        spread,
        seed,
        ..SyntheticSpec::default()
    }
    .train_set()
}

/// Reads `label,f1,...,fd` rows. No header; feature scaling is left to the
/// caller.
pub fn load_csv_dataset(path: &Path, class_count: usize) -> Result<LabeledDataset> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    parse_csv_dataset(file, class_count, &name)
}

pub fn parse_csv_dataset(reader: impl std::io::Read, class_count: usize, name: &str) -> Result<LabeledDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut dim: Option<usize> = None;
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Parse { row, msg: e.to_string() })?;
        if rec.len() < 2 {
            return Err(Error::Parse {
                row,
                msg: "expected a label and at least one feature".into(),
            });
        }
        let d = rec.len() - 1;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::Parse {
                    row,
                    msg: format!("ragged row: {d} features, expected {expected}"),
                })
            }
            _ => {}
        }
        let label: usize = rec[0].parse().map_err(|_| Error::Parse {
            row,
            msg: format!("label `{}` is not a class index", &rec[0]),
        })?;
        if label >= class_count {
            return Err(Error::Parse {
                row,
                msg: format!("label {label} >= class_count {class_count}"),
            });
        }
        for field in rec.iter().skip(1) {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                msg: format!("non-numeric field `{field}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    msg: format!("non-finite field `{field}`"),
                });
            }
            values.push(v);
        }
        labels.push(label);
    }
    let features = Tensor2D::new(labels.len(), dim.unwrap_or(0), values)?;
    LabeledDataset::new(features, labels, class_count, name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    SampleWise,
    ClassWise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub unlearn_fraction: f64,
    pub unlearn_classes: Vec<usize>,
    /// Classes held out of training entirely.
    pub ood_classes: Vec<usize>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn sample_wise(unlearn_fraction: f64, seed: u64) -> Self {
        Self {
            mode: SplitMode::SampleWise,
            unlearn_fraction,
            unlearn_classes: Vec::new(),
            ood_classes: Vec::new(),
            seed,
        }
    }

    pub fn class_wise(unlearn_classes: Vec<usize>, ood_classes: Vec<usize>, seed: u64) -> Self {
        Self {
            mode: SplitMode::ClassWise,
            unlearn_fraction: 0.0,
            unlearn_classes,
            ood_classes,
            seed,
        }
    }

    pub fn validate(&self, class_count: usize) -> Result<()> {
        if let Some(c) = self
            .unlearn_classes
            .iter()
            .chain(&self.ood_classes)
            .find(|&&c| c >= class_count)
        {
            return Err(Error::RejectedSpec(format!("class {c} >= class_count {class_count}")));
        }
        if self.unlearn_classes.iter().any(|c| self.ood_classes.contains(c)) {
            return Err(Error::RejectedSpec("unlearn and OOD classes overlap".into()));
        }
        match self.mode {
            SplitMode::SampleWise => {
                if !(self.unlearn_fraction > 0.0 && self.unlearn_fraction < 1.0) {
                    return Err(Error::RejectedSpec("unlearn_fraction must lie in (0, 1)".into()));
                }
            }
            SplitMode::ClassWise => {
                if self.unlearn_classes.is_empty() {
                    return Err(Error::RejectedSpec("class-wise split needs unlearn classes".into()));
                }
            }
        }
        Ok(())
    }
}

/// Index lists behind a split, in source-row coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub spec: SplitSpec,
    pub train_idx: Vec<usize>,
    pub retained_idx: Vec<usize>,
    pub unlearned_idx: Vec<usize>,
    /// Rows of the test source.
    pub test_idx: Vec<usize>,
    pub ood_idx: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct UnlearnSplit {
    pub train_full: LabeledDataset,
    pub retained: LabeledDataset,
    pub unlearned: LabeledDataset,
    pub test: LabeledDataset,
    pub ood_pool: LabeledDataset,
    pub manifest: SplitManifest,
}

impl UnlearnSplit {
    pub fn spec(&self) -> &SplitSpec {
        &self.manifest.spec
    }
}

pub fn split_for_unlearning(data: &LabeledDataset, test: &LabeledDataset, spec: &SplitSpec) -> Result<UnlearnSplit> {
    spec.validate(data.class_count)?;
    let present = data.classes_present();
    let ood = &spec.ood_classes;
    let train_idx: Vec<usize> = (0..data.len()).filter(|&i| !ood.contains(&data.labels[i])).collect();
    let ood_idx: Vec<usize> = (0..data.len()).filter(|&i| ood.contains(&data.labels[i])).collect();

    let unlearned_idx: Vec<usize> = match spec.mode {
        SplitMode::SampleWise => {
            let k = (spec.unlearn_fraction * train_idx.len() as f64).ceil() as usize;
            let mut shuffled = train_idx.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
            let mut chosen = shuffled[..k.min(shuffled.len())].to_vec();
            chosen.sort_unstable();
            chosen
        }
        SplitMode::ClassWise => {
            if let Some(c) = spec.unlearn_classes.iter().find(|c| !present.contains(c)) {
                return Err(Error::RejectedSpec(format!("unlearn class {c} absent from data")));
            }
            train_idx
                .iter()
                .copied()
                .filter(|&i| spec.unlearn_classes.contains(&data.labels[i]))
                .collect()
        }
    };
    let unlearned_set: BTreeSet<usize> = unlearned_idx.iter().copied().collect();
    let retained_idx: Vec<usize> = train_idx.iter().copied().filter(|i| !unlearned_set.contains(i)).collect();

    let test_idx: Vec<usize> = (0..test.len())
        .filter(|&i| {
            let y = test.labels[i];
            !ood.contains(&y) && !(spec.mode == SplitMode::ClassWise && spec.unlearn_classes.contains(&y))
        })
        .collect();

    Ok(UnlearnSplit {
        train_full: data.subset(&train_idx, "train_full"),
        retained: data.subset(&retained_idx, "retained"),
        unlearned: data.subset(&unlearned_idx, "unlearned"),
        test: test.subset(&test_idx, "test"),
        ood_pool: data.subset(&ood_idx, "ood_pool"),
        manifest: SplitManifest {
            spec: spec.clone(),
            train_idx,
            retained_idx,
            unlearned_idx,
            test_idx,
            ood_idx,
        },
    })
}

/// Rebuilds a split from a persisted manifest.
pub fn split_from_manifest(data: &LabeledDataset, test: &LabeledDataset, m: &SplitManifest) -> Result<UnlearnSplit> {
    let check = |idx: &[usize], n: usize| idx.iter().all(|&i| i < n);
    if !(check(&m.train_idx, data.len())
        && check(&m.retained_idx, data.len())
        && check(&m.unlearned_idx, data.len())
        && check(&m.ood_idx, data.len())
        && check(&m.test_idx, test.len()))
    {
        return Err(Error::RejectedSpec("split manifest indexes beyond the data".into()));
    }
    Ok(UnlearnSplit {
        train_full: data.subset(&m.train_idx, "train_full"),
        retained: data.subset(&m.retained_idx, "retained"),
        unlearned: data.subset(&m.unlearned_idx, "unlearned"),
        test: test.subset(&m.test_idx, "test"),
        ood_pool: data.subset(&m.ood_idx, "ood_pool"),
        manifest: m.clone(),
    })
}
