//! Experiment configuration, read from TOML.
//!
//! A config names one dataset, one architecture and one training recipe,
//! plus the unlearning methods and attacks to run over `trial_count`
//! independently seeded trials. See `configs/` for complete examples.

use std::path::{Path, PathBuf};

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use unlearn_forge::attacks::{AttackKind, ReaClassConfig, ReaSampleConfig};
use unlearn_forge::data::{SplitMode, SyntheticSpec};
use unlearn_forge::metrics::ResidualDistance;
use unlearn_forge::nn::{Activation, MlpArchitecture, SgdConfig};
use unlearn_forge::unlearn::{UnlearnConfig, UnlearnMethod};
use unlearn_forge::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: SplitMode,
    #[serde(default = "one")]
    pub trial_count: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub unlearn: Vec<UnlearnEntry>,
    #[serde(default)]
    pub attacks: AttacksConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub landscape: LandscapeConfig,
}

fn one() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub synthetic: Option<SyntheticSpec>,
    pub csv: Option<CsvSource>,
    /// Redraw the synthetic dataset from each trial's seed.
    #[serde(default)]
    pub reseed_per_trial: bool,
}

/// `label,f1,...,fd` files without header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub train: PathBuf,
    pub test: PathBuf,
    pub class_count: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    #[serde(default = "relu")]
    pub activation: Activation,
}

fn relu() -> Activation {
    Activation::Relu
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    #[serde(default)]
    pub sgd: SgdConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    /// Sample-wise: fraction of training rows to unlearn.
    pub unlearn_fraction: f64,
    /// Class-wise: classes drawn per trial to unlearn.
    pub unlearn_count: usize,
    /// Class-wise: classes drawn per trial to hold out as OOD candidates.
    pub ood_count: usize,
    /// Fixed class choices instead of per-trial draws.
    pub unlearn_classes: Option<Vec<usize>>,
    pub ood_classes: Option<Vec<usize>>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            unlearn_fraction: 0.1,
            unlearn_count: 1,
            ood_count: 4,
            unlearn_classes: None,
            ood_classes: None,
        }
    }
}

/// One unlearning method; every other key overrides a field of the
/// method's built-in defaults (e.g. `epochs_phase1`, `sgd.learning_rate`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnEntry {
    pub method: UnlearnMethod,
    #[serde(flatten)]
    pub overrides: toml::Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttacksConfig {
    pub kinds: Vec<AttackKind>,
    pub rea_class: ReaClassConfig,
    pub rea_sample: ReaSampleConfig,
    pub shadow_count: usize,
    /// Defaults to the training epochs.
    pub shadow_epochs: Option<usize>,
    /// Defaults to the dataset's `per_class`.
    pub shadow_per_class: Option<usize>,
    /// Retained rows added to the sample-wise inference set.
    pub inference_retained: usize,
    /// Shadow models for MIA-UP, each run through the victim's method.
    pub up_shadow_count: usize,
    /// False-positive rate used to calibrate decision thresholds.
    pub fpr: f64,
}

impl Default for AttacksConfig {
    fn default() -> Self {
        Self {
            kinds: Vec::new(),
            rea_class: ReaClassConfig::default(),
            rea_sample: ReaSampleConfig::default(),
            shadow_count: 16,
            shadow_epochs: None,
            shadow_per_class: None,
            inference_retained: 200,
            up_shadow_count: 4,
            fpr: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub representation: bool,
    pub residual: ResidualDistance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LandscapeConfig {
    pub extent: f64,
    pub resolution: usize,
    /// Fine-tuning epochs on the unlearned set whose checkpoints are
    /// projected onto the plane.
    pub trajectory_epochs: usize,
    pub trajectory_lr: f64,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        Self {
            extent: 1.0,
            resolution: 21,
            trajectory_epochs: 10,
            trajectory_lr: 0.01,
        }
    }
}

fn field(path: impl Into<String>, msg: impl Into<String>) -> Error {
    Error::Config {
        field: path.into(),
        msg: msg.into(),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| {
            let msg = e.message().to_owned();
            match e.span() {
                Some(span) => field(format!("toml (bytes {}..{})", span.start, span.end), msg),
                None => field("toml", msg),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn class_count(&self) -> usize {
        match (&self.dataset.synthetic, &self.dataset.csv) {
            (Some(s), _) => s.class_count,
            (None, Some(c)) => c.class_count,
            (None, None) => 0,
        }
    }

    pub fn dim(&self) -> usize {
        match (&self.dataset.synthetic, &self.dataset.csv) {
            (Some(s), _) => s.dim,
            (None, Some(c)) => c.dim,
            (None, None) => 0,
        }
    }

    pub fn arch(&self) -> Result<MlpArchitecture> {
        let mut widths = vec![self.dim()];
        widths.extend(&self.model.hidden);
        widths.push(self.class_count());
        MlpArchitecture::new(widths, self.model.activation, self.master_seed)
    }

    /// Seed of trial `t`: the `(t + 1)`-th output of SplitMix64 seeded with
    /// `master_seed`.
    pub fn trial_seed(&self, t: usize) -> u64 {
        let mut rng = SplitMix64::seed_from_u64(self.master_seed);
        let mut s = 0;
        for _ in 0..=t {
            s = rng.next_u64();
        }
        s
    }

    pub fn trial_seeds(&self) -> Vec<u64> {
        let mut rng = SplitMix64::seed_from_u64(self.master_seed);
        (0..self.trial_count).map(|_| rng.next_u64()).collect()
    }

    pub fn methods(&self) -> Vec<UnlearnMethod> {
        self.unlearn.iter().map(|u| u.method).collect()
    }

    /// Resolved configuration for `method`: its configured entry merged
    /// over the built-in defaults, or the bare defaults when the method is
    /// not listed.
    pub fn unlearn_config(&self, method: UnlearnMethod) -> Result<UnlearnConfig> {
        let arch = self.arch()?;
        let base = UnlearnConfig::defaults_for(method, &arch);
        let Some((i, entry)) = self.unlearn.iter().enumerate().find(|(_, u)| u.method == method) else {
            return Ok(base);
        };
        let path = format!("unlearn[{i}]");
        let mut value = serde_json::to_value(&base)?;
        let overrides = serde_json::to_value(&entry.overrides)?;
        merge(&mut value, &overrides);
        value["method"] = serde_json::to_value(method)?;
        let cfg: UnlearnConfig = serde_json::from_value(value).map_err(|e| field(&path, e.to_string()))?;
        cfg.validate(&arch).map_err(|e| field(&path, e.to_string()))?;
        Ok(cfg)
    }

    pub fn shadow_epochs(&self) -> usize {
        self.attacks.shadow_epochs.unwrap_or(self.training.epochs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trial_count == 0 {
            return Err(field("trial_count", "must be at least 1"));
        }
        match (&self.dataset.synthetic, &self.dataset.csv) {
            (Some(_), Some(_)) => return Err(field("dataset", "give either `synthetic` or `csv`, not both")),
            (None, None) => return Err(field("dataset", "missing `synthetic` or `csv` section")),
            (Some(s), None) => {
                if s.dim == 0 {
                    return Err(field("dataset.synthetic.dim", "must be positive"));
                }
                if s.per_class == 0 {
                    return Err(field("dataset.synthetic.per_class", "must be positive"));
                }
                if !(s.spread >= 0.0 && s.spread.is_finite()) {
                    return Err(field("dataset.synthetic.spread", "must be finite and non-negative"));
                }
            }
            (None, Some(c)) => {
                if c.dim == 0 {
                    return Err(field("dataset.csv.dim", "must be positive"));
                }
                if self.dataset.reseed_per_trial {
                    return Err(field("dataset.reseed_per_trial", "only synthetic data can be redrawn"));
                }
            }
        }
        let k = self.class_count();
        if k < 2 {
            return Err(field("dataset.class_count", "need at least two classes"));
        }
        if let Some(i) = self.model.hidden.iter().position(|&w| w == 0) {
            return Err(field(format!("model.hidden[{i}]"), "width must be positive"));
        }
        self.training
            .sgd
            .validate()
            .map_err(|e| field("training.sgd", e.to_string()))?;
        self.validate_split(k)?;

        let mut seen = Vec::new();
        for (i, u) in self.unlearn.iter().enumerate() {
            if seen.contains(&u.method) {
                return Err(field(format!("unlearn[{i}].method"), format!("`{}` listed twice", u.method)));
            }
            seen.push(u.method);
            self.unlearn_config(u.method)?;
        }

        let a = &self.attacks;
        a.rea_class
            .validate()
            .map_err(|e| field("attacks.rea_class", e.to_string()))?;
        for (i, kind) in a.kinds.iter().enumerate() {
            let ok = match kind {
                AttackKind::ReaClass => self.mode == SplitMode::ClassWise,
                _ => self.mode == SplitMode::SampleWise,
            };
            if !ok {
                return Err(field(
                    format!("attacks.kinds[{i}]"),
                    format!("`{kind}` does not apply to {:?} splits", self.mode),
                ));
            }
        }
        let needs_shadows = a
            .kinds
            .iter()
            .any(|k| matches!(k, AttackKind::MiaLira | AttackKind::ReaSample));
        if needs_shadows && a.shadow_count < 2 {
            return Err(field("attacks.shadow_count", "likelihood-ratio scores need at least two shadows"));
        }
        if needs_shadows && self.dataset.csv.is_some() && a.shadow_count < 4 {
            return Err(field(
                "attacks.shadow_count",
                "file datasets train shadows on test halves and need at least four",
            ));
        }
        if a.kinds.contains(&AttackKind::MiaUp) && a.up_shadow_count == 0 {
            return Err(field("attacks.up_shadow_count", "must be positive"));
        }
        if !(a.fpr > 0.0 && a.fpr < 1.0) {
            return Err(field("attacks.fpr", "must lie in (0, 1)"));
        }
        if a.rea_sample.batch_size == 0 {
            return Err(field("attacks.rea_sample.batch_size", "must be positive"));
        }

        let l = &self.landscape;
        if l.resolution < 3 || l.resolution.is_multiple_of(2) {
            return Err(field("landscape.resolution", "must be odd and at least 3"));
        }
        if !(l.extent >= 0.0 && l.extent.is_finite()) {
            return Err(field("landscape.extent", "must be finite and non-negative"));
        }
        if !(l.trajectory_lr > 0.0) {
            return Err(field("landscape.trajectory_lr", "must be positive"));
        }
        Ok(())
    }

    fn validate_split(&self, k: usize) -> Result<()> {
        let s = &self.split;
        match self.mode {
            SplitMode::SampleWise => {
                if !(s.unlearn_fraction > 0.0 && s.unlearn_fraction < 1.0) {
                    return Err(field("split.unlearn_fraction", "must lie in (0, 1)"));
                }
            }
            SplitMode::ClassWise => {
                for (name, list) in [("unlearn_classes", &s.unlearn_classes), ("ood_classes", &s.ood_classes)] {
                    if let Some(list) = list {
                        if let Some(i) = list.iter().position(|&c| c >= k) {
                            return Err(field(
                                format!("split.{name}[{i}]"),
                                format!("class {} outside 0..{k}", list[i]),
                            ));
                        }
                    }
                }
                let n_u = s.unlearn_classes.as_ref().map_or(s.unlearn_count, Vec::len);
                let n_o = s.ood_classes.as_ref().map_or(s.ood_count, Vec::len);
                if n_u == 0 {
                    return Err(field("split.unlearn_count", "need at least one class to unlearn"));
                }
                if n_u + n_o >= k {
                    return Err(field(
                        "split.ood_count",
                        format!("{n_u} unlearned + {n_o} OOD classes leave nothing to retain out of {k}"),
                    ));
                }
                if let (Some(u), Some(o)) = (&s.unlearn_classes, &s.ood_classes) {
                    if let Some(i) = o.iter().position(|c| u.contains(c)) {
                        return Err(field(format!("split.ood_classes[{i}]"), "also listed as an unlearned class"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Recursive JSON object merge; `patch` wins on conflicts.
fn merge(base: &mut serde_json::Value, patch: &serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
mode = "class_wise"
trial_count = 2

[dataset.synthetic]
class_count = 6
dim = 4
per_class = 10

[model]
hidden = [8]

[training]
epochs = 2

[[unlearn]]
method = "ft"
epochs_phase1 = 3
sgd = { learning_rate = 0.02 }
"#;

    #[test]
    fn overrides_merge_over_defaults() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let ft = cfg.unlearn_config(UnlearnMethod::Ft).unwrap();
        assert_eq!(ft.epochs_phase1, 3);
        assert_eq!(ft.sgd.learning_rate, 0.02);
        assert_eq!(ft.sgd.momentum, SgdConfig::default().momentum);
        let arch = cfg.arch().unwrap();
        assert_eq!(arch.layer_widths, vec![4, 8, 6]);
        assert_eq!(
            cfg.unlearn_config(UnlearnMethod::Rl).unwrap(),
            UnlearnConfig::defaults_for(UnlearnMethod::Rl, &arch)
        );
    }

    #[test]
    fn trial_seeds_follow_splitmix() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let seeds = cfg.trial_seeds();
        assert_eq!(seeds, vec![cfg.trial_seed(0), cfg.trial_seed(1)]);
        assert_ne!(seeds[0], seeds[1]);
        // First SplitMix64 output for seed 0.
        assert_eq!(seeds[0], 0xE220_A839_7B1D_CDAF);
    }

    #[test]
    fn bad_override_names_the_entry() {
        let bad = MINIMAL.replace("epochs_phase1 = 3", "epochs_phase1 = \"three\"");
        match ExperimentConfig::from_toml_str(&bad) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "unlearn[0]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }
}
