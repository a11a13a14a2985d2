//! Trial preparation and the `train`, `unlearn`, `attack` and `landscape`
//! commands. Each command reads what earlier commands left in the run
//! directory and fails with a not-found error when a prerequisite is
//! missing.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use unlearn_forge::attacks::{
    class_probe, mia_lira, mia_up, rea_classwise, rea_samplewise, train_shadow_ensemble, AttackKind, AttackReport,
    ReaClassConfig, ReaSampleConfig, ShadowEnsemble, UpShadow,
};
use unlearn_forge::data::{
    load_csv_dataset, split_for_unlearning, split_from_manifest, LabeledDataset, SplitManifest, SplitMode, SplitSpec,
    SyntheticSpec, UnlearnSplit,
};
use unlearn_forge::landscape::{loss_grid, make_plane, project_trajectory, trajectory_csv};
use unlearn_forge::metrics::threshold_at_fpr;
use unlearn_forge::nn::train::{train, EpochRecord};
use unlearn_forge::nn::{checkpoint, MlpArchitecture, ParamSet, SgdConfig};
use unlearn_forge::par::{self, ExecMode};
use unlearn_forge::unlearn::{run_unlearning, UnlearnMethod};
use unlearn_forge::{Error, Result};

use crate::config::ExperimentConfig;
use crate::store::{require, RunManifest, Store};

pub const THREADS_ENV: &str = "UNLEARN_FORGE_THREADS";
pub const ORIGINAL: &str = "original";

const CLASS_DRAW: u64 = 0xA076_1D64_78BD_642F;
const HALF_DRAW: u64 = 0xE703_7ED1_A0B4_28DB;

pub fn trial_dir(t: usize) -> PathBuf {
    PathBuf::from(format!("trial_{t:03}"))
}

/// Cap on worker threads from `UNLEARN_FORGE_THREADS`.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config {
                field: THREADS_ENV.into(),
                msg: format!("expected a positive integer, got `{v}`"),
            }),
        },
    }
}

/// Runs `f` over the selected trials in parallel, in trial order.
pub fn run_trials<R, F>(trials: &[usize], f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize) -> Result<R> + Sync + Send,
{
    let cap = thread_cap()?;
    par::with_thread_cap(cap, || par::map(ExecMode::default(), trials, |&t| f(t)))
        .into_iter()
        .collect()
}

/// Which trials a command touches.
pub fn select_trials(cfg: &ExperimentConfig, only: Option<usize>) -> Result<Vec<usize>> {
    match only {
        Some(t) if t >= cfg.trial_count => Err(Error::Config {
            field: "--trial".into(),
            msg: format!("trial {t} outside 0..{}", cfg.trial_count),
        }),
        Some(t) => Ok(vec![t]),
        None => Ok((0..cfg.trial_count).collect()),
    }
}

/// Everything one trial needs: its seed, the data source and the split.
#[derive(Debug, Clone)]
pub struct Trial {
    pub index: usize,
    pub seed: u64,
    pub synthetic: Option<SyntheticSpec>,
    pub split: UnlearnSplit,
}

fn source_data(cfg: &ExperimentConfig, seed: u64) -> Result<(LabeledDataset, LabeledDataset, Option<SyntheticSpec>)> {
    if let Some(spec) = &cfg.dataset.synthetic {
        let mut spec = spec.clone();
        if cfg.dataset.reseed_per_trial {
            spec.seed = seed;
        }
        return Ok((spec.train_set(), spec.test_set(), Some(spec)));
    }
    let csv = cfg.dataset.csv.as_ref().ok_or_else(|| Error::Config {
        field: "dataset".into(),
        msg: "no data source".into(),
    })?;
    let train = load_csv_dataset(&csv.train, csv.class_count)?;
    let test = load_csv_dataset(&csv.test, csv.class_count)?;
    for (name, d) in [("train", &train), ("test", &test)] {
        if d.dim() != csv.dim {
            return Err(Error::Config {
                field: "dataset.csv.dim".into(),
                msg: format!("{name} file has {} features, config says {}", d.dim(), csv.dim),
            });
        }
    }
    Ok((train, test, None))
}

fn split_spec(cfg: &ExperimentConfig, seed: u64) -> SplitSpec {
    let s = &cfg.split;
    match cfg.mode {
        SplitMode::SampleWise => SplitSpec::sample_wise(s.unlearn_fraction, seed),
        SplitMode::ClassWise => {
            let mut order: Vec<usize> = (0..cfg.class_count()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ CLASS_DRAW));
            let unlearn = s
                .unlearn_classes
                .clone()
                .unwrap_or_else(|| order.iter().copied().take(s.unlearn_count).collect());
            let ood = s.ood_classes.clone().unwrap_or_else(|| {
                order
                    .iter()
                    .copied()
                    .filter(|c| !unlearn.contains(c))
                    .take(s.ood_count)
                    .collect()
            });
            SplitSpec::class_wise(unlearn, ood, seed)
        }
    }
}

/// Draws trial `t` from scratch.
pub fn prepare_trial(cfg: &ExperimentConfig, t: usize) -> Result<Trial> {
    let seed = cfg.trial_seed(t);
    let (train, test, synthetic) = source_data(cfg, seed)?;
    let split = split_for_unlearning(&train, &test, &split_spec(cfg, seed))?;
    Ok(Trial {
        index: t,
        seed,
        synthetic,
        split,
    })
}

/// Rebuilds trial `t` from the split written by `train`.
pub fn load_trial(cfg: &ExperimentConfig, root: &Path, t: usize) -> Result<Trial> {
    let seed = cfg.trial_seed(t);
    let path = require(root, trial_dir(t).join("split.json"))?;
    let manifest: SplitManifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let (train, test, synthetic) = source_data(cfg, seed)?;
    let split = split_from_manifest(&train, &test, &manifest)?;
    Ok(Trial {
        index: t,
        seed,
        synthetic,
        split,
    })
}

/// Loads a trial's checkpoint (`original` or a method tag) and checks it
/// against the configured architecture.
pub fn load_model(root: &Path, arch: &MlpArchitecture, t: usize, tag: &str) -> Result<ParamSet> {
    let rel = if tag == ORIGINAL {
        trial_dir(t).join("original.ckpt")
    } else {
        trial_dir(t).join(tag).join("model.ckpt")
    };
    let (saved, params) = checkpoint::load(&require(root, rel)?)?;
    if saved.layer_widths != arch.layer_widths || saved.activation != arch.activation {
        return Err(Error::RejectedSpec(format!(
            "checkpoint for {tag} in trial {t} has layers {:?}, config expects {:?}",
            saved.layer_widths, arch.layer_widths
        )));
    }
    Ok(params)
}

fn finish(store: Store, cfg: &ExperimentConfig) -> Result<RunManifest> {
    store.finish(cfg.master_seed, cfg.trial_seeds(), serde_json::to_value(cfg)?)
}

fn epoch_log_csv(log: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,loss,lr\n");
    for r in log {
        s.push_str(&format!("{},{},{}\n", r.epoch, r.loss, r.lr));
    }
    s
}

pub fn cmd_train(cfg: &ExperimentConfig, only: Option<usize>) -> Result<RunManifest> {
    let root = cfg.output_dir.clone();
    let store = Store::open(&root, "train")?;
    store.write_str("config.toml", &cfg.to_toml()?)?;
    let arch = cfg.arch()?;
    run_trials(&select_trials(cfg, only)?, |t| {
        let trial = prepare_trial(cfg, t)?;
        let mut p = arch.init_params_with_seed(trial.seed);
        let log = train(&mut p, &arch, &trial.split.train_full, &cfg.training.sgd, cfg.training.epochs, trial.seed)?;
        let dir = trial_dir(t);
        store.write(dir.join("original.ckpt"), &checkpoint::encode(&arch, &p)?)?;
        store.write_str(dir.join("split.json"), &serde_json::to_string_pretty(&trial.split.manifest)?)?;
        store.write_str(dir.join("train_log.csv"), &epoch_log_csv(&log))?;
        Ok(())
    })?;
    finish(store, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub rte_seconds: f64,
}

fn chosen_methods(cfg: &ExperimentConfig, method: Option<UnlearnMethod>) -> Result<Vec<UnlearnMethod>> {
    let methods = match method {
        Some(m) => vec![m],
        None => cfg.methods(),
    };
    if methods.is_empty() {
        return Err(Error::Config {
            field: "unlearn".into(),
            msg: "no unlearning methods configured".into(),
        });
    }
    Ok(methods)
}

pub fn cmd_unlearn(cfg: &ExperimentConfig, method: Option<UnlearnMethod>, only: Option<usize>) -> Result<RunManifest> {
    let root = cfg.output_dir.clone();
    let methods = chosen_methods(cfg, method)?;
    let configs = methods
        .iter()
        .map(|&m| cfg.unlearn_config(m))
        .collect::<Result<Vec<_>>>()?;
    let arch = cfg.arch()?;
    let trials = select_trials(cfg, only)?;
    for &t in &trials {
        require(&root, trial_dir(t).join("original.ckpt"))?;
    }
    let store = Store::open(&root, "unlearn")?;
    run_trials(&trials, |t| {
        let trial = load_trial(cfg, &root, t)?;
        let original = load_model(&root, &arch, t, ORIGINAL)?;
        for ucfg in &configs {
            let ucfg = unlearn_forge::unlearn::UnlearnConfig {
                seed: trial.seed,
                ..ucfg.clone()
            };
            let out = run_unlearning(&original, &arch, &trial.split, &ucfg)?;
            let dir = trial_dir(t).join(ucfg.method.tag());
            store.write(dir.join("model.ckpt"), &checkpoint::encode(&arch, &out.final_params)?)?;
            store.write_str(dir.join("phase_log.csv"), &out.phase_log_csv())?;
            let timing = Timing {
                rte_seconds: out.rte_seconds,
            };
            store.write_str(dir.join("timing.json"), &serde_json::to_string_pretty(&timing)?)?;
        }
        Ok(())
    })?;
    finish(store, cfg)
}

/// Sample-wise inference set: an evenly spaced subsample of the retained
/// rows, then every unlearned row, then every test row.
#[derive(Debug, Clone)]
pub struct InferenceSet {
    pub data: LabeledDataset,
    pub ids: Vec<String>,
    /// `None` for retained rows, which are neither members nor
    /// non-members of the unlearned set.
    pub member: Vec<Option<bool>>,
    /// Rows of `data` that come from the test split.
    pub test_offset: usize,
}

pub fn inference_set(split: &UnlearnSplit, retained: usize) -> Result<InferenceSet> {
    let n = split.retained.len();
    let rows: Vec<usize> = (0..n).step_by((n / retained.max(1)).max(1)).take(retained).collect();
    let data = split
        .retained
        .subset(&rows, "retained_sample")
        .concat(&split.unlearned, "inference")?
        .concat(&split.test, "inference")?;
    let mut ids = Vec::with_capacity(data.len());
    let mut member = Vec::with_capacity(data.len());
    for &r in &rows {
        ids.push(format!("r{}", split.manifest.retained_idx[r]));
        member.push(None);
    }
    for &u in &split.manifest.unlearned_idx {
        ids.push(format!("u{u}"));
        member.push(Some(true));
    }
    for &i in &split.manifest.test_idx {
        ids.push(format!("t{i}"));
        member.push(Some(false));
    }
    Ok(InferenceSet {
        test_offset: rows.len() + split.unlearned.len(),
        data,
        ids,
        member,
    })
}

fn label(mut report: AttackReport, inf: &InferenceSet) -> AttackReport {
    for ((t, id), m) in report.per_target_scores.iter_mut().zip(&inf.ids).zip(&inf.member) {
        t.target = id.clone();
        t.member = *m;
    }
    report
}

/// Halves of the test split in complementary pairs: shadow `2j` takes a
/// random half and shadow `2j + 1` the rest, so every row is held out of
/// at least `count / 2` shadows.
fn test_halves(len: usize, count: usize, seed: u64) -> Vec<Vec<usize>> {
    (0..count)
        .map(|k| {
            let mut idx: Vec<usize> = (0..len).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ HALF_DRAW ^ (k / 2) as u64));
            let mut half = if k % 2 == 0 {
                idx[..len / 2].to_vec()
            } else {
                idx[len / 2..].to_vec()
            };
            half.sort_unstable();
            half
        })
        .collect()
}

/// Offline shadows: fresh synthetic draws, or random halves of the test
/// split for file datasets (masked as in-training for those rows).
pub fn shadow_ensemble(cfg: &ExperimentConfig, arch: &MlpArchitecture, trial: &Trial, inf: &InferenceSet) -> Result<ShadowEnsemble> {
    let a = &cfg.attacks;
    let epochs = cfg.shadow_epochs();
    match &trial.synthetic {
        Some(spec) => {
            let per = a.shadow_per_class.unwrap_or(spec.per_class);
            train_shadow_ensemble(
                arch,
                |k| spec.sample(per, 2 + k as u64, &format!("shadow_{k}")),
                &cfg.training.sgd,
                epochs,
                a.shadow_count,
                inf.data.len(),
                trial.seed,
                ExecMode::default(),
            )
        }
        None => {
            let test = &trial.split.test;
            let halves = test_halves(test.len(), a.shadow_count, trial.seed);
            let mut ens = train_shadow_ensemble(
                arch,
                |k| test.subset(&halves[k], format!("shadow_{k}")),
                &cfg.training.sgd,
                epochs,
                a.shadow_count,
                inf.data.len(),
                trial.seed,
                ExecMode::default(),
            )?;
            for (mask, half) in ens.in_out_masks.iter_mut().zip(&halves) {
                for &r in half {
                    mask[inf.test_offset + r] = true;
                }
            }
            Ok(ens)
        }
    }
}

fn up_shadows(
    cfg: &ExperimentConfig,
    arch: &MlpArchitecture,
    trial: &Trial,
    method: UnlearnMethod,
) -> Result<Vec<UpShadow>> {
    let ucfg = cfg.unlearn_config(method)?;
    let a = &cfg.attacks;
    let halves = test_halves(trial.split.test.len(), a.up_shadow_count, trial.seed ^ 1);
    par::map_range(ExecMode::default(), a.up_shadow_count, |k| {
        let seed = trial.seed.wrapping_add(0x5851_F42D_4C95_7F2D_u64.wrapping_mul(k as u64 + 1));
        let (train_data, test_data) = match &trial.synthetic {
            Some(spec) => {
                let per = a.shadow_per_class.unwrap_or(spec.per_class);
                let n_test = ((per as f64) * spec.test_fraction).round().max(1.0) as usize;
                (
                    spec.sample(per, 1000 + 2 * k as u64, "up_train"),
                    spec.sample(n_test, 1001 + 2 * k as u64, "up_test"),
                )
            }
            None => {
                let test = &trial.split.test;
                let rest: Vec<usize> = (0..test.len()).filter(|i| halves[k].binary_search(i).is_err()).collect();
                (test.subset(&halves[k], "up_train"), test.subset(&rest, "up_test"))
            }
        };
        let split = split_for_unlearning(&train_data, &test_data, &SplitSpec::sample_wise(cfg.split.unlearn_fraction, seed))?;
        let mut p = arch.init_params_with_seed(seed);
        train(&mut p, arch, &split.train_full, &cfg.training.sgd, cfg.shadow_epochs(), seed)?;
        let out = run_unlearning(&p, arch, &split, &unlearn_forge::unlearn::UnlearnConfig { seed, ..ucfg.clone() })?;
        Ok(UpShadow {
            params: out.final_params,
            unlearned: split.unlearned,
            test: split.test,
        })
    })
    .into_iter()
    .collect()
}

fn calibrate(report: &mut AttackReport, fpr: f64) -> Result<()> {
    let negatives: Vec<f64> = report
        .per_target_scores
        .iter()
        .filter(|t| t.member == Some(false))
        .map(|t| t.score)
        .collect();
    if !negatives.is_empty() {
        report.apply_threshold(threshold_at_fpr(&negatives, fpr)?);
    }
    Ok(())
}

/// Class-wise ReA over the unlearned classes and the OOD candidates.
pub fn rea_class_report(
    cfg: &ExperimentConfig,
    arch: &MlpArchitecture,
    trial: &Trial,
    victim: &ParamSet,
) -> Result<AttackReport> {
    let spec = trial.split.spec();
    let rcfg = ReaClassConfig {
        seed: trial.seed,
        unlearn_label: spec.unlearn_classes[0],
        ..cfg.attacks.rea_class.clone()
    };
    let candidates: Vec<usize> = spec.unlearn_classes.iter().chain(&spec.ood_classes).copied().collect();
    let mut scores = Vec::with_capacity(candidates.len());
    let mut entries = Vec::new();
    for &c in &candidates {
        let (inferred, reference) = class_probe(&trial.split, c, &rcfg)?;
        let out = rea_classwise(victim, arch, &inferred, &reference, &rcfg, ExecMode::default())?;
        scores.push(out.confidence);
        entries.extend(out.indices);
    }
    let mut report = AttackReport::from_scores(AttackKind::ReaClass.tag(), &scores);
    for (t, &c) in report.per_target_scores.iter_mut().zip(&candidates) {
        t.target = format!("class_{c}");
        t.member = Some(spec.unlearn_classes.contains(&c));
    }
    report.resonance_indices = Some(entries);
    report.config = serde_json::to_value(&rcfg)?;
    Ok(report)
}

pub fn chosen_attacks(cfg: &ExperimentConfig, attack: Option<AttackKind>) -> Result<Vec<AttackKind>> {
    let kinds = match attack {
        Some(k) => {
            let ok = match k {
                AttackKind::ReaClass => cfg.mode == SplitMode::ClassWise,
                _ => cfg.mode == SplitMode::SampleWise,
            };
            if !ok {
                return Err(Error::Config {
                    field: "--attack".into(),
                    msg: format!("`{k}` does not apply to {:?} splits", cfg.mode),
                });
            }
            vec![k]
        }
        None => cfg.attacks.kinds.clone(),
    };
    if kinds.is_empty() {
        return Err(Error::Config {
            field: "attacks.kinds".into(),
            msg: "no attacks configured".into(),
        });
    }
    Ok(kinds)
}

pub fn cmd_attack(
    cfg: &ExperimentConfig,
    attack: Option<AttackKind>,
    method: Option<UnlearnMethod>,
    only: Option<usize>,
) -> Result<RunManifest> {
    let root = cfg.output_dir.clone();
    let kinds = chosen_attacks(cfg, attack)?;
    let methods = chosen_methods(cfg, method)?;
    let arch = cfg.arch()?;
    let trials = select_trials(cfg, only)?;
    for &t in &trials {
        for m in &methods {
            require(&root, trial_dir(t).join(m.tag()).join("model.ckpt"))?;
        }
    }
    let store = Store::open(&root, "attack")?;
    let save = |t: usize, m: UnlearnMethod, report: &AttackReport| -> Result<()> {
        report.validate()?;
        let dir = trial_dir(t).join(m.tag());
        let tag = &report.attack_tag;
        store.write_str(dir.join(format!("{tag}.json")), &report.to_json()?)?;
        store.write_str(dir.join(format!("{tag}.csv")), &report.to_csv()?)?;
        Ok(())
    };
    run_trials(&trials, |t| {
        let trial = load_trial(cfg, &root, t)?;
        let victims = methods
            .iter()
            .map(|&m| Ok((m, load_model(&root, &arch, t, m.tag())?)))
            .collect::<Result<Vec<_>>>()?;
        if kinds.contains(&AttackKind::ReaClass) {
            for (m, v) in &victims {
                save(t, *m, &rea_class_report(cfg, &arch, &trial, v)?)?;
            }
        }
        let wants_lira = kinds.contains(&AttackKind::MiaLira) || kinds.contains(&AttackKind::ReaSample);
        let wants_up = kinds.contains(&AttackKind::MiaUp);
        if !(wants_lira || wants_up) {
            return Ok(());
        }
        let inf = inference_set(&trial.split, cfg.attacks.inference_retained)?;
        if wants_lira {
            let ens = shadow_ensemble(cfg, &arch, &trial, &inf)?;
            for (m, v) in &victims {
                if kinds.contains(&AttackKind::MiaLira) {
                    let mut r = label(mia_lira(&ens, &arch, v, &inf.data)?, &inf);
                    calibrate(&mut r, cfg.attacks.fpr)?;
                    save(t, *m, &r)?;
                }
                if kinds.contains(&AttackKind::ReaSample) {
                    let rcfg = ReaSampleConfig {
                        seed: trial.seed,
                        ..cfg.attacks.rea_sample.clone()
                    };
                    let mut r = label(rea_samplewise(v, &arch, &inf.data, &rcfg, &ens)?, &inf);
                    r.config = serde_json::to_value(&rcfg)?;
                    calibrate(&mut r, cfg.attacks.fpr)?;
                    save(t, *m, &r)?;
                }
            }
        }
        if wants_up {
            for (m, v) in &victims {
                let shadows = up_shadows(cfg, &arch, &trial, *m)?;
                let mut r = label(mia_up(&shadows, &arch, v, &inf.data)?, &inf);
                calibrate(&mut r, cfg.attacks.fpr)?;
                save(t, *m, &r)?;
            }
        }
        Ok(())
    })?;
    finish(store, cfg)
}

/// Loss grids around a trial's model on the unlearned, test and OOD sets,
/// plus the projected path of fine-tuning it on the unlearned set.
pub fn cmd_landscape(cfg: &ExperimentConfig, method: Option<UnlearnMethod>, only: Option<usize>) -> Result<RunManifest> {
    let root = cfg.output_dir.clone();
    let arch = cfg.arch()?;
    let tag = method.map_or(ORIGINAL, UnlearnMethod::tag);
    let t = only.unwrap_or(0);
    select_trials(cfg, Some(t))?;
    let victim = load_model(&root, &arch, t, tag)?;
    let trial = load_trial(cfg, &root, t)?;
    let store = Store::open(&root, "landscape")?;
    let l = &cfg.landscape;
    let basis = make_plane(&victim, trial.seed, l.extent, l.resolution)?;
    let dir = trial_dir(t).join("landscape");
    let sets = [
        ("unlearned", &trial.split.unlearned),
        ("test", &trial.split.test),
        ("ood", &trial.split.ood_pool),
    ];
    for (name, data) in sets {
        if data.is_empty() {
            continue;
        }
        let grid = loss_grid(&basis, &arch, data, ExecMode::default())?;
        store.write_str(dir.join(format!("{tag}_{name}.csv")), &grid.to_csv())?;
        store.write_str(dir.join(format!("{tag}_{name}.json")), &grid.to_json(&basis, name)?)?;
    }
    let sgd = SgdConfig {
        learning_rate: l.trajectory_lr,
        ..cfg.training.sgd.clone()
    };
    let mut checkpoints = vec![victim.clone()];
    let mut p = victim;
    for e in 0..l.trajectory_epochs {
        train(&mut p, &arch, &trial.split.unlearned, &sgd, 1, trial.seed.wrapping_add(e as u64))?;
        checkpoints.push(p.clone());
    }
    let points = project_trajectory(&checkpoints, &basis)?;
    store.write_str(dir.join(format!("{tag}_trajectory.csv")), &trajectory_csv(&points))?;
    finish(store, cfg)
}
