//! The `report` command: evaluation rows per trial and method, pooled
//! attack statistics, ROC curves and a plain-text summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use unlearn_forge::attacks::{AttackKind, AttackReport};
use unlearn_forge::data::SplitMode;
use unlearn_forge::metrics::{
    accuracy_on, balanced_accuracy, best_balanced_threshold, representation_metrics, residual, roc_curve,
    threshold_at_fpr, tow, tpr_at_fpr, EvalReport, RocCurve,
};
use unlearn_forge::nn::MlpArchitecture;
use unlearn_forge::unlearn::UnlearnMethod;
use unlearn_forge::Result;

use crate::config::ExperimentConfig;
use crate::pipeline::{load_model, load_trial, run_trials, trial_dir, Timing, Trial};
use crate::store::{latest, RunManifest, Store};

pub const ATTACK_SUMMARY_HEADER: &str =
    "attack,method,members,nonmembers,auc,tpr_at_fpr,tau,balanced_accuracy,best_balanced_accuracy,cv_balanced_accuracy";
pub const ATTACK_TRIALS_HEADER: &str = "attack,method,trial,auc,tpr_at_fpr";
pub const TIMING_HEADER: &str = "trial,method,rte_seconds";

/// Attack results for one (attack, method) pair pooled over trials.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSummary {
    pub attack: AttackKind,
    pub method: UnlearnMethod,
    pub members: usize,
    pub nonmembers: usize,
    pub auc: f64,
    /// Percent.
    pub tpr_at_fpr: f64,
    /// Threshold calibrated to the target FPR on the pooled non-members.
    pub tau: f64,
    /// Percent, at `tau`.
    pub balanced_accuracy: f64,
    /// Percent, at the in-sample best threshold.
    pub best_balanced_accuracy: f64,
    /// Percent: threshold picked on one half of the trials, scored on the
    /// other, averaged over both directions.
    pub cv_balanced_accuracy: Option<f64>,
    pub curve: RocCurve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialAttack {
    pub attack: AttackKind,
    pub method: UnlearnMethod,
    pub trial: usize,
    pub auc: Option<f64>,
    pub tpr_at_fpr: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportOutcome {
    pub eval: Vec<EvalReport>,
    pub attacks: Vec<AttackSummary>,
    pub per_trial: Vec<TrialAttack>,
    /// Human-readable notes on missing artifacts.
    pub gaps: Vec<String>,
    pub empty: bool,
}

fn labeled(report: &AttackReport) -> Vec<(f64, bool)> {
    report
        .per_target_scores
        .iter()
        .filter_map(|t| t.member.map(|m| (t.score, m)))
        .collect()
}

fn read_report(root: &Path, rel: &Path) -> Result<Option<AttackReport>> {
    match latest(root, rel) {
        Some(p) => Ok(Some(AttackReport::from_json(&std::fs::read_to_string(p)?)?)),
        None => Ok(None),
    }
}

struct TrialResult {
    eval: Vec<EvalReport>,
    reports: Vec<(AttackKind, UnlearnMethod, Vec<(f64, bool)>)>,
    gaps: Vec<String>,
}

fn eval_trial(cfg: &ExperimentConfig, arch: &MlpArchitecture, root: &Path, t: usize) -> Result<TrialResult> {
    let mut out = TrialResult {
        eval: Vec::new(),
        reports: Vec::new(),
        gaps: Vec::new(),
    };
    let dir = trial_dir(t);
    if latest(root, dir.join("split.json")).is_none() {
        out.gaps.push(format!("{}: not trained", dir.display()));
        return Ok(out);
    }
    let trial = load_trial(cfg, root, t)?;
    let split = &trial.split;
    let accs = |tag: &str| -> Result<Option<[f64; 3]>> {
        if latest(root, dir.join(tag).join("model.ckpt")).is_none() {
            return Ok(None);
        }
        let q = load_model(root, arch, t, tag)?;
        Ok(Some([
            accuracy_on(&q, arch, &split.test)?,
            accuracy_on(&q, arch, &split.unlearned)?,
            accuracy_on(&q, arch, &split.retained)?,
        ]))
    };
    let reference = accs(UnlearnMethod::Retrain.tag())?;
    for m in cfg.methods() {
        let Some(a) = accs(m.tag())? else {
            out.gaps.push(format!("{}/{}: no unlearned model", dir.display(), m.tag()));
            continue;
        };
        let q = load_model(root, arch, t, m.tag())?;
        let timing: Option<Timing> = match latest(root, dir.join(m.tag()).join("timing.json")) {
            Some(p) => Some(serde_json::from_str(&std::fs::read_to_string(p)?)?),
            None => None,
        };
        let mut mia_efficacy = None;
        for kind in AttackKind::ALL {
            let rel = dir.join(m.tag()).join(format!("{}.json", kind.tag()));
            if let Some(r) = read_report(root, &rel)? {
                let scores = labeled(&r);
                if kind == AttackKind::MiaLira {
                    mia_efficacy = roc_curve(&scores).ok().map(|c| tpr_at_fpr(&c, cfg.attacks.fpr));
                }
                out.reports.push((kind, m, scores));
            }
        }
        let non_training = non_training_set(&trial);
        let representation = if cfg.metrics.representation && cfg.mode == SplitMode::ClassWise {
            Some(representation_metrics(
                &q,
                arch,
                &split.train_full,
                None,
                split.spec().unlearn_classes[0],
            )?)
        } else {
            None
        };
        let row = EvalReport {
            trial: t,
            method: m.tag().to_owned(),
            ta: a[0],
            ua: a[1],
            ra: a[2],
            mia_efficacy,
            tow: reference.map(|r| tow(a.map(|v| v / 100.0), r.map(|v| v / 100.0))),
            residual: residual(&q, arch, &split.unlearned, non_training, cfg.metrics.residual)?,
            rte_seconds: timing.map_or(f64::NAN, |t| t.rte_seconds),
            representation,
        };
        row.validate()?;
        out.eval.push(row);
    }
    Ok(out)
}

fn non_training_set(trial: &Trial) -> &unlearn_forge::data::LabeledDataset {
    let s = &trial.split;
    if s.spec().mode == SplitMode::ClassWise && !s.ood_pool.is_empty() {
        &s.ood_pool
    } else {
        &s.test
    }
}

fn cv_balanced_accuracy(per_trial: &[Vec<(f64, bool)>]) -> Option<f64> {
    if per_trial.len() < 2 {
        return None;
    }
    let half = per_trial.len() / 2;
    let a: Vec<(f64, bool)> = per_trial[..half].concat();
    let b: Vec<(f64, bool)> = per_trial[half..].concat();
    let (ta, _) = best_balanced_threshold(&a).ok()?;
    let (tb, _) = best_balanced_threshold(&b).ok()?;
    let ab = balanced_accuracy(&b, ta).ok()?;
    let ba = balanced_accuracy(&a, tb).ok()?;
    Some(0.5 * (ab + ba))
}

fn summarize(
    attack: AttackKind,
    method: UnlearnMethod,
    per_trial: &[Vec<(f64, bool)>],
    fpr: f64,
) -> Result<AttackSummary> {
    let pooled: Vec<(f64, bool)> = per_trial.concat();
    let curve = roc_curve(&pooled)?;
    let negatives: Vec<f64> = pooled.iter().filter(|s| !s.1).map(|s| s.0).collect();
    let tau = threshold_at_fpr(&negatives, fpr)?;
    Ok(AttackSummary {
        attack,
        method,
        members: pooled.iter().filter(|s| s.1).count(),
        nonmembers: negatives.len(),
        auc: curve.auc,
        tpr_at_fpr: tpr_at_fpr(&curve, fpr),
        tau,
        balanced_accuracy: balanced_accuracy(&pooled, tau)?,
        best_balanced_accuracy: best_balanced_threshold(&pooled)?.1,
        cv_balanced_accuracy: cv_balanced_accuracy(per_trial),
        curve,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Builds the report for the run in `root`, whose config is the
/// `config.toml` written there by `train`.
pub fn build_report(root: &Path) -> Result<(Option<ExperimentConfig>, ReportOutcome)> {
    let Some(cfg_path) = latest(root, "config.toml") else {
        return Ok((
            None,
            ReportOutcome {
                empty: true,
                gaps: vec![format!("no artifacts in {}", root.display())],
                ..Default::default()
            },
        ));
    };
    let cfg = ExperimentConfig::load(&cfg_path)?;
    let arch = cfg.arch()?;
    let trials: Vec<usize> = (0..cfg.trial_count).collect();
    let results = run_trials(&trials, |t| eval_trial(&cfg, &arch, root, t))?;

    let mut outcome = ReportOutcome::default();
    let mut grouped: BTreeMap<(AttackKind, UnlearnMethod), Vec<Vec<(f64, bool)>>> = BTreeMap::new();
    for (t, r) in results.into_iter().enumerate() {
        outcome.eval.extend(r.eval);
        outcome.gaps.extend(r.gaps);
        for (kind, method, scores) in r.reports {
            let curve = roc_curve(&scores).ok();
            outcome.per_trial.push(TrialAttack {
                attack: kind,
                method,
                trial: t,
                auc: curve.as_ref().map(|c| c.auc),
                tpr_at_fpr: curve.as_ref().map(|c| tpr_at_fpr(c, cfg.attacks.fpr)),
            });
            grouped.entry((kind, method)).or_default().push(scores);
        }
    }
    for ((kind, method), per_trial) in &grouped {
        match summarize(*kind, *method, per_trial, cfg.attacks.fpr) {
            Ok(s) => outcome.attacks.push(s),
            Err(e) => outcome.gaps.push(format!("{kind}/{method}: {e}")),
        }
    }
    outcome.empty = outcome.eval.is_empty() && outcome.attacks.is_empty();
    Ok((Some(cfg), outcome))
}

pub fn eval_csv(rows: &[EvalReport]) -> String {
    let mut s = format!("{}\n", EvalReport::CSV_HEADER);
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub fn timing_csv(rows: &[EvalReport]) -> String {
    let mut s = format!("{TIMING_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.trial, r.method, r.rte_seconds);
    }
    s
}

pub fn attack_summary_csv(rows: &[AttackSummary]) -> String {
    let mut s = format!("{ATTACK_SUMMARY_HEADER}\n");
    for a in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            a.attack,
            a.method,
            a.members,
            a.nonmembers,
            a.auc,
            a.tpr_at_fpr,
            a.tau,
            a.balanced_accuracy,
            a.best_balanced_accuracy,
            opt(a.cv_balanced_accuracy)
        );
    }
    s
}

pub fn attack_trials_csv(rows: &[TrialAttack]) -> String {
    let mut s = format!("{ATTACK_TRIALS_HEADER}\n");
    for a in rows {
        let _ = writeln!(s, "{},{},{},{},{}", a.attack, a.method, a.trial, opt(a.auc), opt(a.tpr_at_fpr));
    }
    s
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = if xs.len() > 1 {
        xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, v.sqrt())
}

pub fn summary_text(cfg: Option<&ExperimentConfig>, outcome: &ReportOutcome) -> String {
    let mut s = String::new();
    if outcome.empty {
        s.push_str("no artifacts to report\n");
        for g in &outcome.gaps {
            let _ = writeln!(s, "  {g}");
        }
        return s;
    }
    if let Some(cfg) = cfg {
        let _ = writeln!(
            s,
            "{:?} run, {} trial(s), master seed {}",
            cfg.mode, cfg.trial_count, cfg.master_seed
        );
    }
    let mut methods: Vec<&str> = outcome.eval.iter().map(|r| r.method.as_str()).collect();
    methods.dedup();
    methods.sort_unstable();
    methods.dedup();
    s.push_str("\nmethod      TA            UA            RA            ToW\n");
    for m in methods {
        let rows: Vec<&EvalReport> = outcome.eval.iter().filter(|r| r.method == m).collect();
        let col = |f: &dyn Fn(&EvalReport) -> Option<f64>| {
            let xs: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
            if xs.is_empty() {
                return "-".to_owned();
            }
            let (mu, sd) = mean_std(&xs);
            format!("{mu:.2}±{sd:.2}")
        };
        let _ = writeln!(
            s,
            "{m:<11} {:<13} {:<13} {:<13} {}",
            col(&|r| Some(r.ta)),
            col(&|r| Some(r.ua)),
            col(&|r| Some(r.ra)),
            col(&|r| r.tow)
        );
    }
    if !outcome.attacks.is_empty() {
        s.push_str("\nattack      method      AUC     TPR@FPR  bacc    best    cv\n");
        for a in &outcome.attacks {
            let _ = writeln!(
                s,
                "{:<11} {:<11} {:.3}   {:<7.2}  {:<6.2}  {:<6.2}  {}",
                a.attack.tag(),
                a.method.tag(),
                a.auc,
                a.tpr_at_fpr,
                a.balanced_accuracy,
                a.best_balanced_accuracy,
                a.cv_balanced_accuracy.map_or("-".into(), |v| format!("{v:.2}"))
            );
        }
    }
    if !outcome.gaps.is_empty() {
        s.push_str("\nmissing:\n");
        for g in &outcome.gaps {
            let _ = writeln!(s, "  {g}");
        }
    }
    s
}

pub fn cmd_report(root: &Path) -> Result<(ReportOutcome, Option<RunManifest>)> {
    let (cfg, outcome) = build_report(root)?;
    let Some(cfg) = cfg else {
        return Ok((outcome, None));
    };
    let store = Store::open(root, "report")?;
    store.write_str("report/eval.csv", &eval_csv(&outcome.eval))?;
    store.write_str("report/timing.csv", &timing_csv(&outcome.eval))?;
    store.write_str("report/attack_summary.csv", &attack_summary_csv(&outcome.attacks))?;
    store.write_str("report/attack_trials.csv", &attack_trials_csv(&outcome.per_trial))?;
    for a in &outcome.attacks {
        store.write_str(format!("report/roc_{}_{}.json", a.attack, a.method), &a.curve.to_json())?;
    }
    store.write_str("report/summary.txt", &summary_text(Some(&cfg), &outcome))?;
    let manifest = store.finish(cfg.master_seed, cfg.trial_seeds(), serde_json::to_value(&cfg)?)?;
    Ok((outcome, Some(manifest)))
}
