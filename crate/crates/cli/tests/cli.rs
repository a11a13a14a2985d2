use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use unlearn_forge::attacks::AttackReport;
use unlearn_forge::data::SyntheticSpec;
use unlearn_forge::metrics::{tow, EvalReport};
use unlearn_forge_cli::pipeline::{inference_set, prepare_trial};
use unlearn_forge_cli::report::{ATTACK_SUMMARY_HEADER, ATTACK_TRIALS_HEADER, TIMING_HEADER};
use unlearn_forge_cli::store::RunManifest;
use unlearn_forge_cli::ExperimentConfig;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_unlearn-forge"));
    c.env_remove("UNLEARN_FORGE_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn classwise_toml(out: &Path) -> String {
    format!(
        r#"
mode = "class_wise"
trial_count = 2
master_seed = 11
output_dir = "{}"

[dataset.synthetic]
class_count = 6
dim = 6
per_class = 30
spread = 0.5

[model]
hidden = [16]

[training]
epochs = 5

[split]
unlearn_count = 1
ood_count = 2

[[unlearn]]
method = "retrain"
epochs_phase1 = 5

[[unlearn]]
method = "ft"
epochs_phase1 = 2

[[unlearn]]
method = "rl"

[[unlearn]]
method = "our"
epochs_phase1 = 2
epochs_phase2 = 2

[attacks]
kinds = ["rea_class"]

[attacks.rea_class]
learning_rates = [0.01, 0.05]
idx_max = 10
inferred_size = 10
reference_ratio = 2.0

[metrics]
representation = true

[landscape]
resolution = 5
trajectory_epochs = 2
"#,
        out.display()
    )
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn pipeline(cfg: &Path) {
    let c = cfg.to_str().unwrap();
    for cmd in ["train", "unlearn", "attack"] {
        let o = run(&[cmd, "--config", c]);
        assert_eq!(code(&o), 0, "{cmd}: {}", stderr(&o));
    }
    let o = run(&["report", "--config", c]);
    assert_eq!(code(&o), 0, "report: {}", stderr(&o));
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn full_pipeline_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    pipeline(&write_config(tmp.path(), "a.toml", &classwise_toml(&a)));
    pipeline(&write_config(tmp.path(), "b.toml", &classwise_toml(&b)));
    for rel in [
        "report/eval.csv",
        "report/attack_summary.csv",
        "report/attack_trials.csv",
        "trial_000/original.ckpt",
        "trial_001/our/model.ckpt",
        "trial_001/rl/rea_class.csv",
        "trial_000/train_log.csv",
    ] {
        assert_eq!(read(a.join(rel)), read(b.join(rel)), "{rel} differs");
    }
}

#[test]
fn report_outputs_follow_documented_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    pipeline(&write_config(tmp.path(), "c.toml", &classwise_toml(&out)));
    let eval = String::from_utf8(read(out.join("report/eval.csv"))).unwrap();
    let mut lines = eval.lines();
    assert_eq!(
        lines.next().unwrap(),
        "trial,method,ta,ua,ra,mia_efficacy,tow,residual,variance,silhouette,overlap"
    );
    assert_eq!(EvalReport::CSV_HEADER.split(',').count(), 11);
    assert_eq!(lines.count(), 2 * 4, "one row per (trial, method)");
    for (file, header) in [
        ("report/attack_summary.csv", ATTACK_SUMMARY_HEADER),
        ("report/attack_trials.csv", ATTACK_TRIALS_HEADER),
        ("report/timing.csv", TIMING_HEADER),
    ] {
        let text = String::from_utf8(read(out.join(file))).unwrap();
        assert_eq!(text.lines().next().unwrap(), header, "{file}");
    }
    let summary = String::from_utf8(read(out.join("report/attack_summary.csv"))).unwrap();
    for row in summary.lines().skip(1) {
        let f: Vec<&str> = row.split(',').collect();
        // Pooled population: trials x (1 unlearned + 2 OOD candidates).
        assert_eq!(f[2], "2", "{row}");
        assert_eq!(f[3], "4", "{row}");
    }
    assert!(out.join("report/roc_rea_class_rl.json").exists());
    assert!(out.join("report/summary.txt").exists());
}

#[test]
fn tow_column_matches_metric_recompute() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    pipeline(&write_config(tmp.path(), "c.toml", &classwise_toml(&out)));
    let eval = String::from_utf8(read(out.join("report/eval.csv"))).unwrap();
    let rows: Vec<Vec<String>> = eval
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect();
    let metrics = |r: &[String]| -> [f64; 3] { [2, 3, 4].map(|i| r[i].parse::<f64>().unwrap() / 100.0) };
    for r in &rows {
        let reference = rows
            .iter()
            .find(|q| q[0] == r[0] && q[1] == "retrain")
            .expect("retrain row");
        let expect = tow(metrics(r), metrics(reference));
        assert_eq!(r[6].parse::<f64>().unwrap(), expect, "{r:?}");
        if r[1] == "retrain" {
            assert_eq!(expect, 1.0);
        }
    }
}

#[test]
fn invalid_class_id_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let text = classwise_toml(&tmp.path().join("run"))
        .replace("unlearn_count = 1", "unlearn_count = 1\nunlearn_classes = [9]");
    let cfg = write_config(tmp.path(), "bad.toml", &text);
    let o = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("split.unlearn_classes[0]"), "{}", stderr(&o));
}

#[test]
fn unknown_keys_and_bad_flags_are_validation_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let text = classwise_toml(&tmp.path().join("run")).replace("[model]", "[model]\ndepth = 3");
    let cfg = write_config(tmp.path(), "bad.toml", &text);
    assert_eq!(code(&run(&["train", "--config", cfg.to_str().unwrap()])), 2);
    let good = write_config(tmp.path(), "good.toml", &classwise_toml(&tmp.path().join("run")));
    let g = good.to_str().unwrap();
    assert_eq!(code(&run(&["unlearn", "--config", g, "--method", "salun"])), 2);
    let o = run(&["attack", "--config", g, "--attack", "mia_lira"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--attack"));
    let o = bin()
        .args(["train", "--config", g])
        .env("UNLEARN_FORGE_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("UNLEARN_FORGE_THREADS"));
    assert_eq!(code(&run(&["train"])), 2);
}

#[test]
fn missing_checkpoint_is_not_found() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &classwise_toml(&tmp.path().join("run")));
    let c = cfg.to_str().unwrap();
    let o = run(&["unlearn", "--config", c]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("not found"), "{}", stderr(&o));
    assert_eq!(code(&run(&["train", "--config", c])), 0);
    let o = run(&["attack", "--config", c]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("model.ckpt"), "{}", stderr(&o));
    assert_eq!(code(&run(&["report", "--config", c, "--seed", "0"])), 0);
}

#[test]
fn empty_run_dir_reports_no_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["report", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("no artifacts"));
    assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 0);
}

#[test]
fn partial_runs_list_gaps() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = write_config(tmp.path(), "c.toml", &classwise_toml(&out));
    let c = cfg.to_str().unwrap();
    assert_eq!(code(&run(&["train", "--config", c, "--trial", "0"])), 0);
    assert_eq!(code(&run(&["unlearn", "--config", c, "--trial", "0", "--method", "retrain"])), 0);
    let o = run(&["report", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("trial_001: not trained"), "{text}");
    assert!(text.contains("ft: no unlearned model"), "{text}");
}

#[test]
fn reruns_write_versions_and_manifest_lists_each_path_once() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = write_config(tmp.path(), "c.toml", &classwise_toml(&out));
    let c = cfg.to_str().unwrap();
    assert_eq!(code(&run(&["train", "--config", c, "--trial", "0"])), 0);
    let first = read(out.join("trial_000/original.ckpt"));
    assert_eq!(code(&run(&["train", "--config", c, "--trial", "0"])), 0);
    assert!(!out.join("trial_000/original.v2.ckpt").exists());
    assert_eq!(code(&run(&["train", "--config", c, "--trial", "0", "--seed", "12"])), 0);
    assert!(out.join("trial_000/original.v2.ckpt").exists());
    assert_eq!(read(out.join("trial_000/original.ckpt")), first);

    let m = RunManifest::load(&out).unwrap().unwrap();
    let mut paths: Vec<_> = m.artifacts.iter().map(|a| a.path.clone()).collect();
    let n = paths.len();
    paths.sort();
    paths.dedup();
    assert_eq!(paths.len(), n);
    assert_eq!(m.master_seed, 12);
    assert_eq!(m.commands.len(), 3);
}

#[test]
fn training_log_epochs_are_monotone() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = write_config(tmp.path(), "c.toml", &classwise_toml(&out));
    assert_eq!(code(&run(&["train", "--config", cfg.to_str().unwrap()])), 0);
    let log = String::from_utf8(read(out.join("trial_001/train_log.csv"))).unwrap();
    let epochs: Vec<usize> = log.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(epochs, (1..=5).collect::<Vec<_>>());
}

#[test]
fn landscape_writes_grids_and_trajectory() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = write_config(tmp.path(), "c.toml", &classwise_toml(&out));
    let c = cfg.to_str().unwrap();
    assert_eq!(code(&run(&["train", "--config", c])), 0);
    assert_eq!(code(&run(&["landscape", "--config", c, "--trial", "1"])), 0);
    let dir = out.join("trial_001/landscape");
    for name in ["unlearned", "test", "ood"] {
        let grid = String::from_utf8(read(dir.join(format!("original_{name}.csv")))).unwrap();
        assert_eq!(grid.lines().count(), 1 + 25);
        assert!(dir.join(format!("original_{name}.json")).exists());
    }
    let traj = String::from_utf8(read(dir.join("original_trajectory.csv"))).unwrap();
    assert_eq!(traj.lines().count(), 1 + 3);
    assert!(traj.lines().nth(1).unwrap().starts_with("0,0,0"));
    assert_eq!(code(&run(&["landscape", "--config", c, "--method", "our"])), 3);
}

fn write_csv(path: &Path, data: &unlearn_forge::data::LabeledDataset) {
    let mut s = String::new();
    for i in 0..data.len() {
        s.push_str(&data.labels[i].to_string());
        for v in data.features.row(i) {
            s.push(',');
            s.push_str(&v.to_string());
        }
        s.push('\n');
    }
    std::fs::write(path, s).unwrap();
}

#[test]
fn samplewise_pipeline_on_csv_data() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        class_count: 4,
        dim: 5,
        per_class: 40,
        spread: 1.0,
        test_fraction: 0.5,
        seed: 3,
        ..Default::default()
    };
    let (train_csv, test_csv) = (tmp.path().join("train.csv"), tmp.path().join("test.csv"));
    write_csv(&train_csv, &spec.train_set());
    write_csv(&test_csv, &spec.test_set());
    let out = tmp.path().join("run");
    let text = format!(
        r#"
mode = "sample_wise"
trial_count = 1
output_dir = "{}"

[dataset.csv]
train = "{}"
test = "{}"
class_count = 4
dim = 5

[model]
hidden = [12]

[training]
epochs = 4

[[unlearn]]
method = "ga"

[attacks]
kinds = ["mia_lira", "rea_sample", "mia_up"]
shadow_count = 6
up_shadow_count = 2
inference_retained = 40

[attacks.rea_sample]
pseudo_retain_size = 20
epochs = 1
"#,
        out.display(),
        train_csv.display(),
        test_csv.display()
    );
    let cfg_path = write_config(tmp.path(), "s.toml", &text);
    pipeline(&cfg_path);
    let dir = out.join("trial_000/ga");
    for tag in ["mia_lira", "rea_sample", "mia_up"] {
        let r = AttackReport::from_json(&String::from_utf8(read(dir.join(format!("{tag}.json")))).unwrap()).unwrap();
        assert!(r.tau.is_some(), "{tag}");
        let members = r.per_target_scores.iter().filter(|t| t.member == Some(true)).count();
        assert_eq!(members, 16, "{tag}: 10% of 160 training rows");
        assert!(r.per_target_scores.iter().any(|t| t.target.starts_with('r') && t.member.is_none()));
    }
    let cfg = ExperimentConfig::load(&cfg_path).unwrap();
    let trial = prepare_trial(&cfg, 0).unwrap();
    let inf = inference_set(&trial.split, 40).unwrap();
    assert_eq!(inf.data.len(), 40 + 16 + 80);
    assert_eq!(inf.test_offset, 56);
}

#[test]
fn class_draws_follow_trial_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml_str(&classwise_toml(&tmp.path().join("run"))).unwrap();
    let a = prepare_trial(&cfg, 0).unwrap();
    let again = prepare_trial(&cfg, 0).unwrap();
    assert_eq!(a.split.manifest, again.split.manifest);
    assert_eq!(a.seed, cfg.trial_seed(0));
    let spec = a.split.spec();
    assert_eq!(spec.unlearn_classes.len(), 1);
    assert_eq!(spec.ood_classes.len(), 2);
    assert!(!spec.ood_classes.contains(&spec.unlearn_classes[0]));
    let distinct: std::collections::BTreeSet<Vec<usize>> = (0..2)
        .map(|t| {
            let s = prepare_trial(&cfg, t).unwrap();
            let mut v = s.split.spec().unlearn_classes.clone();
            v.extend(&s.split.spec().ood_classes);
            v
        })
        .collect();
    assert_eq!(distinct.len(), 2);
}
