use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tumorseg::phantom::{generate_cohort, PhantomConfig};
use tumorseg::pipeline::cases::{write_case, write_survival_csv, SurvivalRecord, SURVIVAL_FILE};

fn tumorseg(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tumorseg")).args(args).current_dir(dir).output().expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = tumorseg(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn code(args: &[&str], dir: &Path) -> Option<i32> {
    tumorseg(args, dir).status.code()
}

fn write_cases(root: &Path, n: usize, seed: u64) -> PathBuf {
    let cases = root.join("cases");
    let cohort = generate_cohort("c", n, &PhantomConfig::default(), seed).unwrap();
    for c in &cohort {
        write_case(&cases.join(&c.meta.case_id), &c.stack, Some(&c.labels)).unwrap();
    }
    let records: Vec<SurvivalRecord> = cohort
        .iter()
        .map(|c| SurvivalRecord {
            case_id: c.meta.case_id.clone(),
            age: Some(c.meta.age),
            survival_days: Some(c.meta.survival_days),
            resection_status: Some(c.meta.resection_status.clone()),
        })
        .collect();
    write_survival_csv(&cases.join(SURVIVAL_FILE), &records).unwrap();
    cases
}

#[test]
fn exit_codes_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&["frobnicate"], d), Some(2));
    std::fs::write(d.join("bad.json"), r#"{"seeed": 3}"#).unwrap();
    assert_eq!(code(&["--config", "bad.json", "predict", "--cases", "x"], d), Some(3));
    assert_eq!(code(&["--config", "absent.json", "demo"], d), Some(4));
    assert_eq!(code(&["predict", "--cases", "x", "--out", "y"], d), Some(4));
    assert_eq!(code(&["predict", "--cases", "x", "--out", "y", "--checkpoint", "none.ckpt"], d), Some(4));
    assert_eq!(code(&["demo", "--stride", "0", "--out", "o"], d), Some(3));
    assert_eq!(code(&["--help"], d), Some(0));
}

#[test]
fn every_stage_runs_and_echoes_its_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_cases(d, 2, 5);

    let out = ok(&["--seed", "3", "train", "--cases", "cases", "--out", "model", "--steps", "4"], d);
    assert!(out.contains("seed: 3") && out.contains("effective config"));
    let echoed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("model/effective_config.json")).unwrap()).unwrap();
    assert_eq!(echoed["seed"], 3);
    assert_eq!(echoed["training"]["steps"], 4);
    assert_eq!(std::fs::read_to_string(d.join("model/train_log.csv")).unwrap().lines().count(), 5);

    ok(&["predict", "--cases", "cases", "--checkpoint", "model/model.ckpt", "--out", "pred", "--stride", "16"], d);
    ok(&["postprocess", "--input", "pred", "--out", "post", "--min-voxels", "10", "--et-threshold", "5"], d);
    ok(&["evaluate", "--predictions", "post", "--cases", "cases", "--out", "metrics"], d);
    let summary = std::fs::read_to_string(d.join("metrics/metrics_summary.csv")).unwrap();
    assert!(summary.starts_with("measure,statistic,ET,WT,TC\n"));
    assert_eq!(std::fs::read_to_string(d.join("metrics/metrics_cases.csv")).unwrap().lines().count(), 7);

    ok(&["features", "--cases", "cases", "--labels", "post", "--out", "feat/pred.csv"], d);
    ok(&["features", "--cases", "cases", "--out", "feat/truth.csv"], d);
    ok(&["preprocess", "--cases", "cases", "--out", "norm"], d);
    assert!(d.join("norm/c000/t1c.mvol").is_file() && d.join("norm/c001/seg.mvol").is_file());

    ok(&["convert", "--input", "cases/c000/seg.mvol", "--output", "seg.nii.gz"], d);
    ok(&["convert", "--input", "seg.nii.gz", "--output", "seg_back.mvol", "--labels"], d);
    let a = tumorseg::pipeline::cases::load_labels(&d.join("cases/c000/seg.mvol")).unwrap();
    let b = tumorseg::pipeline::cases::load_labels(&d.join("seg_back.mvol")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn survival_stages_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_cases(d, 12, 8);
    ok(&["features", "--cases", "cases", "--out", "features.csv"], d);
    for run in ["a", "b"] {
        ok(&["--seed", "2", "survival-cv", "--features", "features.csv", "--out", run, "--folds", "3"], d);
        ok(&["--seed", "2", "survival-train", "--features", "features.csv", "--out", run], d);
        let model = format!("{run}/forest.json");
        let pred = format!("{run}/pred.csv");
        ok(&["survival-predict", "--features", "features.csv", "--model", &model, "--out", &pred], d);
    }
    for f in ["cv_metrics.csv", "cv_predictions.csv", "pred.csv"] {
        let a = std::fs::read(d.join("a").join(f)).unwrap();
        assert_eq!(a, std::fs::read(d.join("b").join(f)).unwrap(), "{f} differs");
    }
    let metrics = std::fs::read_to_string(d.join("a/cv_metrics.csv")).unwrap();
    assert!(metrics.starts_with("split,cases,accuracy,mse,median_se,std_se,spearman_r\n"));
    assert_eq!(std::fs::read_to_string(d.join("a/pred.csv")).unwrap().lines().count(), 13);
}
