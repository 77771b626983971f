//! One function per pipeline stage; each reads and writes only its declared artifacts.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::cases::{
    case_id, discover_cases, ensure_dir, load_any, load_case, load_label_dir, read_survival_csv, require_file,
    write_case, write_labels, write_scalar, write_survival_csv, SurvivalRecord, SURVIVAL_FILE,
};
use super::PipelineConfig;
use crate::error::{Error, Result};
use crate::gradcheck::{run_suite, SuiteReport};
use crate::inference::{argmax_labels, flip_averaged_predict, sliding_window_predict};
use crate::metrics::{score_case, summarize_cohort, write_case_scores, write_summary, CohortSummary, RegionScores};
use crate::model::{load_checkpoint, save_checkpoint, Adam, Model};
use crate::phantom::generate_cohort;
use crate::postprocess::postprocess_pipeline;
use crate::preprocess::{flip_lr, normalize_stack, sample_patches, Patch};
use crate::radiomics::{build_feature_vector, read_features_csv, write_features_csv, FeatureRow};
use crate::survival::{cross_validate, fit_forest, write_cv_metrics_csv, write_predictions_csv, CvReport, Forest};
use crate::volume::{AnyVolume, LabelVolume};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const FOREST_FILE: &str = "forest.json";

/// Convert a single volume between NIfTI and the internal format (by extension).
pub fn convert(input: &Path, output: &Path, as_labels: bool) -> Result<()> {
    match load_any(input)? {
        AnyVolume::Labels(l) => write_labels(&l, output),
        AnyVolume::Scalar(v) if as_labels => write_labels(&LabelVolume::from_volume(&v)?, output),
        AnyVolume::Scalar(v) => write_scalar(&v, output),
    }
}

/// Write brain-normalized copies of every case (segmentations copied unchanged).
pub fn preprocess(cases: &Path, out: &Path) -> Result<usize> {
    let dirs = discover_cases(cases)?;
    dirs.par_iter()
        .map(|d| {
            let c = load_case(d)?;
            write_case(&out.join(case_id(d)), &normalize_stack(&c.stack)?, c.labels.as_ref())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(dirs.len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub checkpoint: PathBuf,
}

fn training_pool(cfg: &PipelineConfig, cases: &Path) -> Result<Vec<Patch>> {
    let dirs = discover_cases(cases)?;
    let per_case = dirs
        .par_iter()
        .enumerate()
        .map(|(i, d)| {
            let c = load_case(d)?;
            let labels =
                c.labels.ok_or_else(|| Error::MissingInput(format!("segmentation of training case {}", case_id(d))))?;
            let policy =
                crate::preprocess::SamplingPolicy { seed: cfg.sampling.seed.wrapping_add(i as u64), ..cfg.sampling };
            sample_patches(&normalize_stack(&c.stack)?, &labels, &policy)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_case.into_iter().flatten().collect())
}

/// Train on patches sampled from labelled cases; writes the checkpoint and a loss log.
pub fn train(cfg: &PipelineConfig, cases: &Path, out: &Path) -> Result<TrainReport> {
    ensure_dir(out)?;
    let pool = training_pool(cfg, cases)?;
    let mut model = Model::<f32>::new(cfg.model.clone())?;
    let mut opt = Adam::new(cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a11);
    let mut losses = Vec::with_capacity(cfg.training.steps);
    for step in 0..cfg.training.steps {
        let mut patch = pool[rng.random_range(0..pool.len())].clone();
        if rng.random_bool(cfg.training.flip_probability) {
            patch = flip_lr(&patch);
        }
        let labels = patch.labels.as_deref().expect("training patches carry labels");
        let loss = model.train_step(&patch.data, labels, &mut opt, &cfg.loss).map_err(|e| match e {
            Error::NonFiniteLoss { detail, .. } => Error::NonFiniteLoss { step, detail },
            other => other,
        })?;
        if step % 10 == 0 || step + 1 == cfg.training.steps {
            println!("train step {step:>5}  loss {loss:.6}");
        }
        losses.push(loss);
    }
    let checkpoint = out.join(CHECKPOINT_FILE);
    save_checkpoint(&model, &checkpoint)?;
    let log = out.join(TRAIN_LOG_FILE);
    let mut w = csv::Writer::from_path(&log)?;
    w.write_record(["step", "loss"])?;
    for (i, l) in losses.iter().enumerate() {
        w.write_record([i.to_string(), format!("{l:.6}")])?;
    }
    w.flush().map_err(|e| Error::io(&log, e))?;
    Ok(TrainReport { losses, checkpoint })
}

/// Segment every case with the checkpointed model; writes `<out>/<case>.mvol`.
pub fn predict(cfg: &PipelineConfig, cases: &Path, checkpoint: &Path, out: &Path) -> Result<Vec<String>> {
    require_file(checkpoint)?;
    let model: Model<f32> = load_checkpoint(checkpoint)?;
    let mut run_cfg = cfg.clone();
    run_cfg.model = model.config().clone();
    let stride = run_cfg.stride()?;
    let dirs = discover_cases(cases)?;
    ensure_dir(out)?;
    let mut ids = Vec::with_capacity(dirs.len());
    for d in &dirs {
        let c = load_case(d)?;
        let stack = normalize_stack(&c.stack)?;
        let probs = if cfg.inference.flip_average {
            flip_averaged_predict(&model, &stack, stride)?
        } else {
            sliding_window_predict(&model, &stack, stride)?
        };
        let id = case_id(d);
        write_labels(&argmax_labels(&probs), &out.join(format!("{id}.mvol")))?;
        println!("predicted {id}");
        ids.push(id);
    }
    Ok(ids)
}

pub fn postprocess(cfg: &PipelineConfig, input: &Path, out: &Path) -> Result<usize> {
    let maps = load_label_dir(input)?;
    ensure_dir(out)?;
    maps.par_iter()
        .map(|(id, l)| write_labels(&postprocess_pipeline(l, &cfg.postprocess), &out.join(format!("{id}.mvol"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(maps.len())
}

/// Score predicted label maps against the cases' segmentations; writes
/// `<prefix>cases.csv` and `<prefix>summary.csv`.
pub fn evaluate(pred_dir: &Path, cases: &Path, out: &Path, prefix: &str) -> Result<CohortSummary> {
    let preds = load_label_dir(pred_dir)?;
    ensure_dir(out)?;
    let scores = preds
        .par_iter()
        .map(|(id, pred)| {
            let dir = cases.join(id);
            let truth =
                load_case(&dir)?.labels.ok_or_else(|| Error::MissingInput(format!("segmentation of case {id}")))?;
            score_case(id, pred, &truth)
        })
        .collect::<Result<Vec<RegionScores>>>()?;
    let summary = summarize_cohort(&scores)?;
    write_case_scores(&out.join(format!("{prefix}cases.csv")), &scores)?;
    write_summary(&out.join(format!("{prefix}summary.csv")), &summary)?;
    Ok(summary)
}

fn survival_records(cases: &Path) -> Result<Vec<SurvivalRecord>> {
    read_survival_csv(&cases.join(SURVIVAL_FILE))
}

/// Survival features of every case, from its segmentation or from predicted
/// label maps in `labels_dir`; age and outcome come from `survival.csv`.
pub fn features(cases: &Path, labels_dir: Option<&Path>, out_csv: &Path) -> Result<Vec<FeatureRow>> {
    let records = survival_records(cases)?;
    let dirs = discover_cases(cases)?;
    let predicted = labels_dir.map(load_label_dir).transpose()?;
    let rows = dirs
        .par_iter()
        .map(|d| {
            let id = case_id(d);
            let c = load_case(d)?;
            let labels = match &predicted {
                Some(maps) => maps
                    .iter()
                    .find(|(pid, _)| *pid == id)
                    .map(|(_, l)| l.clone())
                    .ok_or_else(|| Error::MissingInput(format!("predicted labels of case {id}")))?,
                None => c.labels.ok_or_else(|| Error::MissingInput(format!("segmentation of case {id}")))?,
            };
            let rec = records.iter().find(|r| r.case_id == id);
            let features = build_feature_vector(&id, &labels, &c.stack.brain_mask(), rec.and_then(|r| r.age))?;
            Ok(FeatureRow {
                features,
                survival_days: rec.and_then(|r| r.survival_days),
                resection_status: rec.and_then(|r| r.resection_status.clone()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(parent) = out_csv.parent() {
        ensure_dir(parent)?;
    }
    write_features_csv(out_csv, &rows)?;
    Ok(rows)
}

struct Labelled {
    ids: Vec<String>,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    gtr: Vec<bool>,
}

fn labelled_rows(rows: &[FeatureRow]) -> Labelled {
    let mut l = Labelled { ids: Vec::new(), x: Vec::new(), y: Vec::new(), gtr: Vec::new() };
    for r in rows {
        if let Some(d) = r.survival_days {
            l.ids.push(r.features.case_id.clone());
            l.x.push(r.features.values.to_vec());
            l.y.push(d);
            l.gtr.push(r.resection_status.as_deref().is_some_and(|s| s.eq_ignore_ascii_case("GTR")));
        }
    }
    l
}

fn read_rows(path: &Path) -> Result<Vec<FeatureRow>> {
    require_file(path)?;
    read_features_csv(path)
}

pub fn survival_train(cfg: &PipelineConfig, features_csv: &Path, out: &Path) -> Result<Forest> {
    let data = labelled_rows(&read_rows(features_csv)?);
    let forest = fit_forest(&data.x, &data.y, &cfg.forest)?;
    ensure_dir(out)?;
    forest.save(&out.join(FOREST_FILE))?;
    println!("trained {} trees on {} cases", forest.trees.len(), data.y.len());
    Ok(forest)
}

/// Cross-validated survival regression; writes `cv_metrics.csv` and `cv_predictions.csv`.
pub fn survival_cv(cfg: &PipelineConfig, features_csv: &Path, out: &Path) -> Result<CvReport> {
    let data = labelled_rows(&read_rows(features_csv)?);
    let scored = if cfg.survival.gtr_only { data.gtr.clone() } else { vec![true; data.y.len()] };
    let report =
        cross_validate(&data.x, &data.y, &scored, cfg.survival.folds, &cfg.forest, &cfg.survival.thresholds, cfg.seed)?;
    ensure_dir(out)?;
    write_cv_metrics_csv(&out.join("cv_metrics.csv"), &report)?;
    write_predictions_csv(&out.join("cv_predictions.csv"), &data.ids, &report.predictions, &cfg.survival.thresholds)?;
    let m = &report.pooled;
    println!(
        "survival cv over {} scored cases: accuracy {:.3}  mse {:.1}  median_se {:.1}  std_se {:.1}  spearman {:.3}",
        m.cases, m.accuracy, m.mse, m.median_se, m.std_se, m.spearman_r
    );
    Ok(report)
}

pub fn survival_predict(cfg: &PipelineConfig, features_csv: &Path, model: &Path, out_csv: &Path) -> Result<Vec<f64>> {
    require_file(model)?;
    let forest = Forest::load(model)?;
    let rows = read_rows(features_csv)?;
    let x: Vec<Vec<f64>> = rows.iter().map(|r| r.features.values.to_vec()).collect();
    let days = forest.predict_many(&x)?;
    let ids: Vec<String> = rows.iter().map(|r| r.features.case_id.clone()).collect();
    if let Some(parent) = out_csv.parent() {
        ensure_dir(parent)?;
    }
    write_predictions_csv(out_csv, &ids, &days, &cfg.survival.thresholds)?;
    Ok(days)
}

pub fn gradcheck(seeds: usize) -> Result<SuiteReport> {
    let report = run_suite(seeds)?;
    for r in &report.ops {
        println!(
            "{:<18} seeds {:>3}  entries {:>6}  max_rel_err {:.3e}  {}",
            r.op,
            r.seeds,
            r.outcome.checked,
            r.outcome.max_rel_err,
            if r.passed() { "ok" } else { "FAILED" }
        );
    }
    println!("model entries skipped at activation kinks: {}", report.model_kink_skipped);
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct DemoReport {
    pub out: PathBuf,
    pub train: TrainReport,
    pub raw: CohortSummary,
    pub post: CohortSummary,
    pub cv: CvReport,
    /// CSV artifacts, relative to `out`.
    pub csv_files: Vec<PathBuf>,
}

/// Full pipeline on generated phantoms: segmentation (train, predict,
/// post-process, evaluate, features) on `demo.cases` cases, and survival
/// regression cross-validated on a cohort of ground-truth phantoms, then
/// applied to the segmented cases.
pub fn demo(cfg: &PipelineConfig, out: &Path) -> Result<DemoReport> {
    ensure_dir(out)?;
    let cases_dir = out.join("cases");
    let cases = generate_cohort("demo", cfg.demo.cases, &cfg.phantom, cfg.seed)?;
    for c in &cases {
        write_case(&cases_dir.join(&c.meta.case_id), &c.stack, Some(&c.labels))?;
    }
    let records: Vec<SurvivalRecord> = cases
        .iter()
        .map(|c| SurvivalRecord {
            case_id: c.meta.case_id.clone(),
            age: Some(c.meta.age),
            survival_days: Some(c.meta.survival_days),
            resection_status: Some(c.meta.resection_status.clone()),
        })
        .collect();
    write_survival_csv(&cases_dir.join(SURVIVAL_FILE), &records)?;
    println!("generated {} phantom cases", cases.len());

    let model_dir = out.join("model");
    let train_report = train(cfg, &cases_dir, &model_dir)?;
    let pred_dir = out.join("predictions");
    predict(cfg, &cases_dir, &train_report.checkpoint, &pred_dir)?;
    let post_dir = out.join("postprocessed");
    postprocess(cfg, &pred_dir, &post_dir)?;
    let metrics_dir = out.join("metrics");
    let raw = evaluate(&pred_dir, &cases_dir, &metrics_dir, "raw_")?;
    let post = evaluate(&post_dir, &cases_dir, &metrics_dir, "post_")?;
    features(&cases_dir, Some(&post_dir), &out.join("features_segmented.csv"))?;

    let cohort = generate_cohort("cohort", cfg.demo.survival_cohort, &cfg.phantom, cfg.seed.wrapping_add(1_000_003))?;
    let cohort_rows = cohort
        .par_iter()
        .map(|c| {
            Ok(FeatureRow {
                features: build_feature_vector(&c.meta.case_id, &c.labels, &c.stack.brain_mask(), Some(c.meta.age))?,
                survival_days: Some(c.meta.survival_days),
                resection_status: Some(c.meta.resection_status.clone()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let cohort_csv = out.join("features_cohort.csv");
    write_features_csv(&cohort_csv, &cohort_rows)?;
    let survival_dir = out.join("survival");
    let cv = survival_cv(cfg, &cohort_csv, &survival_dir)?;
    survival_train(cfg, &cohort_csv, &survival_dir)?;
    survival_predict(
        cfg,
        &out.join("features_segmented.csv"),
        &survival_dir.join(FOREST_FILE),
        &survival_dir.join("survival_predictions.csv"),
    )?;

    let csv_files = [
        "cases/survival.csv",
        "model/train_log.csv",
        "metrics/raw_cases.csv",
        "metrics/raw_summary.csv",
        "metrics/post_cases.csv",
        "metrics/post_summary.csv",
        "features_segmented.csv",
        "features_cohort.csv",
        "survival/cv_metrics.csv",
        "survival/cv_predictions.csv",
        "survival/survival_predictions.csv",
    ]
    .map(PathBuf::from)
    .to_vec();
    for f in &csv_files {
        require_file(&out.join(f))?;
    }
    Ok(DemoReport { out: out.to_path_buf(), train: train_report, raw, post, cv, csv_files })
}
