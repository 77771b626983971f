//! Overall-survival regression: forest training, survival classes, the
//! evaluation metric suite and k-fold cross-validation.

mod forest;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use forest::{fit_forest, Forest, ForestConfig, Node, Tree};

use crate::error::{Error, Result};
use crate::metrics::percentile_sorted;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurvivalClass {
    Short,
    Mid,
    Long,
}

impl SurvivalClass {
    pub fn name(self) -> &'static str {
        match self {
            SurvivalClass::Short => "short",
            SurvivalClass::Mid => "mid",
            SurvivalClass::Long => "long",
        }
    }
}

/// Day boundaries: short below `mid_from`, long from `long_from` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassThresholds {
    pub mid_from: f64,
    pub long_from: f64,
}

impl Default for ClassThresholds {
    fn default() -> Self {
        ClassThresholds { mid_from: 300.0, long_from: 450.0 }
    }
}

impl ClassThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.mid_from > 0.0 && self.mid_from < self.long_from && self.long_from.is_finite()) {
            return Err(Error::Config(format!(
                "class thresholds must satisfy 0 < {} < {}",
                self.mid_from, self.long_from
            )));
        }
        Ok(())
    }
}

pub fn classify_days(days: f64, t: &ClassThresholds) -> Result<SurvivalClass> {
    if !(days >= 0.0) {
        return Err(Error::InvalidArgument(format!("survival days must be >= 0, got {days}")));
    }
    Ok(if days < t.mid_from {
        SurvivalClass::Short
    } else if days < t.long_from {
        SurvivalClass::Mid
    } else {
        SurvivalClass::Long
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurvivalMetrics {
    pub cases: usize,
    pub accuracy: f64,
    pub mse: f64,
    pub median_se: f64,
    pub std_se: f64,
    pub spearman_r: f64,
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0f64; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        // Undefined for a constant argument.
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&average_ranks(a), &average_ranks(b))
}

pub fn evaluate(pred: &[f64], truth: &[f64], t: &ClassThresholds) -> Result<SurvivalMetrics> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!("{} predictions for {} targets", pred.len(), truth.len())));
    }
    if pred.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 cases to evaluate".into()));
    }
    let n = pred.len() as f64;
    let mut hits = 0usize;
    for (&p, &y) in pred.iter().zip(truth) {
        if classify_days(p.max(0.0), t)? == classify_days(y, t)? {
            hits += 1;
        }
    }
    let mut se: Vec<f64> = pred.iter().zip(truth).map(|(p, y)| (p - y).powi(2)).collect();
    let mse = se.iter().sum::<f64>() / n;
    let std_se = (se.iter().map(|e| (e - mse).powi(2)).sum::<f64>() / n).sqrt();
    se.sort_by(f64::total_cmp);
    Ok(SurvivalMetrics {
        cases: pred.len(),
        accuracy: hits as f64 / n,
        mse,
        median_se: percentile_sorted(&se, 0.5),
        std_se,
        spearman_r: spearman(pred, truth),
    })
}

/// Shuffle `0..n` with `seed` and cut it into `k` contiguous folds, the first
/// `n % k` of which hold one extra sample.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(Error::InvalidArgument(format!("cannot split {n} samples into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut at = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(order[at..at + len].to_vec());
        at += len;
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub held_out: Vec<usize>,
    /// Metrics on the fold's evaluated rows, when it has at least two.
    pub metrics: Option<SurvivalMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    /// Held-out prediction for every sample, in input order.
    pub predictions: Vec<f64>,
    /// Metrics over all held-out rows selected for evaluation.
    pub pooled: SurvivalMetrics,
}

/// k-fold cross-validation. Every row is used for training; only rows with
/// `evaluate_row[i]` are scored.
pub fn cross_validate(
    x: &[Vec<f64>],
    y: &[f64],
    evaluate_row: &[bool],
    k: usize,
    cfg: &ForestConfig,
    thresholds: &ClassThresholds,
    seed: u64,
) -> Result<CvReport> {
    if x.len() != y.len() || evaluate_row.len() != y.len() {
        return Err(Error::Shape("features, targets and evaluation flags differ in length".into()));
    }
    let folds = fold_assignment(y.len(), k, seed)?;
    let mut predictions = vec![f64::NAN; y.len()];
    let mut results = Vec::with_capacity(k);
    for held in folds {
        let mut train = vec![true; y.len()];
        for &i in &held {
            train[i] = false;
        }
        let tx: Vec<Vec<f64>> = (0..y.len()).filter(|&i| train[i]).map(|i| x[i].clone()).collect();
        let ty: Vec<f64> = (0..y.len()).filter(|&i| train[i]).map(|i| y[i]).collect();
        let forest = fit_forest(&tx, &ty, cfg)?;
        for &i in &held {
            predictions[i] = forest.predict(&x[i])?;
        }
        let scored: Vec<usize> = held.iter().copied().filter(|&i| evaluate_row[i]).collect();
        let metrics = if scored.len() >= 2 {
            let p: Vec<f64> = scored.iter().map(|&i| predictions[i]).collect();
            let t: Vec<f64> = scored.iter().map(|&i| y[i]).collect();
            Some(evaluate(&p, &t, thresholds)?)
        } else {
            None
        };
        results.push(FoldResult { held_out: held, metrics });
    }
    let scored: Vec<usize> = (0..y.len()).filter(|&i| evaluate_row[i]).collect();
    let p: Vec<f64> = scored.iter().map(|&i| predictions[i]).collect();
    let t: Vec<f64> = scored.iter().map(|&i| y[i]).collect();
    Ok(CvReport { folds: results, predictions, pooled: evaluate(&p, &t, thresholds)? })
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_predictions_csv(path: &Path, case_ids: &[String], days: &[f64], t: &ClassThresholds) -> Result<()> {
    let rows = case_ids
        .iter()
        .zip(days)
        .map(|(id, &d)| Ok(vec![id.clone(), format!("{d:.3}"), classify_days(d.max(0.0), t)?.name().to_string()]))
        .collect::<Result<Vec<_>>>()?;
    write_csv(path, &["case_id", "predicted_days", "class"], rows)
}

fn metric_row(label: String, m: &SurvivalMetrics) -> Vec<String> {
    vec![
        label,
        m.cases.to_string(),
        format!("{:.6}", m.accuracy),
        format!("{:.3}", m.mse),
        format!("{:.3}", m.median_se),
        format!("{:.3}", m.std_se),
        format!("{:.6}", m.spearman_r),
    ]
}

/// Per-fold and pooled metrics, one row each.
pub fn write_cv_metrics_csv(path: &Path, report: &CvReport) -> Result<()> {
    let mut rows: Vec<Vec<String>> = report
        .folds
        .iter()
        .enumerate()
        .filter_map(|(i, f)| f.metrics.as_ref().map(|m| metric_row(format!("fold{}", i + 1), m)))
        .collect();
    rows.push(metric_row("pooled".into(), &report.pooled));
    write_csv(path, &["split", "cases", "accuracy", "mse", "median_se", "std_se", "spearman_r"], rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn class_boundaries() {
        let t = ClassThresholds::default();
        let c = |d| classify_days(d, &t).unwrap();
        assert_eq!(c(200.0), SurvivalClass::Short);
        assert_eq!(c(400.0), SurvivalClass::Mid);
        assert_eq!(c(500.0), SurvivalClass::Long);
        assert_eq!(c(300.0), SurvivalClass::Mid);
        assert_eq!(c(450.0), SurvivalClass::Long);
        assert_eq!(c(0.0), SurvivalClass::Short);
        assert!(classify_days(-1.0, &t).is_err());
        assert!(ClassThresholds { mid_from: 500.0, long_from: 450.0 }.validate().is_err());
    }

    #[test]
    fn evaluation_examples() {
        let t = ClassThresholds::default();
        let y = [100.0, 250.0, 400.0, 700.0];
        let same = evaluate(&y, &y, &t).unwrap();
        assert_eq!((same.accuracy, same.mse, same.spearman_r), (1.0, 0.0, 1.0));
        let rev = [700.0, 400.0, 250.0, 100.0];
        assert!((evaluate(&rev, &y, &t).unwrap().spearman_r + 1.0).abs() < 1e-12);
        let m = evaluate(&[100.0, 400.0], &[200.0, 500.0], &t).unwrap();
        assert_eq!(m.mse, 10000.0);
        assert_eq!(m.median_se, 10000.0);
        assert_eq!(m.std_se, 0.0);
        assert_eq!(m.accuracy, 0.5);
        assert!(evaluate(&[1.0], &[1.0], &t).is_err());
        assert!(evaluate(&[1.0, 2.0], &[1.0], &t).is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    proptest::proptest! {
        #[test]
        fn spearman_ignores_monotone_transforms(v in proptest::collection::vec((0.1f64..100.0, 0.1f64..100.0), 3..30)) {
            let a: Vec<f64> = v.iter().map(|p| p.0).collect();
            let b: Vec<f64> = v.iter().map(|p| p.1).collect();
            let cubed: Vec<f64> = a.iter().map(|x| x.powi(3)).collect();
            proptest::prop_assert!((spearman(&a, &b) - spearman(&cubed, &b)).abs() < 1e-12);
            let s = spearman(&a, &b);
            proptest::prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s));
        }
    }

    #[test]
    fn fold_sizes_and_partition() {
        let folds = fold_assignment(213, 5, 7).unwrap();
        assert_eq!(folds.iter().map(Vec::len).collect::<Vec<_>>(), vec![43, 43, 43, 42, 42]);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..213).collect::<Vec<_>>());
        assert_eq!(folds, fold_assignment(213, 5, 7).unwrap());
        assert_ne!(folds, fold_assignment(213, 5, 8).unwrap());
        assert!(fold_assignment(4, 5, 0).is_err());
    }

    #[test]
    fn separable_classes_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let levels = [100.0, 375.0, 600.0];
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..60 {
            let c = i % 3;
            x.push(vec![
                c as f64 * 10.0 + rng.random_range(0.0..2.0),
                c as f64 * 5.0 + rng.random_range(0.0..1.0),
                -(c as f64) * 3.0 + rng.random_range(0.0..0.5),
            ]);
            y.push(levels[c]);
        }
        let report =
            cross_validate(&x, &y, &[true; 60], 5, &ForestConfig::default(), &ClassThresholds::default(), 1).unwrap();
        assert_eq!(report.pooled.accuracy, 1.0);
        assert_eq!(report.pooled.cases, 60);
        assert!(report.predictions.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn evaluation_mask_restricts_scored_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
        let y: Vec<f64> = x.iter().map(|r| 200.0 + 400.0 * r[0]).collect();
        let mask: Vec<bool> = (0..30).map(|i| i % 3 != 0).collect();
        let cfg = ForestConfig { n_trees: 20, ..Default::default() };
        let r = cross_validate(&x, &y, &mask, 5, &cfg, &ClassThresholds::default(), 2).unwrap();
        assert_eq!(r.pooled.cases, 20);
        let again = cross_validate(&x, &y, &mask, 5, &cfg, &ClassThresholds::default(), 2).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn csv_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pred.csv");
        write_predictions_csv(&p, &["a".into(), "b".into()], &[120.0, 460.5], &ClassThresholds::default()).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "case_id,predicted_days,class\na,120.000,short\nb,460.500,long\n"
        );
    }
}
