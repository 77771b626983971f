//! Overlap and boundary-distance scores per tumor region, and cohort
//! summary statistics.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::volume::{region_mask, LabelVolume, Mask, RegionId, Spacing};

/// Reported when exactly one of the two masks is empty.
pub const EMPTY_HD95_MM: f64 = 373.13;

fn check_dims(a: &Mask, b: &Mask) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("mask dims differ: {:?} vs {:?}", a.dims().0, b.dims().0)));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Confusion {
    tp: usize,
    fp: usize,
    fn_: usize,
    tn: usize,
}

fn confusion(pred: &Mask, truth: &Mask) -> Confusion {
    let mut c = Confusion::default();
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// `2 TP / (2 TP + FP + FN)`; 1 when both masks are empty.
pub fn dsc(pred: &Mask, truth: &Mask) -> f64 {
    let c = confusion(pred, truth);
    ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_)
}

/// `TP / (TP + FN)`; 1 when the truth is empty.
pub fn sensitivity(pred: &Mask, truth: &Mask) -> f64 {
    let c = confusion(pred, truth);
    ratio(c.tp, c.tp + c.fn_)
}

/// `TN / (TN + FP)`; 1 when the truth covers the grid.
pub fn specificity(pred: &Mask, truth: &Mask) -> f64 {
    let c = confusion(pred, truth);
    ratio(c.tn, c.tn + c.fp)
}

/// Foreground voxels with a background face-neighbor or on the grid edge.
pub fn boundary(mask: &Mask) -> Mask {
    let dims = mask.dims();
    let [d, h, w] = dims.0;
    let data = mask.data();
    let out = (0..dims.len())
        .map(|i| {
            if !data[i] {
                return false;
            }
            let [z, y, x] = dims.coords(i);
            if z == 0 || y == 0 || x == 0 || z + 1 == d || y + 1 == h || x + 1 == w {
                return true;
            }
            !(data[i - 1] && data[i + 1] && data[i - w] && data[i + w] && data[i - w * h] && data[i + w * h])
        })
        .collect();
    Mask::new(dims, mask.spacing(), out).expect("same geometry")
}

/// Exact squared distance transform along one line (lower envelope of
/// parabolas), with sample spacing `s`. Infinite entries are not sites.
fn edt_line(f: &[f64], s: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    let s2 = s * s;
    v.clear();
    z.clear();
    let inter = |q: usize, p: usize| -> f64 {
        let (qf, pf) = (q as f64, p as f64);
        ((f[q] + s2 * qf * qf) - (f[p] + s2 * pf * pf)) / (2.0 * s2 * (qf - pf))
    };
    for q in 0..f.len() {
        if !f[q].is_finite() {
            continue;
        }
        while let Some(&top) = v.last() {
            if inter(q, top) <= *z.last().unwrap() {
                v.pop();
                z.pop();
            } else {
                break;
            }
        }
        let start = v.last().map_or(f64::NEG_INFINITY, |&top| inter(q, top));
        v.push(q);
        z.push(start);
    }
    if v.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < p as f64 {
            k += 1;
        }
        let d = p as f64 - v[k] as f64;
        *o = f[v[k]] + s2 * d * d;
    }
}

/// Squared physical distance from every voxel to the nearest set voxel.
pub fn squared_distance_transform(sites: &Mask, spacing: Spacing) -> Vec<f64> {
    let dims = sites.dims();
    let mut g: Vec<f64> = sites.data().iter().map(|&b| if b { 0.0 } else { f64::INFINITY }).collect();
    let (mut v, mut z) = (Vec::new(), Vec::new());
    for axis in [2usize, 1, 0] {
        let len = dims.0[axis];
        let stride: usize = dims.0[axis + 1..].iter().product();
        let mut line = vec![0f64; len];
        let mut out = vec![0f64; len];
        for start in 0..dims.len() {
            // Visit each line once, from its first element.
            if !(start / stride).is_multiple_of(len) {
                continue;
            }
            for (k, l) in line.iter_mut().enumerate() {
                *l = g[start + k * stride];
            }
            edt_line(&line, spacing.0[axis], &mut out, &mut v, &mut z);
            for (k, o) in out.iter().enumerate() {
                g[start + k * stride] = *o;
            }
        }
    }
    g
}

/// Linear-interpolation percentile of ascending `sorted` values, `q` in [0, 1].
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let rank = q * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

fn directed_p95(from: &Mask, to_dt: &[f64]) -> f64 {
    let mut d: Vec<f64> = from.data().iter().zip(to_dt).filter(|(&b, _)| b).map(|(_, &sq)| sq.sqrt()).collect();
    d.sort_by(f64::total_cmp);
    percentile_sorted(&d, 0.95)
}

/// Symmetric 95th-percentile Hausdorff distance between mask boundaries, in mm.
pub fn hausdorff95(pred: &Mask, truth: &Mask, spacing: Spacing) -> Result<f64> {
    check_dims(pred, truth)?;
    match (pred.is_empty(), truth.is_empty()) {
        (true, true) => return Ok(0.0),
        (true, false) | (false, true) => return Ok(EMPTY_HD95_MM),
        _ => {}
    }
    let (bp, bt) = (boundary(pred), boundary(truth));
    let dt_p = squared_distance_transform(&bp, spacing);
    let dt_t = squared_distance_transform(&bt, spacing);
    Ok(directed_p95(&bp, &dt_t).max(directed_p95(&bt, &dt_p)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scores {
    pub dsc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub hd95: f64,
}

pub fn score_masks(pred: &Mask, truth: &Mask, spacing: Spacing) -> Result<Scores> {
    check_dims(pred, truth)?;
    Ok(Scores {
        dsc: dsc(pred, truth),
        sensitivity: sensitivity(pred, truth),
        specificity: specificity(pred, truth),
        hd95: hausdorff95(pred, truth, spacing)?,
    })
}

/// Scores of one case for each region, in `RegionId::ALL` order.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionScores {
    pub case_id: String,
    pub regions: Vec<(RegionId, Scores)>,
}

impl RegionScores {
    pub fn get(&self, region: RegionId) -> Scores {
        self.regions.iter().find(|(r, _)| *r == region).expect("all regions scored").1
    }
}

pub fn score_case(case_id: &str, pred: &LabelVolume, truth: &LabelVolume) -> Result<RegionScores> {
    if pred.dims() != truth.dims() {
        return Err(Error::Shape(format!(
            "prediction dims {:?} differ from truth dims {:?}",
            pred.dims().0,
            truth.dims().0
        )));
    }
    let regions = RegionId::ALL
        .iter()
        .map(|&r| Ok((r, score_masks(&region_mask(pred, r), &region_mask(truth, r), truth.spacing())?)))
        .collect::<Result<_>>()?;
    Ok(RegionScores { case_id: case_id.to_string(), regions })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stats {
    pub mean: f64,
    pub std_dev: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

/// Mean, population standard deviation, and interpolated quartiles.
pub fn describe(values: &[f64]) -> Result<Stats> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("cannot summarize an empty list".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std_dev = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Stats {
        mean,
        std_dev,
        median: percentile_sorted(&sorted, 0.5),
        q25: percentile_sorted(&sorted, 0.25),
        q75: percentile_sorted(&sorted, 0.75),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    Dice,
    Sensitivity,
    Specificity,
    Hausdorff95,
}

impl Measure {
    pub const ALL: [Measure; 4] = [Measure::Dice, Measure::Sensitivity, Measure::Specificity, Measure::Hausdorff95];

    pub fn name(self) -> &'static str {
        match self {
            Measure::Dice => "Dice",
            Measure::Sensitivity => "Sensitivity",
            Measure::Specificity => "Specificity",
            Measure::Hausdorff95 => "Hausdorff95",
        }
    }

    pub fn of(self, s: &Scores) -> f64 {
        match self {
            Measure::Dice => s.dsc,
            Measure::Sensitivity => s.sensitivity,
            Measure::Specificity => s.specificity,
            Measure::Hausdorff95 => s.hd95,
        }
    }
}

/// Statistics per measure and region.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortSummary {
    pub cases: usize,
    pub entries: Vec<(Measure, RegionId, Stats)>,
}

impl CohortSummary {
    pub fn get(&self, m: Measure, r: RegionId) -> Stats {
        self.entries.iter().find(|(em, er, _)| *em == m && *er == r).expect("all entries summarized").2
    }
}

pub fn summarize_cohort(scores: &[RegionScores]) -> Result<CohortSummary> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("cannot summarize an empty cohort".into()));
    }
    let mut entries = Vec::new();
    for m in Measure::ALL {
        for r in RegionId::ALL {
            let values: Vec<f64> = scores.iter().map(|s| m.of(&s.get(r))).collect();
            entries.push((m, r, describe(&values)?));
        }
    }
    Ok(CohortSummary { cases: scores.len(), entries })
}

fn create(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// One row per case and region.
pub fn write_case_scores(path: &Path, scores: &[RegionScores]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["case_id", "region", "dsc", "sensitivity", "specificity", "hd95"])?;
    for s in scores {
        for (r, v) in &s.regions {
            w.write_record([
                s.case_id.clone(),
                r.name().to_string(),
                fmt(v.dsc),
                fmt(v.sensitivity),
                fmt(v.specificity),
                fmt(v.hd95),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Rows of (measure, statistic) with one column per region.
pub fn write_summary(path: &Path, summary: &CohortSummary) -> Result<()> {
    let mut w = create(path)?;
    let mut header = vec!["measure".to_string(), "statistic".to_string()];
    header.extend(RegionId::ALL.iter().map(|r| r.name().to_string()));
    w.write_record(&header)?;
    type Statistic = (&'static str, fn(&Stats) -> f64);
    let stats: [Statistic; 5] = [
        ("Mean", |s| s.mean),
        ("StdDev", |s| s.std_dev),
        ("Median", |s| s.median),
        ("25quantile", |s| s.q25),
        ("75quantile", |s| s.q75),
    ];
    for m in Measure::ALL {
        for (name, get) in stats {
            let mut row = vec![m.name().to_string(), name.to_string()];
            row.extend(RegionId::ALL.iter().map(|&r| fmt(get(&summary.get(m, r)))));
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask(dims: Dims, on: impl Fn(usize) -> bool) -> Mask {
        Mask::new(dims, Spacing::default(), (0..dims.len()).map(on).collect()).unwrap()
    }

    fn empty(dims: Dims) -> Mask {
        Mask::empty(dims, Spacing::default()).unwrap()
    }

    #[test]
    fn dsc_examples() {
        let dims = Dims::new(2, 2, 4);
        let a = mask(dims, |i| i < 8);
        let b = mask(dims, |i| (4..12).contains(&i));
        assert_eq!(dsc(&a, &a), 1.0);
        assert_eq!(dsc(&a, &mask(dims, |i| i >= 8)), 0.0);
        assert_eq!(dsc(&a, &b), 0.5);
        assert_eq!(dsc(&empty(dims), &empty(dims)), 1.0);
    }

    #[test]
    fn sensitivity_and_specificity_examples() {
        let dims = Dims::new(2, 2, 4);
        let truth = mask(dims, |i| i < 8);
        assert_eq!(sensitivity(&mask(dims, |_| true), &truth), 1.0);
        assert_eq!(sensitivity(&empty(dims), &truth), 0.0);
        assert_eq!(sensitivity(&mask(dims, |i| i < 4), &truth), 0.5);
        assert_eq!(sensitivity(&truth, &empty(dims)), 1.0);
        assert_eq!(specificity(&truth, &mask(dims, |_| true)), 1.0);
        assert_eq!(specificity(&mask(dims, |i| i < 12), &truth), 0.5);
    }

    /// Check every (pred, truth) pair on a 2x2x2 grid against the counting definitions.
    #[test]
    fn exhaustive_overlap_scores_on_eight_voxels() {
        let dims = Dims::new(2, 2, 2);
        for a in 0u32..256 {
            for b in 0u32..256 {
                let pa = mask(dims, |i| a >> i & 1 == 1);
                let tb = mask(dims, |i| b >> i & 1 == 1);
                let tp = (a & b).count_ones() as f64;
                let fp = (a & !b & 0xff).count_ones() as f64;
                let fn_ = (!a & b & 0xff).count_ones() as f64;
                let tn = (!a & !b & 0xff).count_ones() as f64;
                let want_dsc = if a == 0 && b == 0 { 1.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
                assert_eq!(dsc(&pa, &tb), want_dsc);
                assert_eq!(dsc(&pa, &tb), dsc(&tb, &pa));
                let want_sens = if b == 0 { 1.0 } else { tp / (tp + fn_) };
                assert_eq!(sensitivity(&pa, &tb), want_sens);
                let want_spec = if b == 0xff { 1.0 } else { tn / (tn + fp) };
                assert_eq!(specificity(&pa, &tb), want_spec);
            }
        }
    }

    fn brute_hd95(a: &Mask, b: &Mask, spacing: Spacing) -> f64 {
        let dims = a.dims();
        let pts = |m: &Mask| -> Vec<[f64; 3]> {
            boundary(m)
                .data()
                .iter()
                .enumerate()
                .filter(|(_, &on)| on)
                .map(|(i, _)| {
                    let c = dims.coords(i);
                    [0, 1, 2].map(|k| c[k] as f64 * spacing.0[k])
                })
                .collect()
        };
        let directed = |from: &[[f64; 3]], to: &[[f64; 3]]| {
            let mut d: Vec<f64> = from
                .iter()
                .map(|p| {
                    to.iter()
                        .map(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            d.sort_by(f64::total_cmp);
            percentile_sorted(&d, 0.95)
        };
        let (pa, pb) = (pts(a), pts(b));
        directed(&pa, &pb).max(directed(&pb, &pa))
    }

    #[test]
    fn hd95_matches_all_pairs_oracle() {
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dims = Dims::new(rng.random_range(2..=16), rng.random_range(2..=16), rng.random_range(2..=16));
            let spacing = Spacing([rng.random_range(0.5..3.0), rng.random_range(0.5..3.0), rng.random_range(0.5..3.0)]);
            let (da, db) = (rng.random_range(0.05..0.6), rng.random_range(0.05..0.6));
            let a =
                Mask::new(dims, Spacing::default(), (0..dims.len()).map(|_| rng.random_bool(da)).collect()).unwrap();
            let b =
                Mask::new(dims, Spacing::default(), (0..dims.len()).map(|_| rng.random_bool(db)).collect()).unwrap();
            if a.is_empty() || b.is_empty() {
                continue;
            }
            let got = hausdorff95(&a, &b, spacing).unwrap();
            let want = brute_hd95(&a, &b, spacing);
            assert!((got - want).abs() < 1e-12, "seed {seed}: {got} vs {want}");
            assert_eq!(got, hausdorff95(&b, &a, spacing).unwrap());
        }
    }

    #[test]
    fn hd95_examples() {
        let dims = Dims::new(1, 1, 8);
        let at = |k: usize| mask(dims, move |i| i == k);
        assert_eq!(hausdorff95(&at(1), &at(4), Spacing::default()).unwrap(), 3.0);
        assert_eq!(hausdorff95(&at(1), &at(1), Spacing::default()).unwrap(), 0.0);
        assert_eq!(hausdorff95(&empty(dims), &at(1), Spacing::default()).unwrap(), EMPTY_HD95_MM);
        assert_eq!(hausdorff95(&empty(dims), &empty(dims), Spacing::default()).unwrap(), 0.0);
        let other = empty(Dims::new(1, 1, 7));
        assert!(matches!(hausdorff95(&at(1), &other, Spacing::default()), Err(Error::Shape(_))));
    }

    #[test]
    fn far_spurious_voxel_never_lowers_hd95() {
        let dims = Dims::new(16, 16, 16);
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth = mask(dims, |i| {
                let [z, y, x] = dims.coords(i);
                (2..8).contains(&z) && (2..8).contains(&y) && (2..8).contains(&x)
            });
            let mut pred = truth.clone();
            for _ in 0..20 {
                let i = rng.random_range(0..dims.len());
                pred.data_mut()[i] = rng.random_bool(0.5);
            }
            if pred.is_empty() {
                continue;
            }
            let before = hausdorff95(&pred, &truth, Spacing::default()).unwrap();
            let mut spurious = pred.clone();
            spurious.data_mut()[dims.index(15, 15, 15)] = true;
            assert!(hausdorff95(&spurious, &truth, Spacing::default()).unwrap() >= before);
        }
    }

    #[test]
    fn distance_transform_matches_brute_force() {
        let dims = Dims::new(5, 6, 7);
        let spacing = Spacing([2.0, 0.7, 1.3]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sites =
            Mask::new(dims, Spacing::default(), (0..dims.len()).map(|_| rng.random_bool(0.05)).collect()).unwrap();
        let dt = squared_distance_transform(&sites, spacing);
        for i in 0..dims.len() {
            let c = dims.coords(i);
            let want = (0..dims.len())
                .filter(|&j| sites.data()[j])
                .map(|j| {
                    let d = dims.coords(j);
                    (0..3).map(|k| ((c[k] as f64 - d[k] as f64) * spacing.0[k]).powi(2)).sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min);
            assert!((dt[i] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn describe_examples() {
        let one = describe(&[0.7]).unwrap();
        assert_eq!((one.mean, one.std_dev, one.median, one.q25, one.q75), (0.7, 0.0, 0.7, 0.7, 0.7));
        let two = describe(&[0.0, 1.0]).unwrap();
        assert_eq!((two.mean, two.median), (0.5, 0.5));
        let four = describe(&[4.0, 2.0, 1.0, 3.0]).unwrap();
        assert_eq!(four.q25, 1.75);
        assert_eq!(four.q75, 3.25);
        assert!(describe(&[]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn quartiles_are_ordered(values in proptest::collection::vec(-1e3f64..1e3, 1..40)) {
            let s = describe(&values).unwrap();
            proptest::prop_assert!(s.q25 <= s.median && s.median <= s.q75);
            proptest::prop_assert!(s.std_dev >= 0.0);
        }
    }

    #[test]
    fn csv_layouts() {
        let dims = Dims::new(4, 4, 4);
        let truth = LabelVolume::new(
            dims,
            Spacing::default(),
            (0..64)
                .map(|i| {
                    if i < 8 {
                        4
                    } else if i < 20 {
                        2
                    } else {
                        0
                    }
                })
                .collect(),
        )
        .unwrap();
        let s = score_case("c1", &truth, &truth).unwrap();
        assert_eq!(s.get(RegionId::WT).dsc, 1.0);
        let summary = summarize_cohort(std::slice::from_ref(&s)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_case_scores(&dir.path().join("cases.csv"), &[s]).unwrap();
        write_summary(&dir.path().join("summary.csv"), &summary).unwrap();
        let cases = std::fs::read_to_string(dir.path().join("cases.csv")).unwrap();
        assert_eq!(cases.lines().next().unwrap(), "case_id,region,dsc,sensitivity,specificity,hd95");
        assert_eq!(cases.lines().count(), 4);
        let sum = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(sum.lines().next().unwrap(), "measure,statistic,ET,WT,TC");
        assert_eq!(sum.lines().count(), 21);
        assert!(sum.contains("Dice,25quantile,1.000000,1.000000,1.000000"));
    }
}
