//! Survival features: tumor sub-region volumes, necrosis shape descriptors
//! and age, with CSV exchange.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{LabelVolume, Mask, Spacing};

pub const FEATURE_NAMES: [&str; 16] = [
    "amount_edema",
    "amount_necrosis",
    "amount_enhancing",
    "extent_of_tumor",
    "proportion_of_tumor",
    "elongation",
    "flatness",
    "minor_axis_length",
    "major_axis_length",
    "max_2d_diameter_row",
    "max_2d_diameter_column",
    "max_2d_diameter_slice",
    "max_3d_diameter",
    "sphericity",
    "surface_area",
    "age",
];

pub const NUM_FEATURES: usize = FEATURE_NAMES.len();

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StatisticalFeatures {
    pub amount_edema: f64,
    pub amount_necrosis: f64,
    pub amount_enhancing: f64,
    pub extent_of_tumor: f64,
    pub proportion_of_tumor: f64,
}

/// Sub-region volumes in mm^3 and the whole-tumor fraction of the brain.
pub fn statistical_features(labels: &LabelVolume, brain: &Mask) -> Result<StatisticalFeatures> {
    if brain.dims() != labels.dims() {
        return Err(Error::Shape("brain mask and labels differ in dims".into()));
    }
    let brain_count = brain.count();
    if brain_count == 0 {
        return Err(Error::EmptyBrainMask);
    }
    let vv = labels.spacing().voxel_volume();
    let (ed, ncr, et) = (labels.count(2), labels.count(1), labels.count(4));
    let wt = ed + ncr + et;
    Ok(StatisticalFeatures {
        amount_edema: ed as f64 * vv,
        amount_necrosis: ncr as f64 * vv,
        amount_enhancing: et as f64 * vv,
        extent_of_tumor: wt as f64 * vv,
        proportion_of_tumor: wt as f64 / brain_count as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ShapeFeatures {
    pub elongation: f64,
    pub flatness: f64,
    pub minor_axis_length: f64,
    pub major_axis_length: f64,
    pub max_2d_diameter_row: f64,
    pub max_2d_diameter_column: f64,
    pub max_2d_diameter_slice: f64,
    pub max_3d_diameter: f64,
    pub sphericity: f64,
    pub surface_area: f64,
}

/// Eigenvalues (descending) and matching unit eigenvectors (columns) of a
/// symmetric 3x3 matrix by cyclic Jacobi rotations.
pub fn symmetric_eigen3(m: [[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut a = m;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _sweep in 0..64 {
        let off = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
        let scale = a[0][0].powi(2) + a[1][1].powi(2) + a[2][2].powi(2) + off;
        if off <= 1e-30 * scale || off == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            // a <- J^T a J with J the (p, q) rotation.
            for k in 0..3 {
                let (akp, akq) = (a[k][p], a[k][q]);
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let (apk, aqk) = (a[p][k], a[q][k]);
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let (vp, vq) = (row[p], row[q]);
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let vals = order.map(|i| a[i][i]);
    let vecs = [0, 1, 2].map(|r| order.map(|i| v[r][i]));
    (vals, vecs)
}

fn physical(c: [usize; 3], spacing: Spacing) -> [f64; 3] {
    [0, 1, 2].map(|k| c[k] as f64 * spacing.0[k])
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn max_pairwise(points: &[[f64; 3]]) -> f64 {
    points
        .par_iter()
        .enumerate()
        .map(|(i, p)| points[i + 1..].iter().map(|q| dist2(p, q)).fold(0.0, f64::max))
        .reduce(|| 0.0, f64::max)
        .sqrt()
}

/// Voxels at either end of a foreground run along their `axis` grid line.
/// Every convex-hull vertex of the voxel centers is among them, so maximum
/// distances over these equal maximum distances over the whole mask.
fn line_extremes(mask: &Mask, axis: usize) -> Vec<[usize; 3]> {
    let dims = mask.dims();
    let len = dims.0[axis];
    let mut out = Vec::new();
    let (a1, a2) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    for i in 0..dims.0[a1] {
        for j in 0..dims.0[a2] {
            let at = |k: usize| {
                let mut c = [0usize; 3];
                c[axis] = k;
                c[a1] = i;
                c[a2] = j;
                c
            };
            let on = |k: usize| {
                let c = at(k);
                mask.get(c[0], c[1], c[2])
            };
            let first = (0..len).find(|&k| on(k));
            if let Some(f) = first {
                let last = (0..len).rev().find(|&k| on(k)).unwrap();
                out.push(at(f));
                if last != f {
                    out.push(at(last));
                }
            }
        }
    }
    out
}

/// Largest in-plane diameter over all planes perpendicular to `fixed_axis`.
fn max_planar_diameter(candidates: &[[usize; 3]], fixed_axis: usize, spacing: Spacing) -> f64 {
    let mut by_plane: std::collections::BTreeMap<usize, Vec<[f64; 3]>> = Default::default();
    for c in candidates {
        by_plane.entry(c[fixed_axis]).or_default().push(physical(*c, spacing));
    }
    by_plane.values().map(|pts| max_pairwise(pts)).fold(0.0, f64::max)
}

fn exposed_face_area(mask: &Mask, spacing: Spacing) -> f64 {
    let dims = mask.dims();
    let [sz, sy, sx] = spacing.0;
    let face = [sy * sx, sz * sx, sz * sy];
    let mut faces = [0usize; 3];
    for i in 0..dims.len() {
        if !mask.data()[i] {
            continue;
        }
        let c = dims.coords(i);
        for axis in 0..3 {
            for step in [-1isize, 1] {
                let n = c[axis] as isize + step;
                let exposed = n < 0 || n as usize >= dims.0[axis] || {
                    let mut nc = c;
                    nc[axis] = n as usize;
                    !mask.get(nc[0], nc[1], nc[2])
                };
                if exposed {
                    faces[axis] += 1;
                }
            }
        }
    }
    (0..3).map(|a| faces[a] as f64 * face[a]).sum()
}

/// Shape descriptors of a mask; all zeros for an empty mask.
pub fn shape_features(mask: &Mask, spacing: Spacing) -> ShapeFeatures {
    let dims = mask.dims();
    let n = mask.count();
    if n == 0 {
        return ShapeFeatures::default();
    }
    let mut mean = [0f64; 3];
    let coords: Vec<[f64; 3]> =
        (0..dims.len()).filter(|&i| mask.data()[i]).map(|i| physical(dims.coords(i), spacing)).collect();
    for p in &coords {
        for k in 0..3 {
            mean[k] += p[k];
        }
    }
    mean = mean.map(|m| m / n as f64);
    let mut cov = [[0f64; 3]; 3];
    for p in &coords {
        for r in 0..3 {
            for c in 0..3 {
                cov[r][c] += (p[r] - mean[r]) * (p[c] - mean[c]);
            }
        }
    }
    for row in cov.iter_mut() {
        for v in row.iter_mut() {
            *v /= n as f64;
        }
    }
    let (eig, _) = symmetric_eigen3(cov);
    let [l1, l2, l3] = eig.map(|l| l.max(0.0));
    let ratio = |a: f64| if l1 > 0.0 { (a / l1).sqrt() } else { 0.0 };

    let volume = n as f64 * spacing.voxel_volume();
    let area = exposed_face_area(mask, spacing);
    let sphericity = std::f64::consts::PI.cbrt() * (6.0 * volume).powf(2.0 / 3.0) / area;

    // Extremes along width (x) cover hull vertices in 3D, in axial planes
    // (fixed z) and in coronal planes (fixed y); sagittal planes (fixed x)
    // need extremes along an in-plane axis.
    let along_x = line_extremes(mask, 2);
    let along_z = line_extremes(mask, 0);
    let pts: Vec<[f64; 3]> = along_x.iter().map(|&c| physical(c, spacing)).collect();
    ShapeFeatures {
        elongation: ratio(l2),
        flatness: ratio(l3),
        minor_axis_length: 4.0 * l2.sqrt(),
        major_axis_length: 4.0 * l1.sqrt(),
        max_2d_diameter_row: max_planar_diameter(&along_z, 2, spacing),
        max_2d_diameter_column: max_planar_diameter(&along_x, 1, spacing),
        max_2d_diameter_slice: max_planar_diameter(&along_x, 0, spacing),
        max_3d_diameter: max_pairwise(&pts),
        sphericity,
        surface_area: area,
    }
}

/// The sixteen survival features of one case, in `FEATURE_NAMES` order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub case_id: String,
    pub values: [f64; NUM_FEATURES],
}

impl FeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES.iter().position(|&n| n == name).map(|i| self.values[i])
    }

    pub fn age(&self) -> f64 {
        self.values[NUM_FEATURES - 1]
    }
}

/// Assemble the feature vector. Without necrosis every feature except age is zero.
pub fn build_feature_vector(
    case_id: &str,
    labels: &LabelVolume,
    brain: &Mask,
    age: Option<f64>,
) -> Result<FeatureVector> {
    let age = age.ok_or_else(|| Error::MissingInput(format!("age of case {case_id}")))?;
    if !(age.is_finite() && age > 0.0) {
        return Err(Error::InvalidArgument(format!("age of case {case_id} must be > 0, got {age}")));
    }
    let st = statistical_features(labels, brain)?;
    let mut values = [0f64; NUM_FEATURES];
    values[NUM_FEATURES - 1] = age;
    let necrosis = region_mask_label(labels, 1);
    if necrosis.is_empty() {
        return Ok(FeatureVector { case_id: case_id.to_string(), values });
    }
    let sh = shape_features(&necrosis, labels.spacing());
    let head = [
        st.amount_edema,
        st.amount_necrosis,
        st.amount_enhancing,
        st.extent_of_tumor,
        st.proportion_of_tumor,
        sh.elongation,
        sh.flatness,
        sh.minor_axis_length,
        sh.major_axis_length,
        sh.max_2d_diameter_row,
        sh.max_2d_diameter_column,
        sh.max_2d_diameter_slice,
        sh.max_3d_diameter,
        sh.sphericity,
        sh.surface_area,
    ];
    values[..NUM_FEATURES - 1].copy_from_slice(&head);
    Ok(FeatureVector { case_id: case_id.to_string(), values })
}

fn region_mask_label(labels: &LabelVolume, label: u8) -> Mask {
    Mask::new(labels.dims(), labels.spacing(), labels.data().iter().map(|&l| l == label).collect())
        .expect("same geometry")
}

/// A feature vector with optional survival outcome and resection status.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub features: FeatureVector,
    pub survival_days: Option<f64>,
    pub resection_status: Option<String>,
}

pub fn write_features_csv(path: &Path, rows: &[FeatureRow]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(f);
    let mut header = vec!["case_id"];
    header.extend(FEATURE_NAMES);
    header.extend(["survival_days", "resection_status"]);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.features.case_id.clone()];
        rec.extend(r.features.values.iter().map(|v| format!("{v:.6}")));
        rec.push(r.survival_days.map(|d| format!("{d}")).unwrap_or_default());
        rec.push(r.resection_status.clone().unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_features_csv(path: &Path) -> Result<Vec<FeatureRow>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(f);
    let header = r.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("{}: missing column {name}", path.display())))
    };
    let id_col = col("case_id")?;
    let feature_cols = FEATURE_NAMES.iter().map(|n| col(n)).collect::<Result<Vec<_>>>()?;
    let days_col = col("survival_days").ok();
    let status_col = col("resection_status").ok();
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |c: usize| -> Result<f64> {
            rec[c].trim().parse::<f64>().map_err(|_| {
                Error::Format(format!(
                    "{}: row {}: bad number {:?} in column {}",
                    path.display(),
                    line + 2,
                    &rec[c],
                    &header[c]
                ))
            })
        };
        let mut values = [0f64; NUM_FEATURES];
        for (v, &c) in values.iter_mut().zip(&feature_cols) {
            *v = parse(c)?;
        }
        let survival_days = match days_col {
            Some(c) if !rec[c].trim().is_empty() => Some(parse(c)?),
            _ => None,
        };
        let resection_status = status_col.map(|c| rec[c].trim().to_string()).filter(|s| !s.is_empty());
        rows.push(FeatureRow {
            features: FeatureVector { case_id: rec[id_col].to_string(), values },
            survival_days,
            resection_status,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask(dims: Dims, spacing: Spacing, on: impl Fn([usize; 3]) -> bool) -> Mask {
        Mask::new(dims, spacing, (0..dims.len()).map(|i| on(dims.coords(i))).collect()).unwrap()
    }

    fn brute_diameters(m: &Mask, spacing: Spacing) -> [f64; 4] {
        let dims = m.dims();
        let pts: Vec<[usize; 3]> = (0..dims.len()).filter(|&i| m.data()[i]).map(|i| dims.coords(i)).collect();
        let mut best = [0f64; 4];
        for a in &pts {
            for b in &pts {
                let d = dist2(&physical(*a, spacing), &physical(*b, spacing)).sqrt();
                // row: same x; column: same y; slice: same z.
                if a[2] == b[2] {
                    best[0] = best[0].max(d);
                }
                if a[1] == b[1] {
                    best[1] = best[1].max(d);
                }
                if a[0] == b[0] {
                    best[2] = best[2].max(d);
                }
                best[3] = best[3].max(d);
            }
        }
        best
    }

    #[test]
    fn single_voxel() {
        let s = Spacing::default();
        let f = shape_features(&mask(Dims::new(3, 3, 3), s, |c| c == [1, 1, 1]), s);
        assert!((f.sphericity - 0.80600).abs() < 5e-6);
        assert_eq!(f.surface_area, 6.0);
        for v in [
            f.elongation,
            f.flatness,
            f.minor_axis_length,
            f.major_axis_length,
            f.max_3d_diameter,
            f.max_2d_diameter_slice,
        ] {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn cube_surface_and_sphericity() {
        let s = Spacing::default();
        let one = shape_features(&mask(Dims::new(3, 3, 3), s, |c| c == [0, 0, 0]), s);
        for d in 1..6usize {
            let f = shape_features(&mask(Dims::new(8, 8, 8), s, |c| c.iter().all(|&v| (1..1 + d).contains(&v))), s);
            assert_eq!(f.surface_area, (6 * d * d) as f64);
            assert!((f.sphericity - one.sphericity).abs() < 1e-12);
        }
    }

    #[test]
    fn two_voxel_diameter() {
        let s = Spacing::default();
        let f = shape_features(&mask(Dims::new(1, 4, 5), s, |c| c == [0, 0, 0] || c == [0, 3, 4]), s);
        assert!((f.max_3d_diameter - 5.0).abs() < 1e-12);
        assert!((f.max_2d_diameter_slice - 5.0).abs() < 1e-12);
    }

    #[test]
    fn diameters_match_all_pairs() {
        for seed in 0..30u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dims = Dims::new(rng.random_range(1..9), rng.random_range(1..9), rng.random_range(1..9));
            let spacing = Spacing([rng.random_range(0.5..2.5), rng.random_range(0.5..2.5), rng.random_range(0.5..2.5)]);
            let density = rng.random_range(0.1..0.8);
            let m = Mask::new(dims, spacing, (0..dims.len()).map(|_| rng.random_bool(density)).collect()).unwrap();
            let f = shape_features(&m, spacing);
            let [row, col, slice, d3] = brute_diameters(&m, spacing);
            assert!((f.max_2d_diameter_row - row).abs() < 1e-12, "seed {seed}");
            assert!((f.max_2d_diameter_column - col).abs() < 1e-12, "seed {seed}");
            assert!((f.max_2d_diameter_slice - slice).abs() < 1e-12, "seed {seed}");
            assert!((f.max_3d_diameter - d3).abs() < 1e-12, "seed {seed}");
            for d2 in [row, col, slice] {
                assert!(f.max_3d_diameter >= d2);
            }
            if m.count() > 0 {
                assert!(f.elongation <= 1.0 && f.flatness <= f.elongation + 1e-12);
                assert!(f.sphericity > 0.0 && f.sphericity <= 1.0);
            }
        }
    }

    #[test]
    fn eigen_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let b: [[f64; 3]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-3.0..3.0)));
            let mut m = [[0f64; 3]; 3];
            for r in 0..3 {
                for c in 0..3 {
                    m[r][c] = (0..3).map(|k| b[r][k] * b[c][k]).sum();
                }
            }
            let (vals, vecs) = symmetric_eigen3(m);
            assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
            for k in 0..3 {
                let v = [vecs[0][k], vecs[1][k], vecs[2][k]];
                let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                assert!((norm - 1.0).abs() < 1e-12);
                for r in 0..3 {
                    let mv: f64 = (0..3).map(|c| m[r][c] * v[c]).sum();
                    assert!((mv - vals[k] * v[r]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn ratios_are_scale_invariant() {
        let dims = Dims::new(10, 10, 10);
        let on = |c: [usize; 3]| {
            let (z, y, x) = (c[0] as f64 - 4.5, c[1] as f64 - 4.5, c[2] as f64 - 4.5);
            (z / 2.0).powi(2) + (y / 3.5).powi(2) + (x / 4.5).powi(2) <= 1.0
        };
        let a = Spacing([1.0, 1.2, 0.8]);
        let b = Spacing([3.0, 3.6, 2.4]);
        let fa = shape_features(&mask(dims, a, on), a);
        let fb = shape_features(&mask(dims, b, on), b);
        assert!((fa.elongation - fb.elongation).abs() < 1e-9);
        assert!((fa.flatness - fb.flatness).abs() < 1e-9);
        assert!((fa.sphericity - fb.sphericity).abs() < 1e-9);
        assert!((fb.major_axis_length - 3.0 * fa.major_axis_length).abs() < 1e-9);
    }

    fn labelled(dims: Dims, spacing: Spacing, counts: [(u8, usize); 3]) -> LabelVolume {
        let mut data = vec![0u8; dims.len()];
        let mut k = 0;
        for (l, n) in counts {
            for _ in 0..n {
                data[k] = l;
                k += 1;
            }
        }
        LabelVolume::new(dims, spacing, data).unwrap()
    }

    #[test]
    fn statistical_counts() {
        let dims = Dims::new(4, 5, 5);
        let s = Spacing::default();
        let brain = mask(dims, s, |_| true);
        let l = labelled(dims, s, [(2, 10), (1, 5), (4, 2)]);
        let st = statistical_features(&l, &brain).unwrap();
        assert_eq!(
            (st.amount_edema, st.amount_necrosis, st.amount_enhancing, st.extent_of_tumor),
            (10.0, 5.0, 2.0, 17.0)
        );
        assert_eq!(st.proportion_of_tumor, 17.0 / 100.0);

        let s2 = Spacing([2.0, 2.0, 2.0]);
        let st2 =
            statistical_features(&labelled(dims, s2, [(2, 10), (1, 5), (4, 2)]), &mask(dims, s2, |_| true)).unwrap();
        assert_eq!(st2.amount_edema, 80.0);
        assert_eq!(st2.proportion_of_tumor, st.proportion_of_tumor);

        let none = statistical_features(&labelled(dims, s, [(2, 0), (1, 0), (4, 0)]), &brain).unwrap();
        assert_eq!(none, StatisticalFeatures::default());
        assert!(matches!(statistical_features(&l, &Mask::empty(dims, s).unwrap()), Err(Error::EmptyBrainMask)));
    }

    #[test]
    fn necrosis_free_case_keeps_only_age() {
        let dims = Dims::new(4, 5, 5);
        let s = Spacing::default();
        let l = labelled(dims, s, [(2, 30), (4, 10), (2, 0)]);
        let f = build_feature_vector("c", &l, &mask(dims, s, |_| true), Some(60.0)).unwrap();
        assert!(f.values[..15].iter().all(|&v| v == 0.0));
        assert_eq!(f.age(), 60.0);
        assert!(matches!(build_feature_vector("c", &l, &mask(dims, s, |_| true), None), Err(Error::MissingInput(_))));
        assert!(build_feature_vector("c", &l, &mask(dims, s, |_| true), Some(0.0)).is_err());
    }

    #[test]
    fn feature_vector_composes_parts() {
        let mut found_necrosis = false;
        for seed in 11..20 {
            let case = crate::phantom::generate_case("x", &Default::default(), seed).unwrap();
            if case.labels.count(1) == 0 {
                continue;
            }
            found_necrosis = true;
            let brain = case.stack.brain_mask();
            let f = build_feature_vector("x", &case.labels, &brain, Some(55.0)).unwrap();
            let st = statistical_features(&case.labels, &brain).unwrap();
            let sh = shape_features(&region_mask_label(&case.labels, 1), case.labels.spacing());
            assert_eq!(f.get("amount_necrosis"), Some(st.amount_necrosis));
            assert_eq!(f.get("proportion_of_tumor"), Some(st.proportion_of_tumor));
            assert_eq!(f.get("sphericity"), Some(sh.sphericity));
            assert_eq!(f.get("max_3d_diameter"), Some(sh.max_3d_diameter));
            assert_eq!(f, build_feature_vector("x", &case.labels, &brain, Some(55.0)).unwrap());
            assert!(f.values.iter().all(|&v| v >= 0.0));
            break;
        }
        assert!(found_necrosis);
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            FeatureRow {
                features: FeatureVector { case_id: "a".into(), values: std::array::from_fn(|i| i as f64 * 0.5) },
                survival_days: Some(412.0),
                resection_status: Some("GTR".into()),
            },
            FeatureRow {
                features: FeatureVector { case_id: "b".into(), values: [1.0; NUM_FEATURES] },
                survival_days: None,
                resection_status: None,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        write_features_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("case_id,amount_edema,amount_necrosis,"));
        assert!(text.lines().next().unwrap().ends_with("age,survival_days,resection_status"));
        assert_eq!(read_features_csv(&path).unwrap(), rows);
    }
}
