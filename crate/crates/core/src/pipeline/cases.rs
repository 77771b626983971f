//! On-disk case layout.
//!
//! A cases root holds one directory per case with `t1`, `t2`, `t1c`, `flair`
//! and optionally `seg` volumes (each `.mvol`, `.nii` or `.nii.gz`), plus an
//! optional `survival.csv` with columns `case_id, age, survival_days,
//! resection_status`. Label maps produced by the pipeline live flat in a
//! directory as `<case_id>.mvol`.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::volume::{
    load_internal, load_nifti, write_internal, write_nifti_f32, write_nifti_labels, AnyVolume, LabelVolume,
    ModalityStack, Volume,
};

pub const MODALITIES: [&str; 4] = ["t1", "t2", "t1c", "flair"];
pub const SEGMENTATION: &str = "seg";
pub const SURVIVAL_FILE: &str = "survival.csv";
const EXTENSIONS: [&str; 3] = ["mvol", "nii.gz", "nii"];

fn missing(what: impl std::fmt::Display) -> Error {
    Error::MissingInput(what.to_string())
}

pub fn require_dir(path: &Path) -> Result<()> {
    if !path.is_dir() {
        return Err(missing(format!("directory {}", path.display())));
    }
    Ok(())
}

pub fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(missing(format!("file {}", path.display())));
    }
    Ok(())
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn is_nifti(path: &Path) -> bool {
    let s = path.to_string_lossy();
    s.ends_with(".nii") || s.ends_with(".nii.gz")
}

/// Load a scalar or label volume from either format.
pub fn load_any(path: &Path) -> Result<AnyVolume> {
    require_file(path)?;
    if is_nifti(path) {
        Ok(AnyVolume::Scalar(load_nifti(path)?))
    } else {
        load_internal(path)
    }
}

pub fn load_scalar(path: &Path) -> Result<Volume> {
    match load_any(path)? {
        AnyVolume::Scalar(v) => Ok(v),
        AnyVolume::Labels(l) => Ok(l.to_volume()),
    }
}

pub fn load_labels(path: &Path) -> Result<LabelVolume> {
    match load_any(path)? {
        AnyVolume::Scalar(v) => LabelVolume::from_volume(&v),
        AnyVolume::Labels(l) => Ok(l),
    }
}

/// Write by extension: NIfTI for `.nii`/`.nii.gz`, the internal format otherwise.
pub fn write_scalar(v: &Volume, path: &Path) -> Result<()> {
    if is_nifti(path) {
        write_nifti_f32(v, path)
    } else {
        write_internal(v, path)
    }
}

pub fn write_labels(l: &LabelVolume, path: &Path) -> Result<()> {
    if is_nifti(path) {
        write_nifti_labels(l, path)
    } else {
        write_internal(l, path)
    }
}

/// First existing `<dir>/<stem>.<ext>` over the supported extensions.
pub fn find_volume(dir: &Path, stem: &str) -> Option<PathBuf> {
    EXTENSIONS.iter().map(|e| dir.join(format!("{stem}.{e}"))).find(|p| p.is_file())
}

/// Case directories under `root` (those holding a `t1` volume), sorted by name.
pub fn discover_cases(root: &Path) -> Result<Vec<PathBuf>> {
    require_dir(root)?;
    let mut out = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.is_dir() && find_volume(&path, MODALITIES[0]).is_some() {
            out.push(path);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(missing(format!("case directories under {}", root.display())));
    }
    Ok(out)
}

pub fn case_id(dir: &Path) -> String {
    dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

pub struct LoadedCase {
    pub stack: ModalityStack,
    pub labels: Option<LabelVolume>,
}

pub fn load_case(dir: &Path) -> Result<LoadedCase> {
    let id = case_id(dir);
    let mut vols = Vec::with_capacity(4);
    for m in MODALITIES {
        let p = find_volume(dir, m).ok_or_else(|| missing(format!("{m} volume of case {id} in {}", dir.display())))?;
        vols.push(load_scalar(&p)?);
    }
    let [t1, t2, t1c, flair]: [Volume; 4] = vols.try_into().expect("four modalities");
    let stack = ModalityStack::new(id, t1, t2, t1c, flair)?;
    let labels = find_volume(dir, SEGMENTATION).map(|p| load_labels(&p)).transpose()?;
    if let Some(l) = &labels {
        if l.dims() != stack.dims() {
            return Err(Error::Shape(format!("case {}: segmentation dims differ from modalities", stack.case_id)));
        }
    }
    Ok(LoadedCase { stack, labels })
}

pub fn write_case(dir: &Path, stack: &ModalityStack, labels: Option<&LabelVolume>) -> Result<()> {
    ensure_dir(dir)?;
    for (m, v) in MODALITIES.iter().zip(stack.channels()) {
        write_internal(v, dir.join(format!("{m}.mvol")))?;
    }
    if let Some(l) = labels {
        write_internal(l, dir.join(format!("{SEGMENTATION}.mvol")))?;
    }
    Ok(())
}

/// Label maps stored flat as `<case_id>.<ext>`, sorted by case id.
pub fn load_label_dir(dir: &Path) -> Result<Vec<(String, LabelVolume)>> {
    require_dir(dir)?;
    let mut found = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if let Some(stem) = EXTENSIONS.iter().find_map(|e| name.strip_suffix(&format!(".{e}"))) {
            if path.is_file() {
                found.push((stem.to_string(), path));
            }
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(missing(format!("label maps in {}", dir.display())));
    }
    found.into_iter().map(|(id, p)| Ok((id, load_labels(&p)?))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalRecord {
    pub case_id: String,
    pub age: Option<f64>,
    pub survival_days: Option<f64>,
    pub resection_status: Option<String>,
}

fn opt_f64(path: &Path, s: &str, what: &str) -> Result<Option<f64>> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| Error::Format(format!("{}: bad {what} {s:?}", path.display())))
}

pub fn read_survival_csv(path: &Path) -> Result<Vec<SurvivalRecord>> {
    require_file(path)?;
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h.trim() == name);
    let id = col("case_id").ok_or_else(|| Error::Format(format!("{}: missing case_id column", path.display())))?;
    let (age, days, status) = (col("age"), col("survival_days"), col("resection_status"));
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |c: Option<usize>| c.map(|c| rec.get(c).unwrap_or("").to_string()).unwrap_or_default();
        out.push(SurvivalRecord {
            case_id: rec[id].trim().to_string(),
            age: opt_f64(path, &field(age), "age")?,
            survival_days: opt_f64(path, &field(days), "survival_days")?,
            resection_status: Some(field(status).trim().to_string()).filter(|s| !s.is_empty()),
        });
    }
    Ok(out)
}

pub fn write_survival_csv(path: &Path, records: &[SurvivalRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["case_id", "age", "survival_days", "resection_status"])?;
    for r in records {
        w.write_record([
            r.case_id.clone(),
            r.age.map(|v| format!("{v}")).unwrap_or_default(),
            r.survival_days.map(|v| format!("{v}")).unwrap_or_default(),
            r.resection_status.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_case, PhantomConfig};

    #[test]
    fn case_round_trip_and_discovery() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PhantomConfig { dims: [12, 12, 12], ..Default::default() };
        for (i, id) in ["b", "a"].iter().enumerate() {
            let c = generate_case(id, &cfg, i as u64).unwrap();
            write_case(&dir.path().join(id), &c.stack, Some(&c.labels)).unwrap();
        }
        std::fs::create_dir(dir.path().join("not_a_case")).unwrap();
        let found = discover_cases(dir.path()).unwrap();
        assert_eq!(found.iter().map(|p| case_id(p)).collect::<Vec<_>>(), vec!["a", "b"]);
        let loaded = load_case(&found[0]).unwrap();
        let want = generate_case("a", &cfg, 1).unwrap();
        assert_eq!(loaded.stack.t1c.data(), want.stack.t1c.data());
        assert_eq!(loaded.labels.unwrap(), want.labels);
    }

    #[test]
    fn nifti_cases_load_too() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate_case("n", &PhantomConfig { dims: [8, 9, 10], ..Default::default() }, 0).unwrap();
        let case = dir.path().join("n");
        ensure_dir(&case).unwrap();
        for (m, v) in MODALITIES.iter().zip(c.stack.channels()) {
            write_scalar(v, &case.join(format!("{m}.nii.gz"))).unwrap();
        }
        write_labels(&c.labels, &case.join("seg.nii")).unwrap();
        let loaded = load_case(&case).unwrap();
        assert_eq!(loaded.stack.flair.data(), c.stack.flair.data());
        assert_eq!(loaded.labels.unwrap(), c.labels);
    }

    #[test]
    fn missing_inputs_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(discover_cases(&dir.path().join("nope")), Err(Error::MissingInput(_))));
        assert!(matches!(discover_cases(dir.path()), Err(Error::MissingInput(_))));
        assert!(matches!(load_label_dir(dir.path()), Err(Error::MissingInput(_))));
    }

    #[test]
    fn survival_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(SURVIVAL_FILE);
        let recs = vec![
            SurvivalRecord {
                case_id: "a".into(),
                age: Some(61.5),
                survival_days: Some(300.0),
                resection_status: Some("GTR".into()),
            },
            SurvivalRecord { case_id: "b".into(), age: Some(40.0), survival_days: None, resection_status: None },
        ];
        write_survival_csv(&p, &recs).unwrap();
        assert_eq!(read_survival_csv(&p).unwrap(), recs);
    }
}
