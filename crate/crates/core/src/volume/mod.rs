//! Volume and label data model plus file ingestion.

mod mvol;
mod nifti;

pub use mvol::{load_internal, load_internal_labels, load_internal_volume, write_internal, AnyVolume};
pub use nifti::{load_nifti, write_nifti_f32, write_nifti_labels};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voxel counts along (depth, height, width); width is the fastest axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims(pub [usize; 3]);

impl Dims {
    pub const fn new(depth: usize, height: usize, width: usize) -> Self {
        Dims([depth, height, width])
    }

    pub fn depth(&self) -> usize {
        self.0[0]
    }

    pub fn height(&self) -> usize {
        self.0[1]
    }

    pub fn width(&self) -> usize {
        self.0[2]
    }

    pub fn len(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.0[1] + y) * self.0[2] + x
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.0[2];
        let y = (idx / self.0[2]) % self.0[1];
        let z = idx / (self.0[2] * self.0[1]);
        [z, y, x]
    }

    fn validate(&self) -> Result<()> {
        if self.0.contains(&0) {
            return Err(Error::InvalidVolume(format!("all dims must be >= 1, got {:?}", self.0)));
        }
        Ok(())
    }
}

/// Physical voxel size in mm along (depth, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing(pub [f64; 3]);

impl Spacing {
    pub const ISOTROPIC_1MM: Spacing = Spacing([1.0, 1.0, 1.0]);

    pub fn voxel_volume(&self) -> f64 {
        self.0.iter().product()
    }

    fn validate(&self) -> Result<()> {
        if self.0.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidVolume(format!("spacing must be finite and > 0, got {:?}", self.0)));
        }
        Ok(())
    }
}

impl Default for Spacing {
    fn default() -> Self {
        Spacing::ISOTROPIC_1MM
    }
}

/// One scalar 3D grid with physical spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    spacing: Spacing,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<f32>) -> Result<Self> {
        dims.validate()?;
        spacing.validate()?;
        if data.len() != dims.len() {
            return Err(Error::InvalidVolume(format!("data length {} does not match dims {:?}", data.len(), dims.0)));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidVolume(format!("non-finite value at voxel {i}")));
        }
        Ok(Volume { dims, spacing, data })
    }

    pub fn zeros(dims: Dims, spacing: Spacing) -> Result<Self> {
        Self::new(dims, spacing, vec![0.0; dims.len()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[self.dims.index(z, y, x)]
    }
}

/// Per-voxel BraTS labels: 0 background, 1 NCR/NET, 2 edema, 4 enhancing tumor.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    dims: Dims,
    spacing: Spacing,
    data: Vec<u8>,
}

pub const VALID_LABELS: [u8; 4] = [0, 1, 2, 4];

pub fn is_valid_label(v: u8) -> bool {
    matches!(v, 0 | 1 | 2 | 4)
}

/// Network channel of a BraTS label: 0, 1, 2, 4 map to channels 0, 1, 2, 3.
pub fn label_to_channel(v: u8) -> Option<usize> {
    match v {
        0 => Some(0),
        1 => Some(1),
        2 => Some(2),
        4 => Some(3),
        _ => None,
    }
}

pub const CHANNEL_LABELS: [u8; 4] = [0, 1, 2, 4];

impl LabelVolume {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<u8>) -> Result<Self> {
        dims.validate()?;
        spacing.validate()?;
        if data.len() != dims.len() {
            return Err(Error::InvalidVolume(format!("label length {} does not match dims {:?}", data.len(), dims.0)));
        }
        if let Some(index) = data.iter().position(|&v| !is_valid_label(v)) {
            return Err(Error::InvalidLabel { value: data[index], index });
        }
        Ok(LabelVolume { dims, spacing, data })
    }

    pub fn background(dims: Dims, spacing: Spacing) -> Result<Self> {
        Self::new(dims, spacing, vec![0; dims.len()])
    }

    /// Interpret an integer-valued scalar volume (e.g. a NIfTI segmentation) as labels.
    pub fn from_volume(v: &Volume) -> Result<Self> {
        let mut data = Vec::with_capacity(v.data.len());
        for (index, &x) in v.data.iter().enumerate() {
            let r = x.round();
            if (x - r).abs() > 1e-3 || !(0.0..=255.0).contains(&r) {
                return Err(Error::Format(format!("non-integer label {x} at voxel {index}")));
            }
            data.push(r as u8);
        }
        Self::new(v.dims, v.spacing, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Rebuild with new label data of identical geometry.
    pub fn with_data(&self, data: Vec<u8>) -> Result<Self> {
        Self::new(self.dims, self.spacing, data)
    }

    pub fn count(&self, label: u8) -> usize {
        self.data.iter().filter(|&&v| v == label).count()
    }

    pub fn region_mask(&self, region: RegionId) -> Mask {
        region_mask(self, region)
    }

    pub fn to_volume(&self) -> Volume {
        Volume { dims: self.dims, spacing: self.spacing, data: self.data.iter().map(|&v| v as f32).collect() }
    }
}

/// Nested evaluation regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionId {
    /// Whole tumor: labels {1, 2, 4}.
    WT,
    /// Tumor core: labels {1, 4}.
    TC,
    /// Enhancing tumor: label {4}.
    ET,
}

impl RegionId {
    /// Table ordering used in reports.
    pub const ALL: [RegionId; 3] = [RegionId::ET, RegionId::WT, RegionId::TC];

    pub fn labels(&self) -> &'static [u8] {
        match self {
            RegionId::WT => &[1, 2, 4],
            RegionId::TC => &[1, 4],
            RegionId::ET => &[4],
        }
    }

    pub fn contains(&self, label: u8) -> bool {
        self.labels().contains(&label)
    }

    pub fn name(&self) -> &'static str {
        match self {
            RegionId::WT => "WT",
            RegionId::TC => "TC",
            RegionId::ET => "ET",
        }
    }
}

impl std::fmt::Display for RegionId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Binary volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    dims: Dims,
    spacing: Spacing,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<bool>) -> Result<Self> {
        dims.validate()?;
        spacing.validate()?;
        if data.len() != dims.len() {
            return Err(Error::InvalidVolume(format!("mask length {} does not match dims {:?}", data.len(), dims.0)));
        }
        Ok(Mask { dims, spacing, data })
    }

    pub fn empty(dims: Dims, spacing: Spacing) -> Result<Self> {
        Self::new(dims, spacing, vec![false; dims.len()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> bool {
        self.data[self.dims.index(z, y, x)]
    }

    /// Voxels that are nonzero in any of the given volumes.
    pub fn nonzero_union(volumes: &[&Volume]) -> Result<Self> {
        let first = volumes.first().ok_or_else(|| Error::InvalidArgument("no volumes given".into()))?;
        let mut data = vec![false; first.dims.len()];
        for v in volumes {
            if v.dims != first.dims {
                return Err(Error::Shape("volumes differ in dims".into()));
            }
            for (d, &x) in data.iter_mut().zip(&v.data) {
                *d |= x != 0.0;
            }
        }
        Mask::new(first.dims, first.spacing, data)
    }
}

/// Voxel is set iff its label belongs to the region's label set.
pub fn region_mask(labels: &LabelVolume, region: RegionId) -> Mask {
    Mask { dims: labels.dims, spacing: labels.spacing, data: labels.data.iter().map(|&l| region.contains(l)).collect() }
}

/// The four co-registered MRI modalities of one case.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityStack {
    pub case_id: String,
    pub t1: Volume,
    pub t2: Volume,
    pub t1c: Volume,
    pub flair: Volume,
}

impl ModalityStack {
    pub const MODALITIES: [&'static str; 4] = ["t1", "t2", "t1c", "flair"];

    pub fn new(case_id: impl Into<String>, t1: Volume, t2: Volume, t1c: Volume, flair: Volume) -> Result<Self> {
        let geom = (t1.dims, t1.spacing);
        for (name, v) in [("t2", &t2), ("t1c", &t1c), ("flair", &flair)] {
            if (v.dims, v.spacing) != geom {
                return Err(Error::Shape(format!("modality {name} geometry differs from t1")));
            }
        }
        Ok(ModalityStack { case_id: case_id.into(), t1, t2, t1c, flair })
    }

    pub fn dims(&self) -> Dims {
        self.t1.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.t1.spacing
    }

    /// Channel order: t1, t2, t1c, flair.
    pub fn channels(&self) -> [&Volume; 4] {
        [&self.t1, &self.t2, &self.t1c, &self.flair]
    }

    pub fn map(&self, mut f: impl FnMut(&Volume) -> Result<Volume>) -> Result<Self> {
        ModalityStack::new(self.case_id.clone(), f(&self.t1)?, f(&self.t2)?, f(&self.t1c)?, f(&self.flair)?)
    }

    pub fn brain_mask(&self) -> Mask {
        Mask::nonzero_union(&self.channels()).expect("stack modalities share geometry")
    }
}
