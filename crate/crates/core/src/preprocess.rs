//! Z-score normalization, patch sampling and left-right flip augmentation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Dims, LabelVolume, ModalityStack, Volume};

pub const CHANNELS: usize = 4;

/// Standardize brain voxels (value != 0) to zero mean and unit population
/// standard deviation; background stays 0.
pub fn zscore_normalize(v: &Volume) -> Result<Volume> {
    let (mut n, mut sum) = (0usize, 0f64);
    for &x in v.data() {
        if x != 0.0 {
            n += 1;
            sum += x as f64;
        }
    }
    if n == 0 {
        return Err(Error::EmptyBrainMask);
    }
    let mean = sum / n as f64;
    let var = v.data().iter().filter(|&&x| x != 0.0).map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n as f64;
    if !(var > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let std = var.sqrt();
    let data = v.data().iter().map(|&x| if x != 0.0 { ((x as f64 - mean) / std) as f32 } else { 0.0 }).collect();
    Volume::new(v.dims(), v.spacing(), data)
}

pub fn normalize_stack(stack: &ModalityStack) -> Result<ModalityStack> {
    stack.map(zscore_normalize)
}

/// A 4-channel cube cut from a modality stack, with its optional label cube.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    /// Edge length.
    pub size: usize,
    /// (z, y, x) voxel offset in the (zero-padded) source volume.
    pub origin: [usize; 3],
    /// Channel-major `CHANNELS * size^3` values.
    pub data: Vec<f32>,
    pub labels: Option<Vec<u8>>,
}

impl Patch {
    pub fn voxels(&self) -> usize {
        self.size.pow(3)
    }

    pub fn center(&self) -> [usize; 3] {
        let h = self.size / 2;
        [self.origin[0] + h, self.origin[1] + h, self.origin[2] + h]
    }
}

fn check_patch_size(p: usize) -> Result<()> {
    if p < 4 || !p.is_multiple_of(2) {
        return Err(Error::Config(format!("patch size must be even and >= 4, got {p}")));
    }
    Ok(())
}

/// Padded extent: the source dims, enlarged with zeros to at least `p`.
pub fn padded_dims(dims: Dims, p: usize) -> Dims {
    Dims(dims.0.map(|d| d.max(p)))
}

/// Cut a cube at `origin` (in padded coordinates); voxels outside the source read as zero.
pub fn extract_patch(stack: &ModalityStack, labels: Option<&LabelVolume>, origin: [usize; 3], p: usize) -> Patch {
    let dims = stack.dims();
    let n = p * p * p;
    let mut data = vec![0f32; CHANNELS * n];
    let mut lab = labels.map(|_| vec![0u8; n]);
    for (c, vol) in stack.channels().iter().enumerate() {
        copy_cube(vol.data(), dims, origin, p, &mut data[c * n..(c + 1) * n]);
    }
    if let (Some(l), Some(out)) = (labels, lab.as_mut()) {
        copy_cube(l.data(), dims, origin, p, out);
    }
    Patch { size: p, origin, data, labels: lab }
}

fn copy_cube<T: Copy>(src: &[T], dims: Dims, origin: [usize; 3], p: usize, dst: &mut [T]) {
    let [d, h, w] = dims.0;
    for z in 0..p {
        let sz = origin[0] + z;
        if sz >= d {
            break;
        }
        for y in 0..p {
            let sy = origin[1] + y;
            if sy >= h {
                break;
            }
            let x_end = p.min(w.saturating_sub(origin[2]));
            let s = dims.index(sz, sy, origin[2]);
            let o = (z * p + y) * p;
            dst[o..o + x_end].copy_from_slice(&src[s..s + x_end]);
        }
    }
}

/// Patch-center sampling policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingPolicy {
    /// Fraction of patches centered on a tumor voxel (label != 0).
    pub tumor_fraction: f64,
    pub patches_per_case: usize,
    pub patch_size: usize,
    pub seed: u64,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        SamplingPolicy { tumor_fraction: 0.5, patches_per_case: 8, patch_size: 16, seed: 0 }
    }
}

/// Sample `patches_per_case` patches. `round(tumor_fraction * n)` of them are
/// centered on tumor voxels and the rest on background voxels.
pub fn sample_patches(stack: &ModalityStack, labels: &LabelVolume, policy: &SamplingPolicy) -> Result<Vec<Patch>> {
    let p = policy.patch_size;
    check_patch_size(p)?;
    if !(0.0..=1.0).contains(&policy.tumor_fraction) {
        return Err(Error::Config(format!("tumor_fraction {} outside [0, 1]", policy.tumor_fraction)));
    }
    if labels.dims() != stack.dims() {
        return Err(Error::Shape("labels and modalities differ in dims".into()));
    }
    let dims = stack.dims();
    let padded = padded_dims(dims, p);
    let n_tumor = (policy.tumor_fraction * policy.patches_per_case as f64).round() as usize;
    let half = p / 2;

    // Centers whose cube fits entirely inside the padded grid.
    let fits = |c: [usize; 3]| (0..3).all(|a| c[a] >= half && c[a] - half + p <= padded.0[a]);
    let mut tumor = Vec::new();
    let mut tumor_all = Vec::new();
    let mut background = Vec::new();
    for (i, &l) in labels.data().iter().enumerate() {
        let c = dims.coords(i);
        if l != 0 {
            tumor_all.push(c);
            if fits(c) {
                tumor.push(c);
            }
        } else if fits(c) {
            background.push(c);
        }
    }
    if n_tumor > 0 && tumor_all.is_empty() {
        return Err(Error::NoTumor { case_id: stack.case_id.clone() });
    }
    // Tumors hugging the border fall back to clamped windows around any tumor voxel.
    if tumor.is_empty() {
        tumor = tumor_all;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let clamp_origin = |c: [usize; 3]| -> [usize; 3] {
        let mut o = [0usize; 3];
        for a in 0..3 {
            o[a] = c[a].saturating_sub(half).min(padded.0[a] - p);
        }
        o
    };
    let mut out = Vec::with_capacity(policy.patches_per_case);
    for k in 0..policy.patches_per_case {
        let origin = if k < n_tumor {
            clamp_origin(tumor[rng.random_range(0..tumor.len())])
        } else if !background.is_empty() {
            clamp_origin(background[rng.random_range(0..background.len())])
        } else {
            let mut o = [0usize; 3];
            for a in 0..3 {
                o[a] = rng.random_range(0..=padded.0[a] - p);
            }
            o
        };
        out.push(extract_patch(stack, Some(labels), origin, p));
    }
    Ok(out)
}

/// Reverse the width axis of a channel-major cube buffer in place.
pub(crate) fn flip_width_in_place<T>(buf: &mut [T], width: usize) {
    for row in buf.chunks_exact_mut(width) {
        row.reverse();
    }
}

/// Mirror a patch across the left-right (width) axis, labels included.
pub fn flip_lr(patch: &Patch) -> Patch {
    let mut out = patch.clone();
    flip_width_in_place(&mut out.data, patch.size);
    if let Some(l) = out.labels.as_mut() {
        flip_width_in_place(l, patch.size);
    }
    out
}

pub fn flip_volume_lr(v: &Volume) -> Volume {
    let mut data = v.data().to_vec();
    flip_width_in_place(&mut data, v.dims().width());
    Volume::new(v.dims(), v.spacing(), data).expect("flip preserves validity")
}

pub fn flip_stack_lr(stack: &ModalityStack) -> ModalityStack {
    stack.map(|v| Ok(flip_volume_lr(v))).expect("flip preserves geometry")
}
