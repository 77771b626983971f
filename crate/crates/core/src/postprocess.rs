//! Connected-component cleanup of predicted label maps: small whole-tumor
//! components are erased and a tiny enhancing region is relabeled as necrosis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{region_mask, LabelVolume, Mask, RegionId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Faces,
    Full,
}

impl Connectivity {
    pub fn neighbors(self) -> u8 {
        match self {
            Connectivity::Faces => 6,
            Connectivity::Full => 26,
        }
    }
}

impl TryFrom<u8> for Connectivity {
    type Error = Error;

    fn try_from(n: u8) -> Result<Self> {
        match n {
            6 => Ok(Connectivity::Faces),
            26 => Ok(Connectivity::Full),
            _ => Err(Error::Config(format!("connectivity must be 6 or 26, got {n}"))),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        c.neighbors()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostprocessConfig {
    /// Whole-tumor components with fewer voxels are removed.
    pub min_voxels: usize,
    /// A total enhancing count in `1..et_threshold` is relabeled as necrosis.
    pub et_threshold: usize,
    pub connectivity: Connectivity,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig { min_voxels: 1000, et_threshold: 300, connectivity: Connectivity::Full }
    }
}

/// A maximal connected set of foreground voxels, as ascending flat indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub voxels: Vec<usize>,
}

impl Component {
    pub fn size(&self) -> usize {
        self.voxels.len()
    }
}

/// Offsets of the already-scanned half of the neighborhood.
fn backward_offsets(c: Connectivity) -> Vec<[isize; 3]> {
    let mut out = Vec::new();
    for dz in -1isize..=1 {
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let manhattan = dz.abs() + dy.abs() + dx.abs();
                if manhattan == 0 || (c == Connectivity::Faces && manhattan != 1) {
                    continue;
                }
                if (dz, dy, dx) < (0, 0, 0) {
                    out.push([dz, dy, dx]);
                }
            }
        }
    }
    out
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Label connected components with a two-pass union-find. Components are
/// ordered by their first voxel in scan order.
pub fn connected_components(mask: &Mask, connectivity: Connectivity) -> Vec<Component> {
    let dims = mask.dims();
    let [d, h, w] = dims.0.map(|v| v as isize);
    let offsets = backward_offsets(connectivity);
    let data = mask.data();
    let mut parent: Vec<usize> = (0..data.len()).collect();
    for (i, &on) in data.iter().enumerate() {
        if !on {
            continue;
        }
        let [z, y, x] = dims.coords(i).map(|v| v as isize);
        for [dz, dy, dx] in &offsets {
            let (nz, ny, nx) = (z + dz, y + dy, x + dx);
            if nz < 0 || ny < 0 || nx < 0 || nz >= d || ny >= h || nx >= w {
                continue;
            }
            let j = dims.index(nz as usize, ny as usize, nx as usize);
            if data[j] {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    // Keep the earlier voxel as root so roots are first voxels.
                    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                    parent[hi] = lo;
                }
            }
        }
    }
    let mut slot = vec![usize::MAX; data.len()];
    let mut comps: Vec<Component> = Vec::new();
    for (i, &on) in data.iter().enumerate() {
        if !on {
            continue;
        }
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = comps.len();
            comps.push(Component { voxels: Vec::new() });
        }
        comps[slot[r]].voxels.push(i);
    }
    comps
}

/// Zero every whole-tumor component smaller than `min_voxels`.
pub fn remove_small_tumors(labels: &LabelVolume, min_voxels: usize, connectivity: Connectivity) -> LabelVolume {
    let wt = region_mask(labels, RegionId::WT);
    let mut data = labels.data().to_vec();
    for comp in connected_components(&wt, connectivity) {
        if comp.size() < min_voxels {
            for &i in &comp.voxels {
                data[i] = 0;
            }
        }
    }
    labels.with_data(data).expect("clearing voxels keeps labels valid")
}

/// Relabel all enhancing voxels as necrosis when there are some, but fewer than `threshold`.
pub fn convert_small_enhancing(labels: &LabelVolume, threshold: usize) -> LabelVolume {
    let et = labels.count(4);
    if et == 0 || et >= threshold {
        return labels.clone();
    }
    let data = labels.data().iter().map(|&l| if l == 4 { 1 } else { l }).collect();
    labels.with_data(data).expect("necrosis is a valid label")
}

pub fn postprocess_pipeline(labels: &LabelVolume, cfg: &PostprocessConfig) -> LabelVolume {
    let cleaned = remove_small_tumors(labels, cfg.min_voxels, cfg.connectivity);
    convert_small_enhancing(&cleaned, cfg.et_threshold)
}
