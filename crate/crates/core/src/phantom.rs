//! Synthetic brain phantoms: an ellipsoidal brain holding an ellipsoidal
//! tumor with nested necrosis / enhancing / edema shells, and per-modality
//! intensity profiles. Used by `demo` and the tests, since real cases are
//! not redistributable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::volume::{Dims, LabelVolume, ModalityStack, Spacing, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Edema radius as a fraction of the smallest dim.
    pub tumor_radius: (f64, f64),
    pub noise_std: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig { dims: [32, 32, 32], spacing: [1.0, 1.0, 1.0], tumor_radius: (0.2, 0.3), noise_std: 0.05 }
    }
}

/// Clinical metadata attached to a phantom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomMeta {
    pub case_id: String,
    pub age: f64,
    pub survival_days: f64,
    pub resection_status: String,
}

#[derive(Debug, Clone)]
pub struct PhantomCase {
    pub stack: ModalityStack,
    pub labels: LabelVolume,
    pub meta: PhantomMeta,
}

// t1, t2, t1c, flair
const BRAIN: [f32; 4] = [0.8, 0.6, 0.8, 0.5];
const NECROSIS: [f32; 4] = [0.4, 1.2, 0.3, 0.7];
const EDEMA: [f32; 4] = [0.6, 1.1, 0.7, 1.3];
const ENHANCING: [f32; 4] = [0.7, 0.9, 1.6, 1.0];

struct TumorShape {
    center: [f64; 3],
    radii: [f64; 3],
    necrosis_frac: f64,
    enhancing_frac: f64,
}

impl TumorShape {
    fn label_at(&self, z: usize, y: usize, x: usize) -> u8 {
        let p = [z as f64, y as f64, x as f64];
        let rho = (0..3).map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2)).sum::<f64>().sqrt();
        if rho < self.necrosis_frac {
            1
        } else if rho < self.enhancing_frac {
            4
        } else if rho < 1.0 {
            2
        } else {
            0
        }
    }
}

fn random_tumor(dims: [usize; 3], cfg: &PhantomConfig, rng: &mut ChaCha8Rng) -> TumorShape {
    let min_dim = *dims.iter().min().unwrap() as f64;
    let base = rng.random_range(cfg.tumor_radius.0..=cfg.tumor_radius.1) * min_dim;
    let radii = [0, 1, 2].map(|_| base * rng.random_range(0.8..1.2));
    // keep the tumor inside the central part of the brain
    let center = [0, 1, 2].map(|a| {
        let mid = (dims[a] as f64 - 1.0) / 2.0;
        mid + rng.random_range(-0.12..0.12) * dims[a] as f64
    });
    let necrosis_frac = match rng.random_range(0.0..1.0) {
        u if u < 0.15 => 0.0,
        _ => rng.random_range(0.2..0.45),
    };
    TumorShape { center, radii, necrosis_frac, enhancing_frac: (necrosis_frac + rng.random_range(0.15..0.3)).min(0.8) }
}

/// Generate one phantom case deterministically from `seed`.
pub fn generate_case(case_id: &str, cfg: &PhantomConfig, seed: u64) -> Result<PhantomCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims(cfg.dims);
    let spacing = Spacing(cfg.spacing);
    let tumor = random_tumor(cfg.dims, cfg, &mut rng);
    let noise = Normal::new(0.0, cfg.noise_std.max(0.0)).expect("valid std");
    let semi = cfg.dims.map(|d| d as f64 * 0.47);
    let mid = cfg.dims.map(|d| (d as f64 - 1.0) / 2.0);

    let n = dims.len();
    let mut labels = vec![0u8; n];
    let mut channels: [Vec<f32>; 4] = std::array::from_fn(|_| vec![0.0; n]);
    for i in 0..n {
        let [z, y, x] = dims.coords(i);
        let p = [z as f64, y as f64, x as f64];
        let inside = (0..3).map(|a| ((p[a] - mid[a]) / semi[a]).powi(2)).sum::<f64>() <= 1.0;
        if !inside {
            continue;
        }
        let l = tumor.label_at(z, y, x);
        labels[i] = l;
        let profile = match l {
            1 => NECROSIS,
            2 => EDEMA,
            4 => ENHANCING,
            _ => BRAIN,
        };
        for (c, ch) in channels.iter_mut().enumerate() {
            let v = profile[c] + noise.sample(&mut rng) as f32;
            ch[i] = v.max(0.01);
        }
    }
    let [t1, t2, t1c, flair] = channels.map(|d| Volume::new(dims, spacing, d));
    let stack = ModalityStack::new(case_id, t1?, t2?, t1c?, flair?)?;
    let labels = LabelVolume::new(dims, spacing, labels)?;

    let age = rng.random_range(30.0f64..80.0).round();
    let necrosis_mm3 = labels.count(1) as f64 * spacing.voxel_volume();
    let days = (1200.0 - 10.0 * age - 40.0 * necrosis_mm3.cbrt() + Normal::new(0.0, 30.0).unwrap().sample(&mut rng))
        .max(20.0)
        .round();
    let resection_status = if rng.random_bool(0.8) { "GTR" } else { "STR" }.to_string();
    Ok(PhantomCase {
        stack,
        labels,
        meta: PhantomMeta { case_id: case_id.to_string(), age, survival_days: days, resection_status },
    })
}

/// A cohort of `n` phantoms with case ids `{prefix}{index:03}`.
pub fn generate_cohort(prefix: &str, n: usize, cfg: &PhantomConfig, seed: u64) -> Result<Vec<PhantomCase>> {
    (0..n)
        .map(|i| generate_case(&format!("{prefix}{i:03}"), cfg, seed.wrapping_mul(1_000_003).wrapping_add(i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantom_is_deterministic_and_nested() {
        let cfg = PhantomConfig::default();
        let a = generate_case("c", &cfg, 42).unwrap();
        let b = generate_case("c", &cfg, 42).unwrap();
        assert_eq!(a.stack, b.stack);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.meta, b.meta);
        assert!(a.labels.count(2) > 0 && a.labels.count(4) > 0);
        // tumor lies inside the brain
        let brain = a.stack.brain_mask();
        for (i, &l) in a.labels.data().iter().enumerate() {
            if l != 0 {
                assert!(brain.data()[i]);
            }
        }
    }
}
