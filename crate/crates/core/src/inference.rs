//! Whole-volume prediction: overlapping sliding windows fused by the mean of
//! their softmax outputs, left-right flip averaging, and label extraction.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::preprocess::{extract_patch, flip_stack_lr, flip_width_in_place, CHANNELS};
use crate::scalar::Scalar;
use crate::volume::{Dims, LabelVolume, ModalityStack, Spacing, Volume, CHANNEL_LABELS};

pub const CLASSES: usize = 4;

/// Anything that maps a `CHANNELS x p^3` patch to `CLASSES x p^3` probabilities.
pub trait Predictor: Sync {
    fn patch_size(&self) -> usize;
    fn predict_patch(&self, input: &[f32]) -> Result<Vec<f32>>;
}

impl<S: Scalar> Predictor for Model<S> {
    fn patch_size(&self) -> usize {
        self.config().patch_size
    }

    fn predict_patch(&self, input: &[f32]) -> Result<Vec<f32>> {
        let p = self.patch_size();
        let x: Vec<S> = input.iter().map(|&v| S::from_f64_lossy(v as f64)).collect();
        Ok(self.predict(&x, p)?.into_iter().map(|v| v.to_f64_lossy() as f32).collect())
    }
}

/// Per-voxel class probabilities, stored class-major (`CLASSES x voxels`).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVolume {
    dims: Dims,
    spacing: Spacing,
    data: Vec<f32>,
}

impl ProbVolume {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<f32>) -> Result<Self> {
        if data.len() != CLASSES * dims.len() {
            return Err(Error::Shape(format!(
                "probability buffer has {} values, expected {}",
                data.len(),
                CLASSES * dims.len()
            )));
        }
        let n = dims.len();
        for i in 0..n {
            let s: f64 = (0..CLASSES).map(|c| data[c * n + i] as f64).sum();
            if !((s - 1.0).abs() <= 1e-4) {
                return Err(Error::InvalidVolume(format!("probabilities at voxel {i} sum to {s}")));
            }
        }
        Ok(ProbVolume { dims, spacing, data })
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

    pub fn probs(&self, index: usize) -> [f32; CLASSES] {
        let n = self.dims.len();
        std::array::from_fn(|c| self.data[c * n + index])
    }

    /// One class channel as a scalar volume.
    pub fn channel(&self, class: usize) -> Volume {
        let n = self.dims.len();
        Volume::new(self.dims, self.spacing, self.data[class * n..(class + 1) * n].to_vec())
            .expect("probabilities are finite")
    }

    fn flipped(&self) -> ProbVolume {
        let mut data = self.data.clone();
        flip_width_in_place(&mut data, self.dims.width());
        ProbVolume { data, ..*self }
    }
}

/// Window offsets along one axis of length `d`: `0, s, 2s, ...` with
/// `ceil((d - p) / s) + 1` windows, so the last one reaches past `d`
/// into the zero padding when needed.
pub fn axis_offsets(d: usize, p: usize, stride: usize) -> Vec<usize> {
    let n = if d <= p { 1 } else { (d - p).div_ceil(stride) + 1 };
    (0..n).map(|k| k * stride).collect()
}

fn check_window(p: usize, stride: usize) -> Result<()> {
    if stride == 0 || stride > p {
        return Err(Error::Config(format!("stride {stride} must be in 1..={p}")));
    }
    Ok(())
}

/// All window origins in z-major, then y, then x order.
pub fn window_origins(dims: Dims, p: usize, stride: usize) -> Result<Vec<[usize; 3]>> {
    check_window(p, stride)?;
    let [oz, oy, ox] = dims.0.map(|d| axis_offsets(d, p, stride));
    let mut out = Vec::with_capacity(oz.len() * oy.len() * ox.len());
    for &z in &oz {
        for &y in &oy {
            for &x in &ox {
                out.push([z, y, x]);
            }
        }
    }
    Ok(out)
}

/// Number of windows covering each voxel of `dims`.
pub fn coverage(dims: Dims, p: usize, stride: usize) -> Result<Vec<u32>> {
    let mut count = vec![0u32; dims.len()];
    for o in window_origins(dims, p, stride)? {
        for_each_inside(dims, o, p, |src, _| count[src] += 1);
    }
    Ok(count)
}

/// Visit the window voxels that lie inside the source, as (source index, window index).
fn for_each_inside(dims: Dims, origin: [usize; 3], p: usize, mut f: impl FnMut(usize, usize)) {
    let [d, h, w] = dims.0;
    for z in 0..p.min(d.saturating_sub(origin[0])) {
        for y in 0..p.min(h.saturating_sub(origin[1])) {
            let x_end = p.min(w.saturating_sub(origin[2]));
            let s = dims.index(origin[0] + z, origin[1] + y, origin[2]);
            let o = (z * p + y) * p;
            for x in 0..x_end {
                f(s + x, o + x);
            }
        }
    }
}

/// Sliding-window prediction over a normalized stack. Windows are evaluated
/// in parallel in bounded batches and fused in a fixed order in double
/// precision, so the result does not depend on the thread count.
pub fn sliding_window_predict<P: Predictor + ?Sized>(
    model: &P,
    stack: &ModalityStack,
    stride: usize,
) -> Result<ProbVolume> {
    let p = model.patch_size();
    let dims = stack.dims();
    let n = dims.len();
    let pn = p * p * p;
    let origins = window_origins(dims, p, stride)?;
    let mut sum = vec![0f64; CLASSES * n];
    let mut count = vec![0u32; n];
    let batch = 2 * rayon::current_num_threads().max(1);
    for chunk in origins.chunks(batch) {
        let outputs: Vec<Vec<f32>> = chunk
            .par_iter()
            .map(|&o| {
                let patch = extract_patch(stack, None, o, p);
                debug_assert_eq!(patch.data.len(), CHANNELS * pn);
                let out = model.predict_patch(&patch.data)?;
                if out.len() != CLASSES * pn {
                    return Err(Error::Shape(format!(
                        "predictor returned {} values, expected {}",
                        out.len(),
                        CLASSES * pn
                    )));
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        for (&o, out) in chunk.iter().zip(&outputs) {
            for_each_inside(dims, o, p, |src, win| {
                count[src] += 1;
                for c in 0..CLASSES {
                    sum[c * n + src] += out[c * pn + win] as f64;
                }
            });
        }
    }
    let data = (0..CLASSES * n).map(|k| (sum[k] / count[k % n] as f64) as f32).collect();
    ProbVolume::new(dims, stack.spacing(), data)
}

/// Average of the prediction on the stack and the un-flipped prediction on
/// its left-right mirror.
pub fn flip_averaged_predict<P: Predictor + ?Sized>(
    model: &P,
    stack: &ModalityStack,
    stride: usize,
) -> Result<ProbVolume> {
    let direct = sliding_window_predict(model, stack, stride)?;
    let mirrored = sliding_window_predict(model, &flip_stack_lr(stack), stride)?.flipped();
    let data = direct.data.iter().zip(&mirrored.data).map(|(&a, &b)| 0.5 * (a + b)).collect();
    Ok(ProbVolume { data, ..direct })
}

/// Most probable class per voxel (lower class on ties), mapped to labels 0, 1, 2, 4.
pub fn argmax_labels(pv: &ProbVolume) -> LabelVolume {
    let n = pv.dims.len();
    let labels = (0..n)
        .map(|i| {
            let mut best = 0;
            for c in 1..CLASSES {
                if pv.data[c * n + i] > pv.data[best * n + i] {
                    best = c;
                }
            }
            CHANNEL_LABELS[best]
        })
        .collect();
    LabelVolume::new(pv.dims, pv.spacing, labels).expect("channel labels are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Ignores its input.
    struct Constant(usize, [f32; CLASSES]);

    impl Predictor for Constant {
        fn patch_size(&self) -> usize {
            self.0
        }
        fn predict_patch(&self, _: &[f32]) -> Result<Vec<f32>> {
            let pn = self.0.pow(3);
            Ok(self.1.iter().flat_map(|&v| std::iter::repeat_n(v, pn)).collect())
        }
    }

    /// Per-voxel softmax of the four input channels: the stitched output is
    /// then a known function of each voxel's own input.
    struct VoxelSoftmax(usize);

    impl Predictor for VoxelSoftmax {
        fn patch_size(&self) -> usize {
            self.0
        }
        fn predict_patch(&self, input: &[f32]) -> Result<Vec<f32>> {
            let pn = self.0.pow(3);
            let mut out = vec![0f32; CLASSES * pn];
            for i in 0..pn {
                let e: Vec<f32> = (0..CLASSES).map(|c| input[c * pn + i].exp()).collect();
                let s: f32 = e.iter().sum();
                for c in 0..CLASSES {
                    out[c * pn + i] = e[c] / s;
                }
            }
            Ok(out)
        }
    }

    fn random_stack(dims: Dims, seed: u64) -> ModalityStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vol = || {
            Volume::new(dims, Spacing::default(), (0..dims.len()).map(|_| rng.random_range(-2.0..2.0)).collect())
                .unwrap()
        };
        ModalityStack::new("r", vol(), vol(), vol(), vol()).unwrap()
    }

    #[test]
    fn constant_model_gives_constant_output() {
        let stub = Constant(8, [0.1, 0.2, 0.3, 0.4]);
        let stack = random_stack(Dims::new(13, 9, 20), 0);
        let pv = sliding_window_predict(&stub, &stack, 4).unwrap();
        for i in 0..stack.dims().len() {
            assert_eq!(pv.probs(i), stub.1);
        }
    }

    #[test]
    fn coverage_matches_brute_force() {
        for (dims, p, s) in [
            (Dims::new(24, 24, 24), 16, 8),
            (Dims::new(13, 9, 20), 8, 4),
            (Dims::new(5, 17, 33), 8, 3),
            (Dims::new(7, 7, 7), 16, 8),
        ] {
            let got = coverage(dims, p, s).unwrap();
            let origins = window_origins(dims, p, s).unwrap();
            for i in 0..dims.len() {
                let [z, y, x] = dims.coords(i);
                let want =
                    origins.iter().filter(|o| (0..3).all(|a| o[a] <= [z, y, x][a] && [z, y, x][a] < o[a] + p)).count()
                        as u32;
                assert_eq!(got[i], want);
                assert!(want >= 1);
            }
        }
    }

    #[test]
    fn half_stride_on_one_and_a_half_windows() {
        // A 24-voxel axis with p = 16, s = 8: windows at 0 and 8.
        assert_eq!(axis_offsets(24, 16, 8), vec![0, 8]);
        let cov = coverage(Dims::new(1, 1, 24), 16, 8).unwrap();
        assert!(cov.iter().all(|&c| c == 1 || c == 2));
        assert_eq!(cov[0], 1);
        assert_eq!(cov[12], 2);
        assert_eq!(cov[23], 1);
    }

    #[test]
    fn axis_offsets_reach_the_end() {
        for d in 1..60 {
            for p in [4, 8, 16] {
                for s in 1..=p {
                    let off = axis_offsets(d, p, s);
                    assert!(off.last().unwrap() + p >= d);
                    if off.len() > 1 {
                        assert!(off[off.len() - 2] + p < d);
                    }
                }
            }
        }
    }

    #[test]
    fn stitched_output_lands_on_the_right_voxels() {
        let stack = random_stack(Dims::new(11, 14, 19), 1);
        let pv = sliding_window_predict(&VoxelSoftmax(8), &stack, 4).unwrap();
        let n = stack.dims().len();
        let ch = stack.channels();
        for i in 0..n {
            let e: Vec<f32> = ch.iter().map(|v| v.data()[i].exp()).collect();
            let s: f32 = e.iter().sum();
            for c in 0..CLASSES {
                assert!((pv.probs(i)[c] - e[c] / s).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn small_volume_uses_one_padded_window() {
        let dims = Dims::new(5, 6, 7);
        assert_eq!(window_origins(dims, 16, 8).unwrap(), vec![[0, 0, 0]]);
        let stack = random_stack(dims, 2);
        let pv = sliding_window_predict(&VoxelSoftmax(16), &stack, 8).unwrap();
        assert_eq!(pv.dims(), dims);
        assert_eq!(pv.data().len(), CLASSES * dims.len());
    }

    #[test]
    fn bad_stride_is_rejected() {
        let stack = random_stack(Dims::new(8, 8, 8), 0);
        assert!(matches!(sliding_window_predict(&VoxelSoftmax(8), &stack, 0), Err(Error::Config(_))));
        assert!(matches!(sliding_window_predict(&VoxelSoftmax(8), &stack, 9), Err(Error::Config(_))));
    }

    fn tiny_model() -> Model<f32> {
        Model::new(ModelConfig {
            widths: vec![2, 3, 4],
            bottleneck_width: 5,
            patch_size: 16,
            seed: 3,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn flip_average_has_exact_mirror_symmetry() {
        let model = tiny_model();
        let stack = random_stack(Dims::new(10, 20, 23), 4);
        let a = flip_averaged_predict(&model, &stack, 8).unwrap();
        let b = flip_averaged_predict(&model, &flip_stack_lr(&stack), 8).unwrap().flipped();
        assert_eq!(a, b);
        for i in 0..stack.dims().len() {
            let s: f32 = a.probs(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn flip_average_of_input_blind_model_is_plain_prediction() {
        let stub = Constant(8, [0.5, 0.25, 0.125, 0.125]);
        let stack = random_stack(Dims::new(9, 9, 9), 5);
        assert_eq!(flip_averaged_predict(&stub, &stack, 4).unwrap(), sliding_window_predict(&stub, &stack, 4).unwrap());
    }

    #[test]
    fn model_prediction_is_deterministic_and_normalized() {
        let model = tiny_model();
        let stack = random_stack(Dims::new(12, 20, 24), 6);
        let a = sliding_window_predict(&model, &stack, 8).unwrap();
        assert_eq!(a, sliding_window_predict(&model, &stack, 8).unwrap());
        for i in 0..stack.dims().len() {
            let s: f32 = a.probs(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn argmax_examples() {
        let dims = Dims::new(1, 1, 2);
        let pv = ProbVolume::new(dims, Spacing::default(), vec![0.0, 0.25, 0.0, 0.25, 0.0, 0.25, 1.0, 0.25]).unwrap();
        assert_eq!(argmax_labels(&pv).data(), &[4, 0]);
    }

    proptest::proptest! {
        #[test]
        fn argmax_emits_valid_labels(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dims = Dims::new(2, 3, 4);
            let n = dims.len();
            let mut data = vec![0f32; CLASSES * n];
            for i in 0..n {
                let raw: Vec<f32> = (0..CLASSES).map(|_| rng.random_range(0.0..1.0)).collect();
                let s: f32 = raw.iter().sum();
                for c in 0..CLASSES {
                    data[c * n + i] = raw[c] / s;
                }
            }
            let pv = ProbVolume::new(dims, Spacing::default(), data).unwrap();
            let labels = argmax_labels(&pv);
            for (i, &l) in labels.data().iter().enumerate() {
                proptest::prop_assert!(matches!(l, 0 | 1 | 2 | 4));
                let probs = pv.probs(i);
                let c = CHANNEL_LABELS.iter().position(|&x| x == l).unwrap();
                proptest::prop_assert!(probs.iter().all(|&p| p <= probs[c]));
            }
        }
    }
}
