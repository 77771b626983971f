//! Finite-difference gradient suite over every differentiable stage:
//! each kernel, both losses and the assembled network.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autograd::check::{check_graph_fn, check_scalar_fn, rel_err, CheckConfig, CheckOutcome};
use crate::autograd::{DiffTensor, Shape};
use crate::error::Result;
use crate::losses::{combined_loss, focal_loss, soft_dice_loss, LossConfig};
use crate::model::{Model, ModelConfig};

pub const DOUBLE_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct OpReport {
    pub op: &'static str,
    pub seeds: usize,
    pub outcome: CheckOutcome,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.outcome.max_rel_err < DOUBLE_TOLERANCE
    }
}

fn uniform(shape: Shape, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> DiffTensor<f64> {
    DiffTensor::new(shape, (0..shape.len()).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn distinct(shape: Shape, rng: &mut ChaCha8Rng) -> DiffTensor<f64> {
    let n = shape.len();
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * 0.01).collect();
    for i in (1..n).rev() {
        v.swap(i, rng.random_range(0..=i));
    }
    DiffTensor::new(shape, v).unwrap()
}

fn signed_away_from_zero(shape: Shape, rng: &mut ChaCha8Rng) -> DiffTensor<f64> {
    let v = (0..shape.len())
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    DiffTensor::new(shape, v).unwrap()
}

fn probabilities(shape: Shape, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let (c, sl) = (shape.channels(), shape.spatial_len());
    let mut pred = vec![0.0; shape.len()];
    let mut truth = vec![0.0; shape.len()];
    for n in 0..shape.batch() {
        for s in 0..sl {
            let w: Vec<f64> = (0..c).map(|_| rng.random_range(0.05..1.0)).collect();
            let z: f64 = w.iter().sum();
            for ch in 0..c {
                pred[(n * c + ch) * sl + s] = w[ch] / z;
            }
            truth[(n * c + rng.random_range(0..c)) * sl + s] = 1.0;
        }
    }
    (pred, truth)
}

/// Steps for the network check. Perturbing an early-layer weight shifts
/// every downstream activation, so a single step regularly straddles a
/// PReLU or max-pool kink somewhere; each coordinate is differenced at a
/// pair of steps and accepted only when the two estimates agree.
const MODEL_STEPS: [f64; 3] = [1e-5, 1e-6, 2e-7];
const MODEL_AGREEMENT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckOutcome {
    pub outcome: CheckOutcome,
    /// Coordinates where every step pair disagreed (a kink inside each bracket).
    pub kink_skipped: usize,
}

/// Model-level check: the combined loss of a small f64 network, perturbing
/// a random sample of entries of every parameter tensor.
pub fn check_model(seed: u64, entries_per_tensor: usize, floor: f64) -> Result<ModelCheckOutcome> {
    let mcfg = ModelConfig { widths: vec![2, 3, 4], bottleneck_width: 5, seed, ..ModelConfig::default() };
    let p = mcfg.patch_size;
    let mut model = Model::<f64>::new(mcfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let input: Vec<f64> = (0..4 * p * p * p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels: Vec<u8> = (0..p * p * p).map(|_| [0u8, 1, 2, 4][rng.random_range(0..4)]).collect();
    let loss = LossConfig::default();
    let (_, grads, _) = model.loss_and_grads(&input, &labels, p, &loss)?;
    let mut result = ModelCheckOutcome { outcome: CheckOutcome { max_rel_err: 0.0, checked: 0 }, kink_skipped: 0 };
    for (t, grad) in grads.iter().enumerate() {
        let len = grad.len();
        let picks = if len <= entries_per_tensor {
            (0..len).collect::<Vec<_>>()
        } else {
            sample(&mut rng, len, entries_per_tensor).into_vec()
        };
        for e in picks {
            let orig = model.params()[t].tensor.value()[e];
            let mut central = |h: f64| -> Result<f64> {
                model.params_mut()[t].tensor.value_mut()[e] = orig + h;
                let lp = model.loss_value(&input, &labels, p, &loss)?;
                model.params_mut()[t].tensor.value_mut()[e] = orig - h;
                let lm = model.loss_value(&input, &labels, p, &loss)?;
                model.params_mut()[t].tensor.value_mut()[e] = orig;
                Ok((lp - lm) / (2.0 * h))
            };
            let mut accepted = None;
            for h in MODEL_STEPS {
                let coarse = central(h)?;
                let fine = central(h / 2.0)?;
                if rel_err(coarse, fine, floor) < MODEL_AGREEMENT {
                    accepted = Some(fine);
                    break;
                }
            }
            match accepted {
                Some(numeric) => {
                    let re = rel_err(grad[e], numeric, floor);
                    result.outcome.max_rel_err = result.outcome.max_rel_err.max(re);
                    result.outcome.checked += 1;
                }
                None => result.kink_skipped += 1,
            }
        }
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub ops: Vec<OpReport>,
    pub model_kink_skipped: usize,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.ops.iter().all(OpReport::passed)
    }
}

/// Run every check over `seeds` random seeds.
pub fn run_suite(seeds: usize) -> Result<SuiteReport> {
    let cfg = CheckConfig::default();
    let mut reports: Vec<OpReport> = Vec::new();
    let mut record = |op: &'static str, o: CheckOutcome| match reports.iter_mut().find(|r| r.op == op) {
        Some(r) => {
            r.seeds += 1;
            r.outcome.merge(&o);
        }
        None => reports.push(OpReport { op, seeds: 1, outcome: o }),
    };
    let loss_cfg = LossConfig::default();
    for seed in 0..seeds as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform(Shape::new(2, 3, 4, 3, 5), -1.0, 1.0, &mut rng);
        let w = uniform(Shape::new(2, 3, 3, 3, 3), -1.0, 1.0, &mut rng);
        let b = uniform(Shape::new(1, 2, 1, 1, 1), -1.0, 1.0, &mut rng);
        record("conv3d", check_graph_fn(&[x.clone(), w, b], |g, v| g.conv3d(v[0], v[1], Some(v[2]), 1), seed, &cfg)?);
        let xp = distinct(Shape::new(1, 2, 4, 4, 2), &mut rng);
        record("maxpool3d", check_graph_fn(&[xp], |g, v| g.maxpool3d(v[0], 2), seed, &cfg)?);
        record("upsample3d", check_graph_fn(std::slice::from_ref(&x), |g, v| g.upsample3d(v[0], 2), seed, &cfg)?);
        let gamma = uniform(Shape::new(1, 3, 1, 1, 1), 0.5, 1.5, &mut rng);
        let beta = uniform(Shape::new(1, 3, 1, 1, 1), -1.0, 1.0, &mut rng);
        record(
            "batchstat_norm",
            check_graph_fn(&[x.clone(), gamma, beta], |g, v| g.batchstat_norm(v[0], v[1], v[2], 1e-5), seed, &cfg)?,
        );
        let xz = signed_away_from_zero(Shape::new(1, 3, 2, 2, 3), &mut rng);
        let a = uniform(Shape::new(1, 3, 1, 1, 1), 0.0, 0.5, &mut rng);
        record("prelu", check_graph_fn(&[xz, a], |g, v| g.prelu(v[0], v[1]), seed, &cfg)?);
        record(
            "softmax_channels",
            check_graph_fn(std::slice::from_ref(&x), |g, v| g.softmax_channels(v[0]), seed, &cfg)?,
        );
        let y = uniform(Shape::new(2, 2, 4, 3, 5), -1.0, 1.0, &mut rng);
        record(
            "concat_channels",
            check_graph_fn(&[x.clone(), y], |g, v| g.concat_channels(&[v[0], v[1]]), seed, &cfg)?,
        );

        let shape = Shape::new(1, 4, 2, 3, 2);
        let (pred, truth) = probabilities(shape, &mut rng);
        let scfg = CheckConfig { entries_per_input: 96, ..cfg };
        let dice = |p: &[f64]| {
            let l = soft_dice_loss(p, &truth, shape, &loss_cfg).unwrap();
            (l.value, l.grad)
        };
        record("soft_dice_loss", check_scalar_fn(&pred, dice, seed, &scfg));
        let focal = |p: &[f64]| {
            let l = focal_loss(p, &truth, shape, &loss_cfg).unwrap();
            (l.value, l.grad)
        };
        record("focal_loss", check_scalar_fn(&pred, focal, seed, &scfg));
        let comb = |p: &[f64]| {
            let l = combined_loss(p, &truth, shape, &loss_cfg).unwrap();
            (l.value, l.grad)
        };
        record("combined_loss", check_scalar_fn(&pred, comb, seed, &scfg));
    }
    let models: Vec<ModelCheckOutcome> =
        (0..seeds as u64).into_par_iter().map(|seed| check_model(seed, 1, cfg.floor)).collect::<Result<_>>()?;
    for m in &models {
        record("model", m.outcome.clone());
    }
    let skipped = models.iter().map(|m| m.kink_skipped).sum();
    Ok(SuiteReport { ops: reports, model_kink_skipped: skipped })
}
