//! Soft dice loss, focal loss and their unweighted sum, each returning the
//! loss value together with its exact gradient with respect to the
//! predicted probabilities.

use serde::{Deserialize, Serialize};

use crate::autograd::Shape;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_dice: f64,
    pub p_clamp: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { alpha: 1.0, gamma: 2.0, epsilon_dice: 1e-5, p_clamp: 1e-7 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) {
            return Err(Error::Config(format!("focal gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.p_clamp > 0.0 && self.p_clamp < 0.5) {
            return Err(Error::Config(format!("p_clamp must lie in (0, 0.5), got {}", self.p_clamp)));
        }
        if !(self.epsilon_dice >= 0.0) {
            return Err(Error::Config("epsilon_dice must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue<S> {
    pub value: S,
    /// d(value)/d(pred), same layout as the prediction.
    pub grad: Vec<S>,
}

/// `1 - (2 sum(t p) + eps) / (sum(p^2) + sum(t^2) + eps)` for one channel.
pub fn soft_dice_binary<S: Scalar>(pred: &[S], truth: &[S], eps: S) -> Result<LossValue<S>> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!("pred has {} entries, truth {}", pred.len(), truth.len())));
    }
    let mut grad = vec![S::zero(); pred.len()];
    let value = dice_channel(pred, truth, eps, S::one(), &mut grad);
    Ok(LossValue { value, grad })
}

/// Dice loss of one channel; writes `scale * d/dp` into `grad`.
fn dice_channel<S: Scalar>(pred: &[S], truth: &[S], eps: S, scale: S, grad: &mut [S]) -> S {
    let two = S::one() + S::one();
    let (mut inter, mut union) = (S::zero(), S::zero());
    for (&p, &t) in pred.iter().zip(truth) {
        inter += t * p;
        union += p * p + t * t;
    }
    let num = two * inter + eps;
    let den = union + eps;
    if den == S::zero() {
        return S::zero();
    }
    let den2 = den * den;
    for ((g, &p), &t) in grad.iter_mut().zip(pred).zip(truth) {
        *g = -scale * (two * t * den - num * two * p) / den2;
    }
    S::one() - num / den
}

fn check_shapes(pred: &[impl Sized], truth: &[impl Sized], shape: Shape) -> Result<()> {
    if pred.len() != shape.len() || truth.len() != shape.len() {
        return Err(Error::Shape(format!(
            "pred {} / truth {} entries do not match shape {shape}",
            pred.len(),
            truth.len()
        )));
    }
    if shape.channels() < 2 {
        return Err(Error::Shape("losses need at least two classes".into()));
    }
    Ok(())
}

/// Soft dice over the foreground classes `1..C`, averaged; batch and
/// spatial axes are pooled per class.
pub fn soft_dice_loss<S: Scalar>(pred: &[S], truth: &[S], shape: Shape, cfg: &LossConfig) -> Result<LossValue<S>> {
    check_shapes(pred, truth, shape)?;
    let (nb, c, sl) = (shape.batch(), shape.channels(), shape.spatial_len());
    let eps = S::from_f64_lossy(cfg.epsilon_dice);
    let scale = S::one() / S::from_usize(c - 1).unwrap();
    let mut grad = vec![S::zero(); pred.len()];
    let mut total = S::zero();
    for ch in 1..c {
        // gather the class across the batch
        let mut p = Vec::with_capacity(nb * sl);
        let mut t = Vec::with_capacity(nb * sl);
        for n in 0..nb {
            let base = (n * c + ch) * sl;
            p.extend_from_slice(&pred[base..base + sl]);
            t.extend_from_slice(&truth[base..base + sl]);
        }
        let mut g = vec![S::zero(); nb * sl];
        total += dice_channel(&p, &t, eps, scale, &mut g);
        for n in 0..nb {
            let base = (n * c + ch) * sl;
            grad[base..base + sl].copy_from_slice(&g[n * sl..(n + 1) * sl]);
        }
    }
    Ok(LossValue { value: total * scale, grad })
}

/// Per-voxel focal term `-alpha (1 - p)^gamma ln p` and its derivative in `p`,
/// with `p` clamped to `[p_clamp, 1 - p_clamp]` (zero derivative when clamped).
pub fn focal_term<S: Scalar>(p: S, cfg: &LossConfig) -> (S, S) {
    let alpha = S::from_f64_lossy(cfg.alpha);
    let gamma = S::from_f64_lossy(cfg.gamma);
    let lo = S::from_f64_lossy(cfg.p_clamp);
    let hi = S::one() - lo;
    let clamped = p < lo || p > hi;
    let pc = p.max(lo).min(hi);
    let q = S::one() - pc;
    let ln_p = pc.ln();
    let loss = -alpha * q.powf(gamma) * ln_p;
    if clamped {
        return (loss, S::zero());
    }
    let dmod = if gamma == S::zero() { S::zero() } else { gamma * q.powf(gamma - S::one()) * ln_p };
    (loss, alpha * (dmod - q.powf(gamma) / pc))
}

/// Mean focal loss over voxels, using the probability of each voxel's true
/// class (the one-hot argmax of `truth`).
pub fn focal_loss<S: Scalar>(pred: &[S], truth: &[S], shape: Shape, cfg: &LossConfig) -> Result<LossValue<S>> {
    check_shapes(pred, truth, shape)?;
    let (nb, c, sl) = (shape.batch(), shape.channels(), shape.spatial_len());
    let m = S::from_usize(nb * sl).unwrap();
    let mut grad = vec![S::zero(); pred.len()];
    let mut total = S::zero();
    for n in 0..nb {
        for s in 0..sl {
            let idx = |ch: usize| (n * c + ch) * sl + s;
            let mut cls = 0;
            for ch in 1..c {
                if truth[idx(ch)] > truth[idx(cls)] {
                    cls = ch;
                }
            }
            let (l, d) = focal_term(pred[idx(cls)], cfg);
            total += l;
            grad[idx(cls)] = d / m;
        }
    }
    Ok(LossValue { value: total / m, grad })
}

/// Unweighted sum of soft dice and focal loss.
pub fn combined_loss<S: Scalar>(pred: &[S], truth: &[S], shape: Shape, cfg: &LossConfig) -> Result<LossValue<S>> {
    let d = soft_dice_loss(pred, truth, shape, cfg)?;
    let f = focal_loss(pred, truth, shape, cfg)?;
    Ok(LossValue { value: d.value + f.value, grad: d.grad.iter().zip(&f.grad).map(|(a, b)| *a + *b).collect() })
}

/// One-hot encode BraTS labels `{0,1,2,4}` onto channels `{0,1,2,3}`
/// as a `(1, 4, voxels)` channel-major buffer.
pub fn one_hot<S: Scalar>(labels: &[u8]) -> Result<Vec<S>> {
    let n = labels.len();
    let mut out = vec![S::zero(); 4 * n];
    for (i, &l) in labels.iter().enumerate() {
        let ch = crate::volume::label_to_channel(l).ok_or(Error::InvalidLabel { value: l, index: i })?;
        out[ch * n + i] = S::one();
    }
    Ok(out)
}
