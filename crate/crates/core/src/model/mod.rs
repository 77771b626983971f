//! Three-level dense encoder-decoder with peer skip connections.
//!
//! Every dense module is a chain of conv-norm-PReLU units, where unit `i`
//! sees the channel concatenation of the module input and all earlier unit
//! outputs, followed by a 1x1x1 projection to the level width. The decoder
//! mirrors the encoder: nearest-neighbor upsampling, a conv unit, then
//! concatenation with the peer encoder output.

mod checkpoint;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use optim::{Adam, AdamConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{DiffTensor, Graph, Shape, Var};
use crate::error::{Error, Result};
use crate::losses::{combined_loss, one_hot, LossConfig};
use crate::scalar::Scalar;

pub const NORM_EPS: f64 = 1e-5;
pub const PRELU_INIT: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub levels: usize,
    pub widths: Vec<usize>,
    pub bottleneck_width: usize,
    pub in_channels: usize,
    pub classes: usize,
    pub dense_units_per_module: usize,
    pub kernel: usize,
    pub patch_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    /// Desk-scale configuration.
    fn default() -> Self {
        ModelConfig {
            levels: 3,
            widths: vec![8, 16, 32],
            bottleneck_width: 64,
            in_channels: 4,
            classes: 4,
            dense_units_per_module: 2,
            kernel: 3,
            patch_size: 16,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// 64/128/256 feature maps, 512 at the bottleneck, 64^3 patches.
    pub fn full_scale() -> Self {
        ModelConfig { widths: vec![64, 128, 256], bottleneck_width: 512, patch_size: 64, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() != self.levels || self.levels == 0 {
            return Err(Error::Config(format!(
                "widths has {} entries but levels = {}",
                self.widths.len(),
                self.levels
            )));
        }
        if self.widths.windows(2).any(|w| w[0] >= w[1]) || self.widths.last() >= Some(&self.bottleneck_width) {
            return Err(Error::Config("widths must be strictly ascending up to the bottleneck".into()));
        }
        if self.widths[0] == 0 || self.in_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config("classes must be >= 2".into()));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config("kernel must be odd for shape-preserving padding".into()));
        }
        let div = 1usize << self.levels;
        if !self.patch_size.is_multiple_of(div) {
            return Err(Error::Config(format!("patch size {} not divisible by 2^levels = {div}", self.patch_size)));
        }
        if (self.patch_size / div).pow(3) < 2 {
            return Err(Error::Config(format!(
                "patch size {} leaves a single bottleneck voxel; batch statistics need >= 2",
                self.patch_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<S> {
    pub name: String,
    pub tensor: DiffTensor<S>,
}

/// conv (no bias) -> batch-statistics norm -> PReLU
#[derive(Debug, Clone, PartialEq)]
struct Unit {
    w: usize,
    gamma: usize,
    beta: usize,
    slope: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct DenseModule {
    units: Vec<Unit>,
    proj_w: usize,
    proj_b: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    encoders: Vec<DenseModule>,
    bottleneck: DenseModule,
    up_units: Vec<Unit>,
    decoders: Vec<DenseModule>,
    head_w: usize,
    head_b: usize,
}

/// Records which encoder output fed which decoder concatenation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ForwardTrace {
    pub skips: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<S> {
    config: ModelConfig,
    params: Vec<Param<S>>,
    layout: Layout,
}

struct Builder<'a, S> {
    params: Vec<Param<S>>,
    rng: &'a mut ChaCha8Rng,
    kernel: usize,
}

impl<S: Scalar> Builder<'_, S> {
    fn add(&mut self, name: String, tensor: DiffTensor<S>) -> usize {
        self.params.push(Param { name, tensor });
        self.params.len() - 1
    }

    fn conv_weight(&mut self, name: String, out_c: usize, in_c: usize, k: usize) -> usize {
        let shape = Shape::new(out_c, in_c, k, k, k);
        let std = (2.0 / (in_c * k * k * k) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let v = (0..shape.len()).map(|_| S::from_f64_lossy(normal.sample(&mut *self.rng))).collect();
        self.add(name, DiffTensor::new(shape, v).expect("shape matches"))
    }

    fn channel_param(&mut self, name: String, c: usize, v: f64) -> usize {
        self.add(name, DiffTensor::filled(Shape::new(1, c, 1, 1, 1), S::from_f64_lossy(v)))
    }

    fn unit(&mut self, prefix: &str, in_c: usize, out_c: usize) -> Unit {
        let k = self.kernel;
        Unit {
            w: self.conv_weight(format!("{prefix}.conv.weight"), out_c, in_c, k),
            gamma: self.channel_param(format!("{prefix}.norm.gamma"), out_c, 1.0),
            beta: self.channel_param(format!("{prefix}.norm.beta"), out_c, 0.0),
            slope: self.channel_param(format!("{prefix}.prelu.slope"), out_c, PRELU_INIT),
        }
    }

    fn dense(&mut self, prefix: &str, in_c: usize, out_c: usize, n_units: usize) -> DenseModule {
        let units = (0..n_units).map(|i| self.unit(&format!("{prefix}.unit{i}"), in_c + i * out_c, out_c)).collect();
        DenseModule {
            units,
            proj_w: self.conv_weight(format!("{prefix}.proj.weight"), out_c, in_c + n_units * out_c, 1),
            proj_b: self.channel_param(format!("{prefix}.proj.bias"), out_c, 0.0),
        }
    }
}

/// Build a freshly initialized model (He-normal weights from the config seed).
pub fn build_model<S: Scalar>(cfg: &ModelConfig) -> Result<Model<S>> {
    Model::new(cfg.clone())
}

impl<S: Scalar> Model<S> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut b = Builder { params: Vec::new(), rng: &mut rng, kernel: config.kernel };
        let u = config.dense_units_per_module;
        let w = &config.widths;
        let encoders = (0..config.levels)
            .map(|l| {
                let in_c = if l == 0 { config.in_channels } else { w[l - 1] };
                b.dense(&format!("enc{l}"), in_c, w[l], u)
            })
            .collect();
        let bottleneck = b.dense("bottleneck", w[config.levels - 1], config.bottleneck_width, u);
        let mut up_units = Vec::new();
        let mut decoders = Vec::new();
        for l in 0..config.levels {
            let below = if l + 1 == config.levels { config.bottleneck_width } else { w[l + 1] };
            up_units.push(b.unit(&format!("up{l}"), below, w[l]));
            decoders.push(b.dense(&format!("dec{l}"), 2 * w[l], w[l], u));
        }
        let head_w = b.conv_weight("head.weight".into(), config.classes, w[0], 1);
        let head_b = b.channel_param("head.bias".into(), config.classes, 0.0);
        let params = b.params;
        Ok(Model { config, params, layout: Layout { encoders, bottleneck, up_units, decoders, head_w, head_b } })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<S>] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.tensor.shape().len()).sum()
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            config: self.config.clone(),
            params: self.params.iter().map(|p| Param { name: p.name.clone(), tensor: p.tensor.cast() }).collect(),
            layout: self.layout.clone(),
        }
    }

    /// Register parameters on `g`: as gradient leaves when training, constants otherwise.
    pub fn register(&self, g: &mut Graph<S>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| if trainable { g.leaf(p.tensor.clone()) } else { g.constant(p.tensor.clone()) })
            .collect()
    }

    fn unit(&self, g: &mut Graph<S>, u: &Unit, x: Var, pv: &[Var]) -> Result<Var> {
        let pad = (self.config.kernel - 1) / 2;
        let y = g.conv3d(x, pv[u.w], None, pad)?;
        let y = g.batchstat_norm(y, pv[u.gamma], pv[u.beta], S::from_f64_lossy(NORM_EPS))?;
        g.prelu(y, pv[u.slope])
    }

    fn dense(&self, g: &mut Graph<S>, m: &DenseModule, x: Var, pv: &[Var]) -> Result<Var> {
        let mut feats = vec![x];
        for u in &m.units {
            let input = if feats.len() == 1 { x } else { g.concat_channels(&feats)? };
            let y = self.unit(g, u, input, pv)?;
            feats.push(y);
        }
        let all = g.concat_channels(&feats)?;
        g.conv3d(all, pv[m.proj_w], Some(pv[m.proj_b]), 0)
    }

    /// Softmax class probabilities for `input` of shape `(n, in_channels, p, p, p)`.
    pub fn forward(&self, g: &mut Graph<S>, input: Var, pv: &[Var]) -> Result<(Var, ForwardTrace)> {
        let s = g.shape(input);
        if s.channels() != self.config.in_channels {
            return Err(Error::Shape(format!(
                "model expects {} input channels, got {}",
                self.config.in_channels,
                s.channels()
            )));
        }
        let div = 1usize << self.config.levels;
        if s.spatial().iter().any(|d| d % div != 0) {
            return Err(Error::Shape(format!("input {s} not divisible by {div}")));
        }
        let mut trace = ForwardTrace::default();
        let mut skips = Vec::with_capacity(self.config.levels);
        let mut h = input;
        for enc in &self.layout.encoders {
            h = self.dense(g, enc, h, pv)?;
            skips.push(h);
            h = g.maxpool3d(h, 2)?;
        }
        h = self.dense(g, &self.layout.bottleneck, h, pv)?;
        for l in (0..self.config.levels).rev() {
            h = g.upsample3d(h, 2)?;
            h = self.unit(g, &self.layout.up_units[l], h, pv)?;
            h = g.concat_channels(&[h, skips[l]])?;
            trace.skips.push((l, l));
            h = self.dense(g, &self.layout.decoders[l], h, pv)?;
        }
        let logits = g.conv3d(h, pv[self.layout.head_w], Some(pv[self.layout.head_b]), 0)?;
        Ok((g.softmax_channels(logits)?, trace))
    }

    /// Inference on one channel-major patch buffer; returns class probabilities.
    pub fn predict(&self, input: &[S], p: usize) -> Result<Vec<S>> {
        let shape = Shape::new(1, self.config.in_channels, p, p, p);
        let mut g = Graph::new();
        let pv = self.register(&mut g, false);
        let x = g.constant(DiffTensor::new(shape, input.to_vec())?);
        let (y, _) = self.forward(&mut g, x, &pv)?;
        Ok(g.take_tensor(y).into_value())
    }

    /// Forward, loss and backward on one input; returns loss value and one
    /// gradient buffer per parameter.
    pub fn loss_and_grads(
        &self,
        input: &[S],
        labels: &[u8],
        p: usize,
        loss: &LossConfig,
    ) -> Result<(S, Vec<Vec<S>>, Vec<S>)> {
        let shape = Shape::new(1, self.config.in_channels, p, p, p);
        if labels.len() != p * p * p {
            return Err(Error::Shape(format!("label cube has {} voxels, expected {}", labels.len(), p * p * p)));
        }
        if self.config.classes != 4 {
            return Err(Error::Config("training on BraTS labels requires 4 classes".into()));
        }
        let mut g = Graph::new();
        let pv = self.register(&mut g, true);
        let x = g.constant(DiffTensor::new(shape, input.to_vec())?);
        let (y, _) = self.forward(&mut g, x, &pv)?;
        let truth = one_hot::<S>(labels)?;
        let l = combined_loss(g.value(y), &truth, g.shape(y), loss)?;
        let probs = g.value(y).to_vec();
        g.backward(y, &l.grad)?;
        let grads = pv
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| g.grad(v).map(|s| s.to_vec()).unwrap_or_else(|| vec![S::zero(); p.tensor.shape().len()]))
            .collect();
        Ok((l.value, grads, probs))
    }

    /// Loss value only (no backward), for finite-difference probes.
    pub fn loss_value(&self, input: &[S], labels: &[u8], p: usize, loss: &LossConfig) -> Result<S> {
        let probs = self.predict(input, p)?;
        let truth = one_hot::<S>(labels)?;
        let shape = Shape::new(1, self.config.classes, p, p, p);
        Ok(combined_loss(&probs, &truth, shape, loss)?.value)
    }

    /// One optimization step on a single patch (batch size 1).
    pub fn train_step(&mut self, input: &[S], labels: &[u8], opt: &mut Adam<S>, loss: &LossConfig) -> Result<f64> {
        let p = self.config.patch_size;
        let (value, grads, _) = self.loss_and_grads(input, labels, p, loss)?;
        let v = value.to_f64_lossy();
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: opt.steps_taken() + 1,
                detail: format!("combined loss evaluated to {v}"),
            });
        }
        if let Some(bad) = grads.iter().zip(&self.params).find(|(g, _)| g.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFiniteLoss {
                step: opt.steps_taken() + 1,
                detail: format!("non-finite gradient in {}", bad.1.name),
            });
        }
        opt.step(&mut self.params, &grads);
        Ok(v)
    }
}

#[cfg(test)]
mod tests;
