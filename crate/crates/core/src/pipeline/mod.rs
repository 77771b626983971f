//! Stage orchestration over a single JSON configuration.

pub mod cases;
pub mod stages;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::{AdamConfig, ModelConfig};
use crate::phantom::PhantomConfig;
use crate::postprocess::PostprocessConfig;
use crate::preprocess::SamplingPolicy;
use crate::survival::{ClassThresholds, ForestConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub cases: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub steps: usize,
    /// Chance of mirroring a patch left-right before each step.
    pub flip_probability: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig { steps: 200, flip_probability: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    /// Window edge; must equal the model patch size. `None` uses it.
    pub window: Option<usize>,
    /// `None` means half the window.
    pub stride: Option<usize>,
    pub flip_average: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig { window: None, stride: None, flip_average: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurvivalConfig {
    pub thresholds: ClassThresholds,
    pub folds: usize,
    /// Score only gross-total-resection cases.
    pub gtr_only: bool,
}

impl Default for SurvivalConfig {
    fn default() -> Self {
        SurvivalConfig { thresholds: ClassThresholds::default(), folds: 5, gtr_only: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub cases: usize,
    /// Ground-truth phantoms used for survival cross-validation and training.
    pub survival_cohort: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig { cases: 3, survival_cohort: 30 }
    }
}

/// Every tunable of the pipeline. `seed` drives all randomized stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub sampling: SamplingPolicy,
    pub training: TrainingConfig,
    pub inference: InferenceConfig,
    pub postprocess: PostprocessConfig,
    pub forest: ForestConfig,
    pub survival: SurvivalConfig,
    pub phantom: PhantomConfig,
    pub demo: DemoConfig,
}

impl PipelineConfig {
    /// Defaults for the synthetic end-to-end run: a short schedule at a
    /// learning rate that makes progress within it.
    pub fn demo_defaults() -> Self {
        PipelineConfig {
            adam: AdamConfig { learning_rate: 1e-3, ..AdamConfig::default() },
            training: TrainingConfig { steps: 50, ..TrainingConfig::default() },
            ..PipelineConfig::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingInput(format!("config file {}", path.display()))
            } else {
                Error::io(path, e)
            }
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Propagate the master seed into every seeded component and check cross-field constraints.
    pub fn materialize(mut self) -> Result<Self> {
        self.model.seed = self.seed;
        self.sampling.seed = self.seed;
        self.forest.seed = self.seed;
        self.model.validate()?;
        self.loss.validate()?;
        self.survival.thresholds.validate()?;
        if self.sampling.patch_size != self.model.patch_size {
            return Err(Error::Config(format!(
                "sampling.patch_size {} differs from model.patch_size {}",
                self.sampling.patch_size, self.model.patch_size
            )));
        }
        if !(0.0..=1.0).contains(&self.training.flip_probability) {
            return Err(Error::Config("training.flip_probability must lie in [0, 1]".into()));
        }
        if !(self.adam.learning_rate >= 0.0 && self.adam.learning_rate.is_finite()) {
            return Err(Error::Config("adam.learning_rate must be finite and >= 0".into()));
        }
        if self.postprocess.min_voxels == 0 || self.postprocess.et_threshold == 0 {
            return Err(Error::Config("post-processing thresholds must be positive".into()));
        }
        if self.survival.folds < 2 {
            return Err(Error::Config("survival.folds must be >= 2".into()));
        }
        Ok(self)
    }

    pub fn window(&self) -> Result<usize> {
        let p = self.model.patch_size;
        match self.inference.window {
            Some(w) if w != p => Err(Error::Config(format!("window {w} must equal the model patch size {p}"))),
            _ => Ok(p),
        }
    }

    pub fn stride(&self) -> Result<usize> {
        let p = self.window()?;
        let s = self.inference.stride.unwrap_or(p / 2);
        if s == 0 || s > p {
            return Err(Error::Config(format!("stride {s} must be in 1..={p}")));
        }
        Ok(s)
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Print the effective configuration and store it next to the stage outputs.
    pub fn echo(&self, out_dir: Option<&Path>) -> Result<()> {
        let json = self.to_pretty_json();
        println!("seed: {}", self.seed);
        println!("effective config: {json}");
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("effective_config.json");
            std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
