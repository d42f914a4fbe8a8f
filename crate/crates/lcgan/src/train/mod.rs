//! Optimization loops, checkpoint dispatch, and the cross-domain
//! inference/evaluation path.
//!
//! All loops are single-threaded and bit-reproducible from the run seed.
//! Network parameters are updated by replacing leaf tensors, so optimizer
//! state lives outside the graph, keyed by parameter name.

mod buffer;
mod gan;
mod infer;
mod optim;
mod seg;

pub use buffer::ImageBuffer;
pub use gan::{frozen_checksum, train_lcgan, AblationFlags, GanLogRow, GanTrainOutput, GeneratorNet};
pub use infer::{evaluate_system, translate, translate_images, SystemReport};
pub use optim::{AdamConfig, AdamState, LrSchedule};
pub use seg::{train_segmentor, SegTrainReport};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::networks::checkpoint;
use crate::networks::{
    BackboneGenerator, BackboneGeneratorConfig, DiscriminatorConfig, Net, ResnetGenerator,
    ResnetGeneratorConfig, Segmentor, SegmentorConfig,
};
use crate::scalar::Scalar;

/// Where datasets live and how much of each domain is held out for scoring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub root: PathBuf,
    /// Labeled domain the segmentor trains on.
    pub source_domain: String,
    /// Unlabeled domain the translation targets.
    pub target_domain: String,
    /// Trailing samples of each domain reserved for validation/evaluation.
    pub holdout: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            root: PathBuf::from("data"),
            source_domain: "X".into(),
            target_domain: "Y".into(),
            holdout: 40,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub segmentor: SegmentorConfig,
    pub resnet_generator: ResnetGeneratorConfig,
    pub backbone_generator: BackboneGeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub adam: AdamConfig,
    /// History buffer capacity for discriminator fakes.
    pub buffer_capacity: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 2e-4,
            adam: AdamConfig::default(),
            buffer_capacity: 50,
        }
    }
}

impl OptimConfig {
    /// Reference-scale learning rate from the source training protocol.
    pub fn full_scale_learning_rate() -> f64 {
        8e-5
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Adversarial training iterations; one X and one Y image per iteration.
    pub iterations: usize,
    /// Epochs for plain segmentor training, each a shuffled pass over the set.
    pub epochs: usize,
    pub seed: u64,
    pub log_every: usize,
    /// 0 saves only the final checkpoint.
    pub checkpoint_every: usize,
    pub ablation: AblationFlags,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            iterations: 3000,
            epochs: 30,
            seed: 7,
            log_every: 50,
            checkpoint_every: 0,
            ablation: AblationFlags::default(),
        }
    }
}

/// Top-level run configuration; every section fills from defaults when a
/// JSON file omits it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub run: RunConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.optim.learning_rate <= 0.0 || !self.optim.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.optim.learning_rate
            )));
        }
        if self.run.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.run.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: TrainConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// What kind of network a checkpoint holds, stored in its manifest so a
/// checkpoint can be rebuilt without out-of-band knowledge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "net", rename_all = "snake_case")]
pub enum Architecture {
    Segmentor {
        config: SegmentorConfig,
    },
    ResnetGenerator {
        config: ResnetGeneratorConfig,
    },
    BackboneGenerator {
        config: BackboneGeneratorConfig,
        encoder: SegmentorConfig,
    },
    PatchDiscriminator {
        config: DiscriminatorConfig,
    },
}

pub type Metadata = BTreeMap<String, serde_json::Value>;

pub fn save_net<T: Scalar>(
    dir: &Path,
    net: &impl Net<T>,
    arch: &Architecture,
    metadata: Metadata,
) -> Result<()> {
    checkpoint::save(dir, net, arch, metadata)
}

fn read_architecture(dir: &Path) -> Result<Architecture> {
    let manifest = checkpoint::read_manifest(dir)?;
    serde_json::from_value(manifest.architecture).map_err(|e| Error::Checkpoint {
        path: dir.to_path_buf(),
        reason: format!("unrecognized architecture description: {e}"),
    })
}

pub fn load_segmentor<T: Scalar>(dir: &Path) -> Result<Segmentor<T>> {
    match read_architecture(dir)? {
        Architecture::Segmentor { config } => {
            let mut net = Segmentor::build(config, 0)?;
            checkpoint::load_into(dir, &mut net)?;
            Ok(net)
        }
        other => Err(Error::Checkpoint {
            path: dir.to_path_buf(),
            reason: format!("expected a segmentor checkpoint, found {other:?}"),
        }),
    }
}

pub fn load_generator<T: Scalar>(dir: &Path) -> Result<GeneratorNet<T>> {
    match read_architecture(dir)? {
        Architecture::ResnetGenerator { config } => {
            let mut net = ResnetGenerator::build(config, 0)?;
            checkpoint::load_into(dir, &mut net)?;
            Ok(GeneratorNet::Resnet(net))
        }
        Architecture::BackboneGenerator { config, encoder } => {
            let mut net = BackboneGenerator::build_for_load(config, encoder, 0)?;
            checkpoint::load_into(dir, &mut net)?;
            Ok(GeneratorNet::Backbone(net))
        }
        other => Err(Error::Checkpoint {
            path: dir.to_path_buf(),
            reason: format!("expected a generator checkpoint, found {other:?}"),
        }),
    }
}

#[cfg(test)]
mod tests;
