//! Adversarial training of the translation cycle.
//!
//! Per iteration: one X and one Y image are drawn; both generators update
//! jointly on the full generator objective; each discriminator then updates
//! against the real image and a history-buffered fake. The segmentor and,
//! when present, the X→Y generator's encoder stay frozen throughout.

use std::path::Path;

use rand::Rng as _;

use super::buffer::ImageBuffer;
use super::optim::{AdamState, LrSchedule};
use super::{save_net, Architecture, Metadata, TrainConfig};
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::image::to_model_range;
use crate::losses::{
    cycle_loss, gan_discriminator_loss, gan_generator_loss, seg_consistency_loss, ssim_loss,
    total_objective, LossBreakdown, ObjectiveTerms,
};
use crate::networks::{BackboneGenerator, Net, PatchDiscriminator, ResnetGenerator, Segmentor};
use crate::rng;
use crate::scalar::Scalar;
use crate::synth::Sample;

/// Which parts of the objective and which generator architecture a run uses.
/// All three on is the full method; all three off is the plain cycle baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    pub ssim_on: bool,
    pub seg_on: bool,
    pub trained_backbone_on: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            ssim_on: true,
            seg_on: true,
            trained_backbone_on: true,
        }
    }
}

impl AblationFlags {
    pub const ALL_ON: AblationFlags = AblationFlags {
        ssim_on: true,
        seg_on: true,
        trained_backbone_on: true,
    };
    pub const ALL_OFF: AblationFlags = AblationFlags {
        ssim_on: false,
        seg_on: false,
        trained_backbone_on: false,
    };

    /// The eight flag triples in ascending binary order.
    pub fn all_combinations() -> Vec<AblationFlags> {
        (0..8)
            .map(|bits| AblationFlags {
                ssim_on: bits & 4 != 0,
                seg_on: bits & 2 != 0,
                trained_backbone_on: bits & 1 != 0,
            })
            .collect()
    }

    /// Stable short form for file names and CSV rows, e.g. "101".
    pub fn tag(&self) -> String {
        format!(
            "{}{}{}",
            u8::from(self.ssim_on),
            u8::from(self.seg_on),
            u8::from(self.trained_backbone_on)
        )
    }

    /// Inverse of [`tag`](Self::tag): three 0/1 digits in the order
    /// structural similarity, segmentation consistency, trained backbone.
    pub fn from_tag(tag: &str) -> Result<Self> {
        let bit = |c: char| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(Error::Config(format!(
                "ablation tag digit must be 0 or 1, got {other:?}"
            ))),
        };
        let mut chars = tag.chars();
        match (chars.next(), chars.next(), chars.next(), chars.next()) {
            (Some(a), Some(b), Some(c), None) => Ok(AblationFlags {
                ssim_on: bit(a)?,
                seg_on: bit(b)?,
                trained_backbone_on: bit(c)?,
            }),
            _ => Err(Error::Config(format!(
                "ablation tag must be exactly three 0/1 digits, got {tag:?}"
            ))),
        }
    }

    pub fn needs_segmentor(&self) -> bool {
        self.seg_on || self.trained_backbone_on
    }
}

/// Either generator architecture behind one forward/checkpoint interface.
pub enum GeneratorNet<T: Scalar> {
    Resnet(ResnetGenerator<T>),
    Backbone(BackboneGenerator<T>),
}

impl<T: Scalar> GeneratorNet<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            GeneratorNet::Resnet(net) => net.forward(x),
            GeneratorNet::Backbone(net) => net.forward(x),
        }
    }

    pub fn architecture(&self) -> Architecture {
        match self {
            GeneratorNet::Resnet(net) => Architecture::ResnetGenerator {
                config: net.config.clone(),
            },
            GeneratorNet::Backbone(net) => Architecture::BackboneGenerator {
                config: net.config.clone(),
                encoder: net.encoder_config.clone(),
            },
        }
    }
}

impl<T: Scalar> Net<T> for GeneratorNet<T> {
    fn visit(&self, f: &mut dyn FnMut(&crate::networks::Param<T>)) {
        match self {
            GeneratorNet::Resnet(net) => net.visit(f),
            GeneratorNet::Backbone(net) => net.visit(f),
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut crate::networks::Param<T>)) {
        match self {
            GeneratorNet::Resnet(net) => net.visit_mut(f),
            GeneratorNet::Backbone(net) => net.visit_mut(f),
        }
    }
}

/// One training-log record; all loss values are plain floats.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GanLogRow {
    pub step: usize,
    pub lr: f64,
    pub gan_g: f64,
    pub gan_f: f64,
    pub d_x: f64,
    pub d_y: f64,
    pub cyc: f64,
    pub ssim: f64,
    pub seg: f64,
    pub total_generator: f64,
    pub total_discriminator: f64,
}

impl GanLogRow {
    pub fn csv_header() -> String {
        format!("step,lr,{}", LossBreakdown::<f64>::CSV_FIELDS)
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.8},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.step,
            self.lr,
            self.gan_g,
            self.gan_f,
            self.d_x,
            self.d_y,
            self.cyc,
            self.ssim,
            self.seg,
            self.total_generator,
            self.total_discriminator
        )
    }

    pub fn is_finite(&self) -> bool {
        [
            self.lr,
            self.gan_g,
            self.gan_f,
            self.d_x,
            self.d_y,
            self.cyc,
            self.ssim,
            self.seg,
            self.total_generator,
            self.total_discriminator,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

pub struct GanTrainOutput<T: Scalar> {
    /// X→Y generator.
    pub g: GeneratorNet<T>,
    /// Y→X generator.
    pub f: GeneratorNet<T>,
    pub d_x: PatchDiscriminator<T>,
    pub d_y: PatchDiscriminator<T>,
    pub log: Vec<GanLogRow>,
}

/// FNV-1a over the bit patterns of all non-trainable parameters; constant
/// across training iff the frozen parts really are frozen.
pub fn frozen_checksum<T: Scalar>(net: &impl Net<T>) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    net.visit(&mut |p| {
        if p.trainable {
            return;
        }
        for &v in p.value.data() {
            for b in Scalar::to_f64(v).to_bits().to_le_bytes() {
                hash ^= u64::from(b);
                hash = hash.wrapping_mul(0x100_0000_01b3);
            }
        }
    });
    hash
}

fn clear_grads<T: Scalar>(net: &impl Net<T>) {
    net.visit(&mut |p| p.value.clear_grad());
}

fn subseed(seed: u64, tag: &str) -> u64 {
    rng::stream(seed, tag).gen()
}

/// Runs the adversarial loop and returns the trained networks plus the full
/// per-iteration log. With `checkpoint_dir` set, checkpoints are written at
/// the configured cadence and after the last iteration; on divergence the
/// error carries the failing step and previously written checkpoints remain.
pub fn train_lcgan<T: Scalar>(
    x_train: &[Sample],
    y_train: &[Sample],
    segmentor: Option<&Segmentor<T>>,
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<GanTrainOutput<T>> {
    config.validate()?;
    if x_train.is_empty() || y_train.is_empty() {
        return Err(Error::Dataset("adversarial training needs images in both domains".into()));
    }
    let flags = config.run.ablation;
    if flags.needs_segmentor() && segmentor.is_none() {
        return Err(Error::Config(
            "segmentation consistency or a trained backbone requires a segmentor checkpoint".into(),
        ));
    }

    let seed = config.run.seed;
    let mut g = if flags.trained_backbone_on {
        let seg = segmentor.expect("checked above");
        GeneratorNet::Backbone(BackboneGenerator::build(
            config.model.backbone_generator.clone(),
            seg,
            subseed(seed, "net/g"),
        )?)
    } else {
        GeneratorNet::Resnet(ResnetGenerator::build(
            config.model.resnet_generator.clone(),
            subseed(seed, "net/g"),
        )?)
    };
    let mut f = GeneratorNet::Resnet(ResnetGenerator::build(
        config.model.resnet_generator.clone(),
        subseed(seed, "net/f"),
    )?);
    let mut d_x = PatchDiscriminator::build(config.model.discriminator.clone(), seed, "d_x")?;
    let mut d_y = PatchDiscriminator::build(config.model.discriminator.clone(), seed, "d_y")?;

    let mut adam_g = AdamState::new(config.optim.adam);
    let mut adam_f = AdamState::new(config.optim.adam);
    let mut adam_dx = AdamState::new(config.optim.adam);
    let mut adam_dy = AdamState::new(config.optim.adam);
    let schedule = LrSchedule::for_run(config.optim.learning_rate, config.run.iterations);

    let mut sample_rng = rng::stream(seed, "gan/sample");
    let mut buf_x = ImageBuffer::new(config.optim.buffer_capacity, rng::stream(seed, "gan/buffer/x"));
    let mut buf_y = ImageBuffer::new(config.optim.buffer_capacity, rng::stream(seed, "gan/buffer/y"));

    let zero = || Tensor::<T>::scalar(T::zero());
    let mut log = Vec::with_capacity(config.run.iterations);

    for it in 0..config.run.iterations {
        let lr = schedule.at(it);
        let xs = &x_train[sample_rng.gen_range(0..x_train.len())];
        let ys = &y_train[sample_rng.gen_range(0..y_train.len())];
        let x = to_model_range(&xs.image.to_tensor::<T>());
        let y = to_model_range(&ys.image.to_tensor::<T>());

        // Generator pass over the full cycle.
        let fake_y = g.forward(&x)?;
        let rec_x = f.forward(&fake_y)?;
        let fake_x = f.forward(&y)?;
        let rec_y = g.forward(&fake_x)?;

        let gan_g = gan_generator_loss(&d_y.forward(&fake_y)?);
        let gan_f = gan_generator_loss(&d_x.forward(&fake_x)?);
        let cyc = cycle_loss(&x, &rec_x, &y, &rec_y)?;
        let ssim = if flags.ssim_on {
            ssim_loss(&x, &fake_y, &y, &fake_x, &config.loss)?
        } else {
            zero()
        };
        let seg = if flags.seg_on {
            let s = segmentor.expect("checked above");
            seg_consistency_loss(&xs.mask, &s.forward(&rec_x)?, &s.forward(&y)?, &s.forward(&rec_y)?)?
        } else {
            zero()
        };

        let breakdown = total_objective(
            ObjectiveTerms {
                gan_g,
                gan_f,
                d_x: zero(),
                d_y: zero(),
                cyc,
                ssim,
                seg,
            },
            &config.loss,
        )?;
        breakdown.total_generator.backward()?;
        adam_g.step(&mut g, lr)?;
        adam_f.step(&mut f, lr)?;
        // The generator pass scored fakes through both discriminators;
        // drop those gradients before the discriminators' own updates.
        clear_grads(&d_x);
        clear_grads(&d_y);

        // Discriminator pass against history-buffered fakes.
        let hist_y = buf_y.query(&fake_y);
        let hist_x = buf_x.query(&fake_x);
        let dy_loss = gan_discriminator_loss(&d_y.forward(&y)?, &d_y.forward(&hist_y)?);
        dy_loss.backward()?;
        adam_dy.step(&mut d_y, lr)?;
        let dx_loss = gan_discriminator_loss(&d_x.forward(&x)?, &d_x.forward(&hist_x)?);
        dx_loss.backward()?;
        adam_dx.step(&mut d_x, lr)?;

        let dx_value = Scalar::to_f64(dx_loss.item());
        let dy_value = Scalar::to_f64(dy_loss.item());
        let row = GanLogRow {
            step: it,
            lr,
            gan_g: Scalar::to_f64(breakdown.gan_g.item()),
            gan_f: Scalar::to_f64(breakdown.gan_f.item()),
            d_x: dx_value,
            d_y: dy_value,
            cyc: Scalar::to_f64(breakdown.cyc.item()),
            ssim: Scalar::to_f64(breakdown.ssim.item()),
            seg: Scalar::to_f64(breakdown.seg.item()),
            total_generator: Scalar::to_f64(breakdown.total_generator.item()),
            total_discriminator: dx_value + dy_value,
        };
        if !row.is_finite() {
            return Err(Error::Diverged { step: it });
        }
        log.push(row);

        if let Some(dir) = checkpoint_dir {
            let cadence = config.run.checkpoint_every;
            if cadence > 0 && (it + 1) % cadence == 0 && it + 1 != config.run.iterations {
                save_gan_checkpoint(dir, &g, &f, &d_x, &d_y, config, it + 1)?;
            }
        }
    }

    if let Some(dir) = checkpoint_dir {
        save_gan_checkpoint(dir, &g, &f, &d_x, &d_y, config, config.run.iterations)?;
    }

    Ok(GanTrainOutput { g, f, d_x, d_y, log })
}

fn save_gan_checkpoint<T: Scalar>(
    dir: &Path,
    g: &GeneratorNet<T>,
    f: &GeneratorNet<T>,
    d_x: &PatchDiscriminator<T>,
    d_y: &PatchDiscriminator<T>,
    config: &TrainConfig,
    step: usize,
) -> Result<()> {
    let meta = |direction: &str| -> Metadata {
        let mut m = Metadata::new();
        m.insert("step".into(), serde_json::json!(step));
        m.insert("seed".into(), serde_json::json!(config.run.seed));
        m.insert("ablation".into(), serde_json::json!(config.run.ablation.tag()));
        m.insert("direction".into(), serde_json::json!(direction));
        m
    };
    save_net(&dir.join("g"), g, &g.architecture(), meta("XtoY"))?;
    save_net(&dir.join("f"), f, &f.architecture(), meta("YtoX"))?;
    let d_arch = |d: &PatchDiscriminator<T>| Architecture::PatchDiscriminator {
        config: d.config.clone(),
    };
    save_net(&dir.join("d_x"), d_x, &d_arch(d_x), meta("X"))?;
    save_net(&dir.join("d_y"), d_y, &d_arch(d_y), meta("Y"))?;
    Ok(())
}
