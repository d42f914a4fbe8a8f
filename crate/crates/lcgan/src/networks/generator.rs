//! The two image-to-image generators. Both map `[-1,1]` RGB to `[-1,1]` RGB
//! at the input resolution and end in tanh.

use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::layers::{Activation, ConvBlock, UpBlock};
use super::segmentor::{Aspp, Decoder, Encoder, Segmentor, SegmentorConfig};
use super::{init_stream, require_multiple, Net, Param};

/// Residual-block generator: wide stem, two stride-2 stages, a stack of
/// residual blocks at the bottleneck, two transposed-conv stages back up.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ResnetGeneratorConfig {
    pub base_width: usize,
    pub n_residual_blocks: usize,
}

impl Default for ResnetGeneratorConfig {
    fn default() -> Self {
        ResnetGeneratorConfig {
            base_width: 8,
            n_residual_blocks: 3,
        }
    }
}

impl ResnetGeneratorConfig {
    /// Reference scale: the published design this compact one mirrors.
    pub fn full_scale() -> Self {
        ResnetGeneratorConfig {
            base_width: 64,
            n_residual_blocks: 9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 || self.n_residual_blocks == 0 {
            return Err(Error::Config(
                "generator width and residual block count must be positive".into(),
            ));
        }
        Ok(())
    }
}

struct ResidualBlock<T: Scalar> {
    a: ConvBlock<T>,
    b: ConvBlock<T>,
}

impl<T: Scalar> ResidualBlock<T> {
    fn build(prefix: &str, width: usize, r: &mut rand_chacha::ChaCha12Rng) -> Self {
        ResidualBlock {
            a: ConvBlock::build(&format!("{prefix}.a"), width, width, 3, 1, 1, 1, true, Activation::Relu, r),
            b: ConvBlock::build(&format!("{prefix}.b"), width, width, 3, 1, 1, 1, true, Activation::None, r),
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.b.forward(&self.a.forward(x)?)?;
        Ok(x.add(&y))
    }
}

pub struct ResnetGenerator<T: Scalar> {
    pub config: ResnetGeneratorConfig,
    stem: ConvBlock<T>,
    down: [ConvBlock<T>; 2],
    blocks: Vec<ResidualBlock<T>>,
    up: [UpBlock<T>; 2],
    head: ConvBlock<T>,
}

impl<T: Scalar> ResnetGenerator<T> {
    pub fn build(config: ResnetGeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let r = &mut init_stream(seed, "generator_f");
        let w = config.base_width;
        let stem = ConvBlock::build("stem", 3, w, 7, 1, 3, 1, true, Activation::Relu, r);
        let down = [
            ConvBlock::build("down0", w, 2 * w, 3, 2, 1, 1, true, Activation::Relu, r),
            ConvBlock::build("down1", 2 * w, 4 * w, 3, 2, 1, 1, true, Activation::Relu, r),
        ];
        let blocks = (0..config.n_residual_blocks)
            .map(|i| ResidualBlock::build(&format!("block{i}"), 4 * w, r))
            .collect();
        let up = [
            UpBlock::build("up0", 4 * w, 2 * w, Activation::Relu, r),
            UpBlock::build("up1", 2 * w, w, Activation::Relu, r),
        ];
        let head = ConvBlock::build("head", w, 3, 7, 1, 3, 1, false, Activation::Tanh, r);
        Ok(ResnetGenerator {
            config,
            stem,
            down,
            blocks,
            up,
            head,
        })
    }

    /// `[-1,1]` image in, `[-1,1]` image out, same shape. Spatial dims must
    /// be multiples of 4 so the two up stages restore them exactly.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::shape("generator input must be [N,3,H,W]", &[("input", s)]));
        }
        require_multiple(s[2], 4, "generator input height")?;
        require_multiple(s[3], 4, "generator input width")?;
        let mut h = self.stem.forward(x)?;
        for d in &self.down {
            h = d.forward(&h)?;
        }
        for b in &self.blocks {
            h = b.forward(&h)?;
        }
        for u in &self.up {
            h = u.forward(&h)?;
        }
        self.head.forward(&h)
    }
}

impl<T: Scalar> Net<T> for ResnetGenerator<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.stem.visit(f);
        for d in &self.down {
            d.visit(f);
        }
        for b in &self.blocks {
            b.a.visit(f);
            b.b.visit(f);
        }
        for u in &self.up {
            u.visit(f);
        }
        self.head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.stem.visit_mut(f);
        for d in &mut self.down {
            d.visit_mut(f);
        }
        for b in &mut self.blocks {
            b.a.visit_mut(f);
            b.b.visit_mut(f);
        }
        for u in &mut self.up {
            u.visit_mut(f);
        }
        self.head.visit_mut(f);
    }
}

/// Generator built around a trained segmentation encoder: the encoder is
/// copied in frozen, and only the pyramid-pooling stage and decoder learn.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct BackboneGeneratorConfig {
    pub aspp_rates: Vec<usize>,
    pub aspp_width: usize,
    pub decoder_width: usize,
    pub low_level_width: usize,
}

impl Default for BackboneGeneratorConfig {
    fn default() -> Self {
        BackboneGeneratorConfig {
            aspp_rates: vec![1, 2, 4],
            aspp_width: 16,
            decoder_width: 16,
            low_level_width: 8,
        }
    }
}

impl BackboneGeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.aspp_rates.is_empty() || self.aspp_rates.contains(&0) {
            return Err(Error::Config("aspp_rates must be positive and non-empty".into()));
        }
        if self.aspp_width == 0 || self.decoder_width == 0 || self.low_level_width == 0 {
            return Err(Error::Config("generator widths must be positive".into()));
        }
        Ok(())
    }
}

pub struct BackboneGenerator<T: Scalar> {
    pub config: BackboneGeneratorConfig,
    /// Geometry of the borrowed encoder, kept for checkpoint rebuilds.
    pub encoder_config: SegmentorConfig,
    encoder: Encoder<T>,
    aspp: Aspp<T>,
    decoder: Decoder<T>,
}

impl<T: Scalar> BackboneGenerator<T> {
    /// Copies the segmentor's encoder (frozen) and attaches a fresh
    /// trainable pyramid-pooling stage and 3-channel tanh decoder.
    pub fn build(config: BackboneGeneratorConfig, segmentor: &Segmentor<T>, seed: u64) -> Result<Self> {
        let encoder = segmentor.encoder_frozen_copy();
        Self::assemble(config, segmentor.config.clone(), encoder, seed)
    }

    /// Rebuild from configuration alone; every weight, including the frozen
    /// encoder's, is expected to be overwritten by a checkpoint load.
    pub fn build_for_load(
        config: BackboneGeneratorConfig,
        encoder_config: SegmentorConfig,
        seed: u64,
    ) -> Result<Self> {
        encoder_config.validate()?;
        let mut encoder = Encoder::build(&encoder_config, &mut init_stream(seed, "generator_g/encoder"));
        encoder.visit_mut(&mut |p| p.freeze());
        Self::assemble(config, encoder_config, encoder, seed)
    }

    fn assemble(
        config: BackboneGeneratorConfig,
        encoder_config: SegmentorConfig,
        encoder: Encoder<T>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let r = &mut init_stream(seed, "generator_g");
        let aspp = Aspp::build(
            "aspp",
            encoder_config.deep_width(),
            config.aspp_width,
            &config.aspp_rates,
            r,
        );
        let decoder = Decoder::build(
            "decoder",
            config.aspp_width,
            encoder_config.low_width(),
            config.low_level_width,
            config.decoder_width,
            3,
            Activation::Tanh,
            r,
        );
        Ok(BackboneGenerator {
            config,
            encoder_config,
            encoder,
            aspp,
            decoder,
        })
    }

    /// `[-1,1]` image in, `[-1,1]` image out, same shape. Spatial dims must
    /// be multiples of the encoder stride.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (low, deep) = self.encoder.forward(x)?;
        let pooled = self.aspp.forward(&deep)?;
        self.decoder.forward(&pooled, &low, x.shape())
    }
}

impl<T: Scalar> Net<T> for BackboneGenerator<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.encoder.visit(f);
        self.aspp.visit(f);
        self.decoder.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.encoder.visit_mut(f);
        self.aspp.visit_mut(f);
        self.decoder.visit_mut(f);
    }
}
