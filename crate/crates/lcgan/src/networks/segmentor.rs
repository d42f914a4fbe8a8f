//! Two-class segmentor: strided conv encoder, dilated pyramid pooling over
//! the deepest features, and a decoder that fuses a low-level tap back in.
//! The encoder and both pooling/decoding stages are also the building
//! blocks of the backbone generator.

use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::layers::{Activation, ConvBlock};
use super::{init_stream, require_multiple, Net, Param};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SegmentorConfig {
    pub base_width: usize,
    /// Number of stride-2 stages after the stem; encoder stride is
    /// 2^downsamples.
    pub downsamples: usize,
    pub aspp_rates: Vec<usize>,
    pub aspp_width: usize,
    pub decoder_width: usize,
    pub low_level_width: usize,
}

impl Default for SegmentorConfig {
    fn default() -> Self {
        SegmentorConfig {
            base_width: 8,
            downsamples: 3,
            aspp_rates: vec![1, 2, 4],
            aspp_width: 16,
            decoder_width: 16,
            low_level_width: 8,
        }
    }
}

impl SegmentorConfig {
    /// Reference scale: stride-16 encoder, so a 208×208 input reaches a
    /// 13×13 deepest map. Documented configuration, not a test target.
    pub fn full_scale() -> Self {
        SegmentorConfig {
            base_width: 64,
            downsamples: 4,
            aspp_rates: vec![6, 12, 18],
            aspp_width: 256,
            decoder_width: 256,
            low_level_width: 48,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 {
            return Err(Error::Config("segmentor base_width must be positive".into()));
        }
        if !(2..=4).contains(&self.downsamples) {
            return Err(Error::Config(format!(
                "segmentor downsamples must be in 2..=4, got {}",
                self.downsamples
            )));
        }
        if self.aspp_rates.is_empty() || self.aspp_rates.contains(&0) {
            return Err(Error::Config("aspp_rates must be positive and non-empty".into()));
        }
        if self.aspp_width == 0 || self.decoder_width == 0 || self.low_level_width == 0 {
            return Err(Error::Config("segmentor widths must be positive".into()));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        1 << self.downsamples
    }

    /// Channels of the deepest feature map: width doubles per stage, capped
    /// at 4x the base.
    pub fn deep_width(&self) -> usize {
        self.base_width * (1 << self.downsamples.min(2))
    }

    /// Channels of the low-level tap, taken after the first stride-2 stage.
    pub fn low_width(&self) -> usize {
        self.base_width * 2
    }
}

pub(super) struct Encoder<T: Scalar> {
    base_width: usize,
    downsamples: usize,
    stem: ConvBlock<T>,
    stages: Vec<ConvBlock<T>>,
}

impl<T: Scalar> Encoder<T> {
    pub fn build(config: &SegmentorConfig, r: &mut rand_chacha::ChaCha12Rng) -> Self {
        let w = config.base_width;
        let stem = ConvBlock::build("encoder.stem", 3, w, 3, 1, 1, 1, true, Activation::Relu, r);
        let mut stages = Vec::with_capacity(config.downsamples);
        let mut in_c = w;
        for i in 0..config.downsamples {
            let out_c = w * (1 << (i + 1).min(2));
            stages.push(ConvBlock::build(
                &format!("encoder.stage{i}"),
                in_c,
                out_c,
                3,
                2,
                1,
                1,
                true,
                Activation::Relu,
                r,
            ));
            in_c = out_c;
        }
        Encoder {
            base_width: w,
            downsamples: config.downsamples,
            stem,
            stages,
        }
    }

    /// Returns (low-level tap after the first stride-2 stage, deepest map).
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::shape("encoder input must be [N,3,H,W]", &[("input", s)]));
        }
        let stride = 1 << self.downsamples;
        require_multiple(s[2], stride, "encoder input height")?;
        require_multiple(s[3], stride, "encoder input width")?;
        let mut h = self.stem.forward(x)?;
        let mut low = None;
        for (i, stage) in self.stages.iter().enumerate() {
            h = stage.forward(&h)?;
            if i == 0 {
                low = Some(h.clone());
            }
        }
        Ok((low.expect("encoder has at least two stages"), h))
    }

    /// Deep copy with every parameter frozen; weights identical.
    pub fn frozen_copy(&self) -> Encoder<T> {
        let cfg = SegmentorConfig {
            base_width: self.base_width,
            downsamples: self.downsamples,
            ..SegmentorConfig::default()
        };
        let mut copy = Encoder::build(&cfg, &mut init_stream(0, "encoder_copy"));
        let mut source = Vec::new();
        self.visit(&mut |p| source.push(p.value.data().to_vec()));
        let mut i = 0;
        copy.visit_mut(&mut |p| {
            p.assign(source[i].clone()).expect("copy preserves shapes");
            p.freeze();
            i += 1;
        });
        copy
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.stem.visit(f);
        for s in &self.stages {
            s.visit(f);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.stem.visit_mut(f);
        for s in &mut self.stages {
            s.visit_mut(f);
        }
    }
}

/// Dilated pyramid pooling: parallel 3×3 branches at several dilation rates
/// plus a global-average branch, concatenated and projected.
pub(super) struct Aspp<T: Scalar> {
    branches: Vec<ConvBlock<T>>,
    image_branch: ConvBlock<T>,
    project: ConvBlock<T>,
}

impl<T: Scalar> Aspp<T> {
    pub fn build(
        prefix: &str,
        in_c: usize,
        width: usize,
        rates: &[usize],
        r: &mut rand_chacha::ChaCha12Rng,
    ) -> Self {
        let branches = rates
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                ConvBlock::build(
                    &format!("{prefix}.rate{i}"),
                    in_c,
                    width,
                    3,
                    1,
                    d,
                    d,
                    true,
                    Activation::Relu,
                    r,
                )
            })
            .collect();
        // Statistics over a 1x1 map are degenerate, so this branch skips
        // normalization.
        let image_branch = ConvBlock::build(
            &format!("{prefix}.image"),
            in_c,
            width,
            1,
            1,
            0,
            1,
            false,
            Activation::Relu,
            r,
        );
        let project = ConvBlock::build(
            &format!("{prefix}.project"),
            (rates.len() + 1) * width,
            width,
            1,
            1,
            0,
            1,
            true,
            Activation::Relu,
            r,
        );
        Aspp {
            branches,
            image_branch,
            project,
        }
    }

    pub fn forward(&self, deep: &Tensor<T>) -> Result<Tensor<T>> {
        let s = deep.shape();
        let mut outs = Vec::with_capacity(self.branches.len() + 1);
        for b in &self.branches {
            outs.push(b.forward(deep)?);
        }
        let pooled = self.image_branch.forward(&deep.spatial_mean()?)?;
        outs.push(pooled.upsample_nearest(s[2], s[3])?);
        let refs: Vec<&Tensor<T>> = outs.iter().collect();
        self.project.forward(&Tensor::concat(&refs, 1)?)
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        for b in &self.branches {
            b.visit(f);
        }
        self.image_branch.visit(f);
        self.project.visit(f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for b in &mut self.branches {
            b.visit_mut(f);
        }
        self.image_branch.visit_mut(f);
        self.project.visit_mut(f);
    }
}

/// Upsamples pooled features to the low-level tap's resolution, fuses the
/// two, and restores full resolution.
pub(super) struct Decoder<T: Scalar> {
    low_proj: ConvBlock<T>,
    fuse1: ConvBlock<T>,
    fuse2: ConvBlock<T>,
    head: ConvBlock<T>,
}

impl<T: Scalar> Decoder<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        prefix: &str,
        pooled_c: usize,
        low_c: usize,
        low_proj_c: usize,
        width: usize,
        out_c: usize,
        final_act: Activation,
        r: &mut rand_chacha::ChaCha12Rng,
    ) -> Self {
        Decoder {
            low_proj: ConvBlock::build(
                &format!("{prefix}.low_proj"),
                low_c,
                low_proj_c,
                1,
                1,
                0,
                1,
                true,
                Activation::Relu,
                r,
            ),
            fuse1: ConvBlock::build(
                &format!("{prefix}.fuse1"),
                pooled_c + low_proj_c,
                width,
                3,
                1,
                1,
                1,
                true,
                Activation::Relu,
                r,
            ),
            fuse2: ConvBlock::build(
                &format!("{prefix}.fuse2"),
                width,
                width,
                3,
                1,
                1,
                1,
                true,
                Activation::Relu,
                r,
            ),
            head: ConvBlock::build(&format!("{prefix}.head"), width, out_c, 1, 1, 0, 1, false, final_act, r),
        }
    }

    pub fn forward(&self, pooled: &Tensor<T>, low: &Tensor<T>, input_shape: &[usize]) -> Result<Tensor<T>> {
        let to_low = low.shape()[2] / pooled.shape()[2];
        let up = if to_low > 1 {
            pooled.upsample_bilinear(to_low)?
        } else {
            pooled.clone()
        };
        let low_p = self.low_proj.forward(low)?;
        let fused = self.fuse1.forward(&Tensor::concat(&[&up, &low_p], 1)?)?;
        let fused = self.fuse2.forward(&fused)?;
        let to_full = input_shape[2] / fused.shape()[2];
        let restored = if to_full > 1 {
            fused.upsample_bilinear(to_full)?
        } else {
            fused
        };
        self.head.forward(&restored)
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.low_proj.visit(f);
        self.fuse1.visit(f);
        self.fuse2.visit(f);
        self.head.visit(f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.low_proj.visit_mut(f);
        self.fuse1.visit_mut(f);
        self.fuse2.visit_mut(f);
        self.head.visit_mut(f);
    }
}

pub struct Segmentor<T: Scalar> {
    pub config: SegmentorConfig,
    encoder: Encoder<T>,
    aspp: Aspp<T>,
    decoder: Decoder<T>,
}

impl<T: Scalar> Segmentor<T> {
    pub fn build(config: SegmentorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let r = &mut init_stream(seed, "segmentor");
        let encoder = Encoder::build(&config, r);
        let aspp = Aspp::build("aspp", config.deep_width(), config.aspp_width, &config.aspp_rates, r);
        let decoder = Decoder::build(
            "decoder",
            config.aspp_width,
            config.low_width(),
            config.low_level_width,
            config.decoder_width,
            2,
            Activation::None,
            r,
        );
        Ok(Segmentor {
            config,
            encoder,
            aspp,
            decoder,
        })
    }

    /// `[-1,1]` image in, per-class logits out at input resolution:
    /// [N,3,H,W] -> [N,2,H,W]. Channel 0 scores background, channel 1 the
    /// instrument; the predicted mask is the channel argmax.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (low, deep) = self.encoder.forward(x)?;
        let pooled = self.aspp.forward(&deep)?;
        self.decoder.forward(&pooled, &low, x.shape())
    }

    pub(super) fn encoder_frozen_copy(&self) -> Encoder<T> {
        self.encoder.frozen_copy()
    }
}

impl<T: Scalar> Net<T> for Segmentor<T> {
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
