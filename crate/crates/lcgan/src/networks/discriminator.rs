//! Patch discriminator: a strided conv stack scoring overlapping image
//! patches, one real/fake logit per patch, no final activation.

use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::layers::{Activation, ConvBlock};
use super::{init_stream, Net, Param};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct DiscriminatorConfig {
    /// Channel widths of the hidden layers; a width-1 scoring layer follows.
    pub widths: Vec<usize>,
    /// Strides per layer, one entry longer than `widths` (the scoring layer
    /// has its own stride).
    pub strides: Vec<usize>,
    pub kernel: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            widths: vec![16, 32],
            strides: vec![2, 2, 1],
            kernel: 4,
        }
    }
}

impl DiscriminatorConfig {
    /// Full-scale patch discriminator; its receptive field is 70 pixels.
    pub fn full_scale() -> Self {
        DiscriminatorConfig {
            widths: vec![64, 128, 256, 512],
            strides: vec![2, 2, 2, 1, 1],
            kernel: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config("discriminator widths must be positive and non-empty".into()));
        }
        if self.strides.len() != self.widths.len() + 1 {
            return Err(Error::Config(format!(
                "discriminator needs {} strides (one per hidden layer plus the scoring layer), got {}",
                self.widths.len() + 1,
                self.strides.len()
            )));
        }
        if self.strides.contains(&0) {
            return Err(Error::Config("discriminator strides must be positive".into()));
        }
        if self.kernel == 0 {
            return Err(Error::Config("discriminator kernel must be positive".into()));
        }
        Ok(())
    }

    /// Pixels of input seen by one output unit, from the standard recurrence
    /// over layers: rf += (k-1) * jump; jump *= stride.
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1;
        let mut jump = 1;
        for &s in &self.strides {
            rf += (self.kernel - 1) * jump;
            jump *= s;
        }
        rf
    }
}

pub struct PatchDiscriminator<T: Scalar> {
    pub config: DiscriminatorConfig,
    layers: Vec<ConvBlock<T>>,
}

impl<T: Scalar> PatchDiscriminator<T> {
    pub fn build(config: DiscriminatorConfig, seed: u64, name: &str) -> Result<Self> {
        config.validate()?;
        let r = &mut init_stream(seed, name);
        let pad = (config.kernel - 1) / 2;
        let mut layers = Vec::with_capacity(config.widths.len() + 1);
        let mut in_c = 3;
        for (i, &w) in config.widths.iter().enumerate() {
            // The first layer sees raw pixels and skips normalization.
            layers.push(ConvBlock::build(
                &format!("layer{i}"),
                in_c,
                w,
                config.kernel,
                config.strides[i],
                pad,
                1,
                i > 0,
                Activation::LeakyRelu,
                r,
            ));
            in_c = w;
        }
        layers.push(ConvBlock::build(
            "score",
            in_c,
            1,
            config.kernel,
            config.strides[config.widths.len()],
            pad,
            1,
            false,
            Activation::None,
            r,
        ));
        Ok(PatchDiscriminator { config, layers })
    }

    /// `[-1,1]` image in, patch logit map out. Fully convolutional: any
    /// input size that survives the stride chain works.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::shape("discriminator input must be [N,3,H,W]", &[("input", s)]));
        }
        let mut h = x.clone();
        for l in &self.layers {
            h = l.forward(&h)?;
        }
        Ok(h)
    }
}

impl<T: Scalar> Net<T> for PatchDiscriminator<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        for l in &self.layers {
            l.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for l in &mut self.layers {
            l.visit_mut(f);
        }
    }
}
