//! Composite operations assembled from primitives. Everything here
//! differentiates through the primitive backward rules.

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

impl<T: Scalar> Tensor<T> {
    /// Mean over H and W of [N,C,H,W], kept as [N,C,1,1].
    pub fn spatial_mean(&self) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::shape("spatial_mean: need [N,C,H,W]", &[("input", s)]));
        }
        let m = T::from_usize(s[2] * s[3]);
        Ok(self
            .sum_axis(3)?
            .sum_axis(2)?
            .affine(T::one() / m, T::zero()))
    }

    /// Instance normalization over each (sample, channel) plane with affine
    /// parameters gamma, beta of shape [C]. Variance is the biased (1/m)
    /// population estimate.
    pub fn instance_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 4 || gamma.shape() != [s[1]] || beta.shape() != [s[1]] {
            return Err(Error::shape(
                "instance_norm: need [N,C,H,W] with [C] affine params",
                &[("input", s), ("gamma", gamma.shape()), ("beta", beta.shape())],
            ));
        }
        let c = s[1];
        let mu = self.spatial_mean()?;
        let centered = self.sub(&mu);
        let var = centered.square().spatial_mean()?;
        let std = var.affine(T::one(), eps).sqrt();
        let normed = centered.div(&std);
        let g = gamma.reshape(&[1, c, 1, 1])?;
        let b = beta.reshape(&[1, c, 1, 1])?;
        Ok(normed.mul(&g).add(&b))
    }

    /// Per-position max over the channel axis, detached from the graph.
    /// Used as the stabilizing shift inside softmax.
    fn channel_max_detached(&self) -> Tensor<T> {
        let s = self.shape();
        assert_eq!(s.len(), 4, "channel_max on shape {:?}", s);
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let plane = h * w;
        let x = self.data();
        let mut out = vec![T::neg_infinity(); n * plane];
        for s_i in 0..n {
            for ch in 0..c {
                let src = &x[(s_i * c + ch) * plane..(s_i * c + ch + 1) * plane];
                let dst = &mut out[s_i * plane..(s_i + 1) * plane];
                for (d, &v) in dst.iter_mut().zip(src) {
                    if v > *d {
                        *d = v;
                    }
                }
            }
        }
        Tensor::constant(out, &[n, 1, h, w])
    }

    /// Softmax over the channel axis of [N,C,H,W].
    pub fn softmax_channels(&self) -> Result<Tensor<T>> {
        if self.shape().len() != 4 {
            return Err(Error::shape("softmax_channels: need [N,C,H,W]", &[("input", self.shape())]));
        }
        let shifted = self.sub(&self.channel_max_detached());
        let e = shifted.exp();
        let z = e.sum_axis(1)?;
        Ok(e.div(&z))
    }

    /// Log-softmax over the channel axis of [N,C,H,W].
    pub fn log_softmax_channels(&self) -> Result<Tensor<T>> {
        if self.shape().len() != 4 {
            return Err(Error::shape(
                "log_softmax_channels: need [N,C,H,W]",
                &[("input", self.shape())],
            ));
        }
        let shifted = self.sub(&self.channel_max_detached());
        let lse = shifted.exp().sum_axis(1)?.ln();
        Ok(shifted.sub(&lse))
    }

    /// Mean cross-entropy between per-pixel class probabilities `target`
    /// [N,C,H,W] (rows summing to 1; one-hot for hard labels) and these
    /// logits. Averaged over N*H*W positions.
    pub fn cross_entropy_with(&self, target: &Tensor<T>) -> Result<Tensor<T>> {
        let s = self.shape();
        if target.shape() != s {
            return Err(Error::shape(
                "cross_entropy: logits and target differ",
                &[("logits", s), ("target", target.shape())],
            ));
        }
        let positions = T::from_usize(s[0] * s[2] * s[3]);
        let nll = target.mul(&self.log_softmax_channels()?).sum_all();
        Ok(nll.affine(-T::one() / positions, T::zero()))
    }

    /// Mean of (x - y)^2 over all elements.
    pub fn mse_with(&self, other: &Tensor<T>) -> Tensor<T> {
        self.sub(other).square().mean_all()
    }

    /// Mean of |x - y| over all elements.
    pub fn l1_with(&self, other: &Tensor<T>) -> Tensor<T> {
        self.sub(other).abs().mean_all()
    }
}
