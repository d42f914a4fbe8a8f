//! Images, masks, luminance pyramids, and value-range mapping.
//!
//! Pixel data lives in `[0,1]` floats everywhere outside the networks;
//! models consume and produce `[-1,1]` (`to_model_range` / `to_unit_range`).
//! Quantization to bytes happens only at the file boundary.

pub mod pnm;

use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Interleaved RGB image, components in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRgb {
    pub width: usize,
    pub height: usize,
    /// row-major, 3 floats per pixel
    pub data: Vec<f32>,
}

impl ImageRgb {
    pub fn new(width: usize, height: usize) -> Self {
        ImageRgb {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Planar [1,3,H,W] tensor in `[0,1]`.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let (w, h) = (self.width, self.height);
        let mut data = vec![T::zero(); 3 * w * h];
        for c in 0..3 {
            for i in 0..w * h {
                data[c * w * h + i] = T::from_f64(f64::from(self.data[i * 3 + c]));
            }
        }
        Tensor::constant(data, &[1, 3, h, w])
    }

    /// From a [1,3,H,W] tensor; values clamped into `[0,1]`.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        if s.len() != 4 || s[0] != 1 || s[1] != 3 {
            return Err(Error::shape("image from tensor: need [1,3,H,W]", &[("input", s)]));
        }
        let (h, w) = (s[2], s[3]);
        let mut img = ImageRgb::new(w, h);
        let d = t.data();
        for c in 0..3 {
            for i in 0..w * h {
                img.data[i * 3 + c] = d[c * w * h + i].to_f64().clamp(0.0, 1.0) as f32;
            }
        }
        Ok(img)
    }
}

/// Per-pixel class labels: 0 background, 1 instrument.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskImage {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
}

impl MaskImage {
    pub fn new(width: usize, height: usize) -> Self {
        MaskImage {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    pub fn foreground_pixels(&self) -> usize {
        self.labels.iter().filter(|&&v| v != 0).count()
    }

    /// One-hot [1,2,H,W] tensor (channel 0 background, channel 1 instrument).
    pub fn to_onehot<T: Scalar>(&self) -> Tensor<T> {
        let n = self.width * self.height;
        let mut data = vec![T::zero(); 2 * n];
        for (i, &v) in self.labels.iter().enumerate() {
            if v != 0 {
                data[n + i] = T::one();
            } else {
                data[i] = T::one();
            }
        }
        Tensor::constant(data, &[1, 2, self.height, self.width])
    }

    /// Argmax over the class axis of [1,2,H,W] logits or probabilities;
    /// ties resolve to background.
    pub fn from_class_scores<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        if s.len() != 4 || s[0] != 1 || s[1] != 2 {
            return Err(Error::shape("mask from scores: need [1,2,H,W]", &[("input", s)]));
        }
        let (h, w) = (s[2], s[3]);
        let n = h * w;
        let d = t.data();
        let labels = (0..n).map(|i| u8::from(d[n + i] > d[i])).collect();
        Ok(MaskImage {
            width: w,
            height: h,
            labels,
        })
    }
}

/// BT.601 luma weights for R, G, B.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Weighted channel sum of a [N,3,H,W] tensor in `[0,1]`; differentiable.
pub fn luminance<T: Scalar>(rgb: &Tensor<T>) -> Result<Tensor<T>> {
    let s = rgb.shape();
    if s.len() != 4 || s[1] != 3 {
        return Err(Error::shape("luminance: need [N,3,H,W]", &[("input", s)]));
    }
    let r = rgb.narrow(1, 0, 1)?.affine(T::from_f64(LUMA_WEIGHTS[0]), T::zero());
    let g = rgb.narrow(1, 1, 1)?.affine(T::from_f64(LUMA_WEIGHTS[1]), T::zero());
    let b = rgb.narrow(1, 2, 1)?.affine(T::from_f64(LUMA_WEIGHTS[2]), T::zero());
    Ok(r.add(&g).add(&b))
}

/// [0,1] -> [-1,1]
pub fn to_model_range<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.affine(T::from_f64(2.0), -T::one())
}

/// [-1,1] -> [0,1]
pub fn to_unit_range<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.affine(T::from_f64(0.5), T::from_f64(0.5))
}

/// Luminance pyramid: level 0 is the input, each next level a 2x2 mean
/// pooling of the previous (trailing odd row/column dropped).
pub struct Pyramid<T: Scalar> {
    pub levels: Vec<Tensor<T>>,
}

impl<T: Scalar> Pyramid<T> {
    /// `levels` counts entries including the base; every level must keep at
    /// least one pixel per axis.
    pub fn build(base: &Tensor<T>, levels: usize) -> Result<Self> {
        let s = base.shape();
        if s.len() != 4 {
            return Err(Error::shape("pyramid: need [N,C,H,W] base", &[("input", s)]));
        }
        let (h, w) = (s[2], s[3]);
        if levels == 0 || (h >> (levels - 1)) == 0 || (w >> (levels - 1)) == 0 {
            return Err(Error::PyramidTooSmall {
                width: w,
                height: h,
                levels,
            });
        }
        let mut out = Vec::with_capacity(levels);
        out.push(base.clone());
        for _ in 1..levels {
            let next = out.last().expect("non-empty").avg_pool2()?;
            out.push(next);
        }
        Ok(Pyramid { levels: out })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn luminance_uses_luma_weights() {
        let mut img = ImageRgb::new(2, 1);
        img.set_pixel(0, 0, [1.0, 0.0, 0.0]);
        img.set_pixel(1, 0, [0.25, 0.5, 0.75]);
        let t = img.to_tensor::<f64>();
        let y = luminance(&t).unwrap();
        assert_eq!(y.shape(), [1, 1, 1, 2]);
        assert!((y.data()[0] - 0.299).abs() < 1e-9);
        let want = 0.299 * 0.25 + 0.587 * 0.5 + 0.114 * 0.75;
        assert!((y.data()[1] - want).abs() < 1e-9);
    }

    #[test]
    fn luminance_rejects_non_rgb() {
        let t = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        assert!(luminance(&t).is_err());
    }

    #[test]
    fn model_range_round_trips() {
        let x = Tensor::constant(vec![0.0f64, 0.25, 0.5, 1.0], &[4]);
        let m = to_model_range(&x);
        assert_eq!(m.data(), [-1.0, -0.5, 0.0, 1.0]);
        let back = to_unit_range(&m);
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pyramid_halves_each_level_with_floor() {
        let base = Tensor::<f32>::zeros(&[1, 1, 64, 48]);
        let p = Pyramid::build(&base, 5).unwrap();
        let sizes: Vec<(usize, usize)> = p.levels.iter().map(|l| (l.shape()[2], l.shape()[3])).collect();
        assert_eq!(sizes, [(64, 48), (32, 24), (16, 12), (8, 6), (4, 3)]);

        let odd = Tensor::<f32>::zeros(&[1, 1, 7, 7]);
        let p = Pyramid::build(&odd, 3).unwrap();
        assert_eq!(p.levels[2].shape(), [1, 1, 1, 1]);
    }

    #[test]
    fn pyramid_rejects_too_many_levels() {
        let base = Tensor::<f32>::zeros(&[1, 1, 8, 8]);
        match Pyramid::build(&base, 5) {
            Err(Error::PyramidTooSmall { width: 8, height: 8, levels: 5 }) => {}
            other => panic!("expected PyramidTooSmall, got {:?}", other.map(|p| p.levels.len())),
        }
        assert!(Pyramid::build(&base, 4).is_ok());
    }

    #[test]
    fn pyramid_level_means_are_box_averages() {
        let mut r = rng::stream(21, "pyr");
        let base = rng::randn::<f64>(&mut r, &[1, 1, 4, 4], 1.0);
        let p = Pyramid::build(&base, 3).unwrap();
        let d = base.data();
        let want00 = (d[0] + d[1] + d[4] + d[5]) / 4.0;
        assert!((p.levels[1].data()[0] - want00).abs() < 1e-12);
        let total: f64 = d.iter().sum::<f64>() / 16.0;
        assert!((p.levels[2].data()[0] - total).abs() < 1e-12);
    }

    #[test]
    fn tensor_round_trip_preserves_layout() {
        let mut img = ImageRgb::new(3, 2);
        for y in 0..2 {
            for x in 0..3 {
                img.set_pixel(x, y, [x as f32 / 3.0, y as f32 / 2.0, 0.5]);
            }
        }
        let t = img.to_tensor::<f32>();
        assert_eq!(t.shape(), [1, 3, 2, 3]);
        // red channel plane is x/3 row-major
        assert_eq!(t.data()[1], 1.0 / 3.0);
        let back = ImageRgb::from_tensor(&t).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn from_tensor_clamps_out_of_range() {
        let t = Tensor::constant(vec![-0.5f32, 1.5, 0.5, 0.25, 0.5, 0.75], &[1, 3, 1, 2]);
        let img = ImageRgb::from_tensor(&t).unwrap();
        assert_eq!(img.pixel(0, 0), [0.0, 0.5, 0.5]);
        assert_eq!(img.pixel(1, 0), [1.0, 0.25, 0.75]);
    }

    #[test]
    fn mask_onehot_and_argmax_round_trip() {
        let mut m = MaskImage::new(2, 2);
        m.labels = vec![0, 1, 1, 0];
        let oh = m.to_onehot::<f32>();
        assert_eq!(oh.shape(), [1, 2, 2, 2]);
        assert_eq!(oh.data(), [1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        let back = MaskImage::from_class_scores(&oh).unwrap();
        assert_eq!(back, m);
        assert_eq!(m.foreground_pixels(), 2);
    }

    #[test]
    fn argmax_tie_goes_to_background() {
        let t = Tensor::constant(vec![0.5f32, 0.5], &[1, 2, 1, 1]);
        let m = MaskImage::from_class_scores(&t).unwrap();
        assert_eq!(m.labels, vec![0]);
    }
}
