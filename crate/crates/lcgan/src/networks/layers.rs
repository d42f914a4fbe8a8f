//! Layer building blocks shared by all networks.

use rand_chacha::ChaCha12Rng;

use crate::diff::Tensor;
use crate::error::Result;
use crate::rng::normal_vec_as;
use crate::scalar::Scalar;

use super::Param;

/// Conv kernels start zero-mean Gaussian with this standard deviation.
pub(crate) const INIT_STD: f64 = 0.02;
const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
pub(crate) enum Activation {
    Relu,
    LeakyRelu,
    Tanh,
    None,
}

impl Activation {
    fn apply<T: Scalar>(self, x: Tensor<T>) -> Tensor<T> {
        match self {
            Activation::Relu => x.relu(),
            Activation::LeakyRelu => x.leaky_relu(T::from_f64(0.2)),
            Activation::Tanh => x.tanh(),
            Activation::None => x,
        }
    }
}

pub(crate) struct Conv2d<T: Scalar> {
    pub weight: Param<T>,
    /// Omitted when a normalization layer follows: its mean subtraction
    /// would cancel the bias exactly.
    pub bias: Option<Param<T>>,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl<T: Scalar> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        prefix: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
        biased: bool,
        r: &mut ChaCha12Rng,
    ) -> Self {
        let w = normal_vec_as::<T>(r, out_c * in_c * kernel * kernel, 0.0, INIT_STD);
        Conv2d {
            weight: Param::new(format!("{prefix}.weight"), w, &[out_c, in_c, kernel, kernel]),
            bias: biased
                .then(|| Param::new(format!("{prefix}.bias"), vec![T::zero(); out_c], &[out_c])),
            stride,
            padding,
            dilation,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.conv2d(
            &self.weight.value,
            self.bias.as_ref().map(|b| &b.value),
            self.stride,
            self.padding,
            self.dilation,
        )
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}

pub(crate) struct ConvTranspose2d<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn build(
        prefix: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        biased: bool,
        r: &mut ChaCha12Rng,
    ) -> Self {
        let w = normal_vec_as::<T>(r, in_c * out_c * kernel * kernel, 0.0, INIT_STD);
        ConvTranspose2d {
            weight: Param::new(format!("{prefix}.weight"), w, &[in_c, out_c, kernel, kernel]),
            bias: biased
                .then(|| Param::new(format!("{prefix}.bias"), vec![T::zero(); out_c], &[out_c])),
            stride,
            padding,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.conv_transpose2d(
            &self.weight.value,
            self.bias.as_ref().map(|b| &b.value),
            self.stride,
            self.padding,
        )
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}

pub(crate) struct InstanceNorm2d<T: Scalar> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
}

impl<T: Scalar> InstanceNorm2d<T> {
    pub fn build(prefix: &str, channels: usize) -> Self {
        InstanceNorm2d {
            gamma: Param::new(format!("{prefix}.gamma"), vec![T::one(); channels], &[channels]),
            beta: Param::new(format!("{prefix}.beta"), vec![T::zero(); channels], &[channels]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.instance_norm(&self.gamma.value, &self.beta.value, T::from_f64(NORM_EPS))
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.gamma);
        f(&self.beta);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
}

/// Convolution, optional instance norm, activation.
pub(crate) struct ConvBlock<T: Scalar> {
    pub conv: Conv2d<T>,
    pub norm: Option<InstanceNorm2d<T>>,
    pub act: Activation,
}

impl<T: Scalar> ConvBlock<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        prefix: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
        normed: bool,
        act: Activation,
        r: &mut ChaCha12Rng,
    ) -> Self {
        ConvBlock {
            conv: Conv2d::build(
                &format!("{prefix}.conv"),
                in_c,
                out_c,
                kernel,
                stride,
                padding,
                dilation,
                !normed,
                r,
            ),
            norm: normed.then(|| InstanceNorm2d::build(&format!("{prefix}.norm"), out_c)),
            act,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut y = self.conv.forward(x)?;
        if let Some(norm) = &self.norm {
            y = norm.forward(&y)?;
        }
        Ok(self.act.apply(y))
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.conv.visit(f);
        if let Some(n) = &self.norm {
            n.visit(f);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.conv.visit_mut(f);
        if let Some(n) = &mut self.norm {
            n.visit_mut(f);
        }
    }
}

/// Transposed convolution doubling spatial size, instance norm, activation.
pub(crate) struct UpBlock<T: Scalar> {
    pub conv: ConvTranspose2d<T>,
    pub norm: InstanceNorm2d<T>,
    pub act: Activation,
}

impl<T: Scalar> UpBlock<T> {
    pub fn build(prefix: &str, in_c: usize, out_c: usize, act: Activation, r: &mut ChaCha12Rng) -> Self {
        UpBlock {
            conv: ConvTranspose2d::build(&format!("{prefix}.conv"), in_c, out_c, 4, 2, 1, false, r),
            norm: InstanceNorm2d::build(&format!("{prefix}.norm"), out_c),
            act,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.norm.forward(&self.conv.forward(x)?)?;
        Ok(self.act.apply(y))
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.conv.visit(f);
        self.norm.visit(f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.conv.visit_mut(f);
        self.norm.visit_mut(f);
    }
}
