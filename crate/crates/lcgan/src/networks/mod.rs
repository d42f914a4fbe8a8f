//! The four trainable networks: two generators, two patch discriminators,
//! and the segmentor whose encoder one generator borrows.
//!
//! Parameters are leaf tensors owned by their network. A forward pass builds
//! a fresh graph over the current leaves; an optimizer reads accumulated
//! leaf gradients and swaps in updated leaves. Frozen parameters are plain
//! constants, so backward never enters their subgraphs and "not trainable"
//! is structural rather than a bookkeeping flag.

use rand_chacha::ChaCha12Rng;

use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

mod layers;

pub mod checkpoint;
mod discriminator;
mod generator;
mod segmentor;

pub use discriminator::{DiscriminatorConfig, PatchDiscriminator};
pub use generator::{BackboneGenerator, BackboneGeneratorConfig, ResnetGenerator, ResnetGeneratorConfig};
pub use segmentor::{Segmentor, SegmentorConfig};

/// One named parameter tensor. `value` is a tracked leaf while trainable and
/// a constant leaf once frozen.
#[derive(Clone, Debug)]
pub struct Param<T: Scalar> {
    pub name: String,
    pub value: Tensor<T>,
    pub trainable: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, data: Vec<T>, shape: &[usize]) -> Self {
        Param {
            name: name.into(),
            value: Tensor::param(data, shape),
            trainable: true,
        }
    }

    /// Replace the value with fresh data, keeping shape and trainability.
    pub fn assign(&mut self, data: Vec<T>) -> Result<()> {
        if data.len() != self.value.numel() {
            return Err(Error::InvalidArgument(format!(
                "parameter {} holds {} values, got {}",
                self.name,
                self.value.numel(),
                data.len()
            )));
        }
        self.value = Tensor::leaf_with_grad(data, self.value.shape(), self.trainable);
        Ok(())
    }

    pub fn freeze(&mut self) {
        if self.trainable {
            self.trainable = false;
            self.value = Tensor::constant(self.value.data().to_vec(), self.value.shape());
        }
    }
}

/// Uniform access to a network's parameters, in a fixed construction order.
pub trait Net<T: Scalar> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>));
}

/// Names and shapes of all parameters, visit order.
pub fn param_table<T: Scalar>(net: &impl Net<T>) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    net.visit(&mut |p| out.push((p.name.clone(), p.value.shape().to_vec())));
    out
}

pub fn parameter_count<T: Scalar>(net: &impl Net<T>) -> usize {
    let mut n = 0;
    net.visit(&mut |p| n += p.value.numel());
    n
}

pub fn trainable_parameter_count<T: Scalar>(net: &impl Net<T>) -> usize {
    let mut n = 0;
    net.visit(&mut |p| {
        if p.trainable {
            n += p.value.numel();
        }
    });
    n
}

pub fn freeze_all<T: Scalar>(net: &mut impl Net<T>) {
    net.visit_mut(&mut |p| p.freeze());
}

pub fn all_parameters_finite<T: Scalar>(net: &impl Net<T>) -> bool {
    let mut ok = true;
    net.visit(&mut |p| ok &= p.value.data().iter().all(|&v| Scalar::to_f64(v).is_finite()));
    ok
}

/// Initialization stream for one network, decorrelated from data streams.
pub(crate) fn init_stream(seed: u64, net_name: &str) -> ChaCha12Rng {
    rng::stream(seed, &format!("init/{net_name}"))
}

pub(crate) fn require_multiple(dim: usize, of: usize, what: &str) -> Result<()> {
    if dim == 0 || dim % of != 0 {
        return Err(Error::InvalidArgument(format!(
            "{what} must be a positive multiple of {of}, got {dim}"
        )));
    }
    Ok(())
}
