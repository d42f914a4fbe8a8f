//! History buffer feeding discriminators with a mix of fresh and old fakes.

use rand::Rng as _;
use rand_chacha::ChaCha12Rng;

use crate::diff::Tensor;
use crate::scalar::Scalar;

/// Stores up to `capacity` past generator outputs. While filling, every query
/// returns the newest fake; once full, half the queries swap the newest fake
/// against a random stored one and return the historical image instead.
#[derive(Debug)]
pub struct ImageBuffer<T: Scalar> {
    capacity: usize,
    items: Vec<Tensor<T>>,
    rng: ChaCha12Rng,
}

impl<T: Scalar> ImageBuffer<T> {
    pub fn new(capacity: usize, rng: ChaCha12Rng) -> Self {
        ImageBuffer {
            capacity,
            items: Vec::with_capacity(capacity),
            rng,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Registers a new fake and returns the image the discriminator should
    /// score. The result is always detached from the generator graph.
    pub fn query(&mut self, fake: &Tensor<T>) -> Tensor<T> {
        let fake = fake.detach();
        if self.capacity == 0 {
            return fake;
        }
        if self.items.len() < self.capacity {
            self.items.push(fake.clone());
            return fake;
        }
        if self.rng.gen::<f64>() < 0.5 {
            let slot = self.rng.gen_range(0..self.items.len());
            let old = self.items[slot].clone();
            self.items[slot] = fake;
            old
        } else {
            fake
        }
    }
}
