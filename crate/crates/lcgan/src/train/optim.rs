//! Adam with a constant-then-linear-decay learning-rate schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::Net;
use crate::scalar::Scalar;

/// lr(t) = base for the first half of the run, then linear to zero at the end.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub constant_steps: usize,
    pub decay_steps: usize,
}

impl LrSchedule {
    /// Splits a run at its midpoint: constant phase, then linear decay.
    pub fn for_run(base: f64, total_steps: usize) -> Self {
        let constant_steps = total_steps / 2;
        LrSchedule {
            base,
            constant_steps,
            decay_steps: total_steps - constant_steps,
        }
    }

    pub fn at(&self, step: usize) -> f64 {
        if step <= self.constant_steps {
            return self.base;
        }
        let into = step - self.constant_steps;
        if into >= self.decay_steps {
            return 0.0;
        }
        self.base * (1.0 - into as f64 / self.decay_steps as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators for every trainable parameter of one
/// network, keyed by parameter name. Moments are kept in f64 regardless of
/// the model scalar type.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    slots: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            slots: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update over every trainable parameter from its accumulated leaf
    /// gradient; a parameter without a gradient this pass counts as zero
    /// gradient. Each update replaces the parameter's leaf tensor, which
    /// also discards the consumed gradient.
    pub fn step<T: Scalar>(&mut self, net: &mut impl Net<T>, lr: f64) -> Result<()> {
        self.step += 1;
        let b1 = self.config.beta1;
        let b2 = self.config.beta2;
        let fix1 = 1.0 - b1.powi(self.step as i32);
        let fix2 = 1.0 - b2.powi(self.step as i32);
        let eps = self.config.eps;

        let mut failure: Option<Error> = None;
        net.visit_mut(&mut |p| {
            if !p.trainable || failure.is_some() {
                return;
            }
            let n = p.value.numel();
            let grad = p.value.grad();
            let (m, v) = self
                .slots
                .entry(p.name.clone())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            if m.len() != n {
                failure = Some(Error::InvalidArgument(format!(
                    "optimizer slot for {} holds {} moments but the parameter has {} elements",
                    p.name,
                    m.len(),
                    n
                )));
                return;
            }
            let data = p.value.data();
            let mut next = Vec::with_capacity(n);
            for i in 0..n {
                let g = grad.as_ref().map_or(0.0, |g| Scalar::to_f64(g[i]));
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let m_hat = m[i] / fix1;
                let v_hat = v[i] / fix2;
                next.push(T::from_f64(
                    Scalar::to_f64(data[i]) - lr * m_hat / (v_hat.sqrt() + eps),
                ));
            }
            if let Err(e) = p.assign(next) {
                failure = Some(e);
            }
        });
        failure.map_or(Ok(()), Err)
    }
}
