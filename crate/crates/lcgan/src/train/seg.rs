//! Supervised segmentor training on one labeled domain.

use rand::seq::SliceRandom as _;

use super::infer::predict_mask;
use super::optim::{AdamState, LrSchedule};
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::image::to_model_range;
use crate::metrics::{self, SegScore};
use crate::networks::{Net as _, Segmentor};
use crate::rng;
use crate::scalar::Scalar;
use crate::synth::Sample;

#[derive(Clone, Debug)]
pub struct SegTrainReport {
    /// Mean training cross-entropy per epoch, in pass order.
    pub epoch_losses: Vec<f64>,
    /// Validation score after each epoch.
    pub val_history: Vec<SegScore>,
    pub best_val: SegScore,
    /// Epoch (0-based) whose parameters the returned network carries.
    pub best_epoch: usize,
}

/// Trains a fresh segmentor with per-pixel cross-entropy, one image per
/// step, and returns it with the best-validation parameters restored.
pub fn train_segmentor<T: Scalar>(
    train: &[Sample],
    val: &[Sample],
    config: &TrainConfig,
) -> Result<(Segmentor<T>, SegTrainReport)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Dataset("segmentor training set is empty".into()));
    }
    if val.is_empty() {
        return Err(Error::Dataset("segmentor validation set is empty".into()));
    }

    let seed = config.run.seed;
    let mut net = Segmentor::<T>::build(config.model.segmentor.clone(), seed)?;
    let mut adam = AdamState::new(config.optim.adam);
    let total_steps = config.run.epochs * train.len();
    let schedule = LrSchedule::for_run(config.optim.learning_rate, total_steps);
    let mut shuffle_rng = rng::stream(seed, "seg/shuffle");

    let mut report = SegTrainReport {
        epoch_losses: Vec::with_capacity(config.run.epochs),
        val_history: Vec::with_capacity(config.run.epochs),
        best_val: SegScore { iou: -1.0, dsc: -1.0 },
        best_epoch: 0,
    };
    let mut best_params: Option<Vec<Vec<T>>> = None;

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0usize;
    for epoch in 0..config.run.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for &i in &order {
            let sample = &train[i];
            let x = to_model_range(&sample.image.to_tensor::<T>());
            let logits = net.forward(&x)?;
            let loss = logits.cross_entropy_with(&sample.mask.to_onehot())?;
            let value = Scalar::to_f64(loss.item());
            if !value.is_finite() {
                return Err(Error::Diverged { step });
            }
            epoch_loss += value;
            loss.backward()?;
            adam.step(&mut net, schedule.at(step))?;
            step += 1;
        }
        report.epoch_losses.push(epoch_loss / train.len() as f64);

        let score = validate(&net, val)?;
        report.val_history.push(score);
        if score.dsc > report.best_val.dsc {
            report.best_val = score;
            report.best_epoch = epoch;
            best_params = Some(snapshot(&net));
        }
    }

    if let Some(params) = best_params {
        restore(&mut net, params)?;
    }
    Ok((net, report))
}

fn validate<T: Scalar>(net: &Segmentor<T>, val: &[Sample]) -> Result<SegScore> {
    let scores = val
        .iter()
        .map(|s| metrics::score(&predict_mask(net, &s.image)?, &s.mask))
        .collect::<Result<Vec<_>>>()?;
    metrics::mean_scores(&scores)
}

fn snapshot<T: Scalar>(net: &Segmentor<T>) -> Vec<Vec<T>> {
    let mut params = Vec::new();
    net.visit(&mut |p| params.push(p.value.data().to_vec()));
    params
}

fn restore<T: Scalar>(net: &mut Segmentor<T>, params: Vec<Vec<T>>) -> Result<()> {
    let mut iter = params.into_iter();
    let mut failure = None;
    net.visit_mut(&mut |p| {
        if failure.is_some() {
            return;
        }
        match iter.next() {
            Some(data) => {
                if let Err(e) = p.assign(data) {
                    failure = Some(e);
                }
            }
            None => failure = Some(Error::InvalidArgument("parameter snapshot too short".into())),
        }
    });
    failure.map_or(Ok(()), Err)
}
