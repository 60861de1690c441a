//! Mini-batch SGD training loop shared by both stages.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{network_input, PreparedSet};
use super::schedule::{PlateauTracker, ScheduleDecision, SchedulePolicy};
use super::{Monitor, ModelError, TrainConfig};
use crate::nn::loss::{sample_loss, Target};
use crate::nn::{batch_gradients, Network, Sgd};
use crate::vision::{adjust_brightness, Normalization};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Learning rate used during this epoch.
    pub learning_rate: f64,
}

/// Mean loss of `net` over a prepared set, without augmentation.
pub fn evaluate_loss(
    net: &Network<f32>,
    norm: &Normalization,
    set: &PreparedSet,
    cfg: &TrainConfig,
) -> Result<f64, ModelError> {
    let mut total = 0.0f64;
    for i in 0..set.len() {
        let out = net.forward(&network_input(set.image(i), norm)?)?;
        let (loss, _) = sample_loss(cfg.loss, &out, set.target(i), 1);
        total += loss as f64;
    }
    Ok(total / set.len() as f64)
}

/// Trains `net` in place. Returns the per-epoch history.
///
/// Batches are drawn in a seed-determined order and gradients are summed in
/// sample order, so identical inputs give bit-identical weights.
pub(crate) fn fit(
    net: &mut Network<f32>,
    norm: &Normalization,
    train: &PreparedSet,
    val: Option<&PreparedSet>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochRecord>, ModelError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(ModelError::EmptyDataset("training set"));
    }
    let val = match (cfg.monitor, val) {
        (_, Some(v)) if v.is_empty() => return Err(ModelError::EmptyDataset("validation set")),
        (Monitor::Validation, None) => return Err(ModelError::EmptyDataset("validation set")),
        (_, v) => v,
    };
    let policy = SchedulePolicy {
        plateau_patience: cfg.plateau_patience,
        factor: cfg.plateau_factor,
        early_patience: cfg.early_patience,
        min_delta: cfg.min_delta,
    };
    let mut tracker = PlateauTracker::new(policy, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sgd = Sgd::new(cfg.momentum as f32);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<Network<f32>> = None;

    for epoch in 0..cfg.max_epochs {
        let lr = tracker.lr();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let mut inputs = Vec::with_capacity(batch.len());
            let mut targets: Vec<Target<f32>> = Vec::with_capacity(batch.len());
            for &i in batch {
                let image = match cfg.augmentation {
                    Some(range) => adjust_brightness(train.image(i), rng.gen_range(range.min..=range.max))?,
                    None => train.image(i).clone(),
                };
                inputs.push(network_input(&image, norm)?);
                targets.push(train.target(i).clone());
            }
            let (loss, grads) = batch_gradients(net, &inputs, &targets, cfg.loss)?;
            if !loss.is_finite() {
                return Err(ModelError::Divergence { epoch });
            }
            epoch_loss += loss as f64 * batch.len() as f64;
            sgd.step(net, &grads, lr as f32);
        }
        let train_loss = epoch_loss / train.len() as f64;
        let val_loss = val.map(|v| evaluate_loss(net, norm, v, cfg)).transpose()?;
        if !train_loss.is_finite() || val_loss.is_some_and(|v| !v.is_finite()) {
            return Err(ModelError::Divergence { epoch });
        }
        history.push(EpochRecord { epoch, train_loss, val_loss, learning_rate: lr });
        let monitored = match cfg.monitor {
            Monitor::Validation => val_loss.expect("validation set checked above"),
            Monitor::Training => train_loss,
        };
        let decision = tracker.observe(monitored);
        log::info!("epoch {epoch}: train {train_loss:.5} val {val_loss:?} lr {lr:e} -> {decision:?}");
        if cfg.restore_best && tracker.improved_last() {
            best = Some(net.clone());
        }
        if decision == ScheduleDecision::Stop {
            break;
        }
    }
    if let Some(best) = best {
        *net = best;
    }
    Ok(history)
}
