//! Minibatch SGD with momentum.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, shape_err, Error, Result};
use crate::layers::{sgd_update, softmax_cross_entropy};
use crate::model::Network;
use crate::rng::Rng;
use crate::stats::top_k_hits;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// The reference desk configuration.
    fn default() -> Self {
        Self { epochs: 5, batch_size: 16, learning_rate: 0.05, momentum: 0.9, seed: 1 }
    }
}

/// Mean minibatch loss and running top-1 accuracy (dropout active) for one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Trains a copy of `network`. The sample order of every epoch and all
/// dropout masks come from one stream seeded with `config.seed`, so a given
/// configuration always produces the same bits.
pub fn train(network: &Network, data: &Dataset, config: &TrainConfig) -> Result<(Network, Vec<EpochStats>)> {
    if data.is_empty() {
        return Err(invalid!("training set is empty"));
    }
    if config.batch_size == 0 {
        return Err(invalid!("batch size must be positive"));
    }
    if data.class_count() > network.class_count() {
        return Err(shape_err!(
            "dataset has {} classes, network outputs {}",
            data.class_count(),
            network.class_count()
        ));
    }
    if data.image_shape() != network.input_shape() {
        return Err(shape_err!(
            "dataset images are {:?}, network expects {:?}",
            data.image_shape(),
            network.input_shape()
        ));
    }
    let mut net = network.clone();
    let mut velocity: Vec<(Vec<f32>, Vec<f32>)> = net
        .param_layers()
        .map(|(_, p)| (alloc::vec![0.0; p.weights.len()], alloc::vec![0.0; p.biases.len()]))
        .collect();
    let mut rng = Rng::from_seed(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let (mut loss_sum, mut batches, mut hits) = (0f64, 0usize, 0usize);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let sub = data.subset(chunk)?;
            let (logits, caches) = net.forward_train(sub.images(), &mut rng)?;
            let (loss, grad) = softmax_cross_entropy(&logits, sub.labels())?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss is {} at epoch {}, batch {} (learning rate {})",
                    loss, epoch, b, config.learning_rate
                )));
            }
            hits += top_k_hits(&logits, sub.labels(), 1)?;
            loss_sum += loss;
            batches += 1;
            let grads = net.backward(&caches, &grad)?;
            for ((params, (dw, db)), (vw, vb)) in net.param_slots_mut().zip(&grads).zip(velocity.iter_mut()) {
                sgd_update(params.weights.data_mut(), dw.data(), vw, config.learning_rate, config.momentum)?;
                sgd_update(params.biases.data_mut(), db.data(), vb, config.learning_rate, config.momentum)?;
            }
        }
        history.push(EpochStats {
            epoch,
            loss: loss_sum / batches as f64,
            accuracy: hits as f64 / data.len() as f64,
        });
    }
    Ok((net, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, SynthSpec};
    use crate::model::desk_architecture;

    fn setup() -> (Network, Dataset) {
        let spec = SynthSpec { classes: 3, per_class: 4, test_per_class: 1, size: 8, noise: 0.1 };
        let data = synth_dataset(&spec, 0).unwrap().train;
        (Network::build(desk_architecture(8, 3), 0).unwrap(), data)
    }

    #[test]
    fn zero_epochs_is_identity() {
        let (net, data) = setup();
        let (out, hist) = train(&net, &data, &TrainConfig { epochs: 0, ..Default::default() }).unwrap();
        assert_eq!(out, net);
        assert!(hist.is_empty());
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let (net, data) = setup();
        let cfg = TrainConfig { epochs: 2, learning_rate: 0.0, batch_size: 5, ..Default::default() };
        let (out, hist) = train(&net, &data, &cfg).unwrap();
        assert_eq!(out, net);
        assert_eq!(hist.len(), 2);
    }

    #[test]
    fn same_seed_same_bits() {
        let (net, data) = setup();
        let cfg = TrainConfig { epochs: 2, batch_size: 4, ..Default::default() };
        let (a, ha) = train(&net, &data, &cfg).unwrap();
        let (b, hb) = train(&net, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert_ne!(a, net);
    }

    #[test]
    fn divergent_training_reports_non_finite() {
        let (net, data) = setup();
        let cfg = TrainConfig { epochs: 3, batch_size: 2, learning_rate: 1e30, momentum: 0.0, seed: 0 };
        assert!(matches!(train(&net, &data, &cfg), Err(Error::NonFinite(_))));
    }
}
