use super::predict::{image_tensor, rank_indices};
use super::{loss_and_logit_grad, Checkpoint, LossConfig, ModelConfig, ModelError, Network, TrainingMetadata};
use crate::corpus::{augment, AugmentationSpec};
use crate::image::RgbImage;
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub loss: LossConfig,
    pub augmentation: AugmentationSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 0,
            loss: LossConfig::CrossEntropy,
            augmentation: AugmentationSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, num_classes: usize) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Train(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        self.augmentation
            .validate()
            .map_err(|e| ModelError::Train(e.to_string()))?;
        self.loss.validate(num_classes)
    }
}

/// Images with label-space indices.
#[derive(Debug, Clone, Default)]
pub struct TrainData {
    pub images: Vec<RgbImage>,
    pub labels: Vec<usize>,
}

impl TrainData {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Metrics after one epoch. Epoch 0 is the initialization.
///
/// For epochs ≥ 1 the train figures are running means over the epoch's
/// (augmented) minibatches; validation figures use clean images and the
/// epoch's final parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_top1: f64,
    pub val_loss: Option<f64>,
    pub val_top1: Option<f64>,
}

impl EpochMetrics {
    fn selection_score(&self) -> f64 {
        self.val_top1.unwrap_or(self.train_top1)
    }
}

const EVAL_CHUNK: usize = 64;

fn evaluate(net: &Network, params: &[f64], data: &TrainData, loss: &LossConfig) -> Result<(f64, f64), ModelError> {
    let mut total = 0.0;
    let mut correct = 0usize;
    for (imgs, labels) in data.images.chunks(EVAL_CHUNK).zip(data.labels.chunks(EVAL_CHUNK)) {
        let refs: Vec<&RgbImage> = imgs.iter().collect();
        let logits = net.forward(params, &image_tensor(&refs, net.config().input)?)?;
        for (row, &y) in logits.iter_rows().zip(labels) {
            total += loss_and_logit_grad(row, y, loss).0;
            if rank_indices(row)[0] == y {
                correct += 1;
            }
        }
    }
    let n = data.len() as f64;
    Ok((total / n, correct as f64 / n))
}

fn check_data(data: &TrainData, num_classes: usize, what: &str) -> Result<(), ModelError> {
    if data.images.len() != data.labels.len() {
        return Err(ModelError::Train(format!(
            "{what}: {} images but {} labels",
            data.images.len(),
            data.labels.len()
        )));
    }
    if let Some(l) = data.labels.iter().find(|&&l| l >= num_classes) {
        return Err(ModelError::Train(format!("{what}: label index {l} out of range")));
    }
    Ok(())
}

/// Minibatch SGD with momentum and no schedule. Returns the parameters of
/// the epoch with the best validation top-1 (earliest on ties; training
/// top-1 when `val` is empty).
pub fn train(
    model: &ModelConfig,
    config: &TrainConfig,
    label_space: Vec<String>,
    train_set: &TrainData,
    val: &TrainData,
    dataset_version: Option<u32>,
) -> Result<Checkpoint, ModelError> {
    let net = Network::new(model)?;
    config.validate(model.num_classes)?;
    if train_set.is_empty() {
        return Err(ModelError::Train("training split is empty".into()));
    }
    check_data(train_set, model.num_classes, "train")?;
    check_data(val, model.num_classes, "val")?;

    let mut params = net.init_parameters(&mut Rng::derive(config.seed, 0));
    let mut metadata = TrainingMetadata {
        dataset_version,
        seed: config.seed,
        loss: Some(config.loss.clone()),
        ..Default::default()
    };
    // fails early on a bad label space
    let mut best = Checkpoint::new(model.clone(), label_space.clone(), params.clone(), TrainingMetadata::default())?;

    let val_metrics = |params: &[f64]| -> Result<(Option<f64>, Option<f64>), ModelError> {
        if val.is_empty() {
            return Ok((None, None));
        }
        let (l, t) = evaluate(&net, params, val, &config.loss)?;
        Ok((Some(l), Some(t)))
    };

    let (train_loss, train_top1) = evaluate(&net, &params, train_set, &config.loss)?;
    let (val_loss, val_top1) = val_metrics(&params)?;
    let init = EpochMetrics {
        epoch: 0,
        train_loss,
        train_top1,
        val_loss,
        val_top1,
    };
    let mut best_score = init.selection_score();
    let mut best_params = params.clone();
    metadata.history.push(init);

    let mut order_rng = Rng::derive(config.seed, 1);
    let mut aug_rng = Rng::derive(config.seed, 2);
    let augmenting = !config.augmentation.is_disabled();
    let mut velocity = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        order_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let images: Vec<RgbImage> = if augmenting {
                chunk
                    .iter()
                    .map(|&i| augment(&train_set.images[i], &config.augmentation, &mut aug_rng))
                    .collect::<Result<_, _>>()
                    .map_err(|e| ModelError::Train(e.to_string()))?
            } else {
                chunk.iter().map(|&i| train_set.images[i].clone()).collect()
            };
            let refs: Vec<&RgbImage> = images.iter().collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.labels[i]).collect();
            let batch = image_tensor(&refs, model.input)?;
            let (loss, grad, logits) = net.loss_gradient_logits(&params, &batch, &labels, &config.loss)?;
            loss_sum += loss * chunk.len() as f64;
            correct += logits
                .iter()
                .zip(&labels)
                .filter(|(row, &y)| rank_indices(row)[0] == y)
                .count();
            for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = config.momentum * *v - config.learning_rate * g;
                *p += *v;
            }
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(ModelError::Train(format!("parameters diverged in epoch {epoch}")));
        }
        let n = train_set.len() as f64;
        let (val_loss, val_top1) = val_metrics(&params)?;
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / n,
            train_top1: correct as f64 / n,
            val_loss,
            val_top1,
        };
        if m.selection_score() > best_score {
            best_score = m.selection_score();
            best_params.copy_from_slice(&params);
            metadata.best_epoch = epoch;
        }
        metadata.history.push(m);
    }
    metadata.epochs_run = config.epochs;
    best = Checkpoint::new(best.config().clone(), label_space, best_params, metadata)?;
    Ok(best)
}
