//! Training loop: seeded shuffling, staged learning rates, and the
//! on-the-fly CCP augmentation hook used as the defense.

use crate::ccp::{apply_ccp, CcpParams, WeightMatrix};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::Model;
use crate::prng::{Purpose, SeedPath};

/// Training-time augmentation. `CcpVariable` replaces each image in each
/// batch, with the given probability, by a transform drawn with a fresh
/// per-occurrence weight matrix (variable-scheme semantics; the `scheme`
/// field of the params is ignored here).
#[derive(Debug, Clone, PartialEq)]
pub enum Augmentation {
    None,
    CcpVariable {
        params: CcpParams,
        probability: f64,
    },
}

/// Full training configuration. The learning-rate schedule is a list of
/// (epoch_count, learning_rate) stages; total epochs is their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub schedule: Vec<(usize, f64)>,
    pub batch_size: usize,
    pub seed: u64,
    pub augmentation: Augmentation,
    pub horizontal_flip: bool,
}

impl TrainConfig {
    /// Single-stage schedule.
    pub fn new(epochs: usize, learning_rate: f64, batch_size: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            schedule: vec![(epochs, learning_rate)],
            batch_size,
            seed,
            augmentation: Augmentation::None,
            horizontal_flip: false,
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.schedule.iter().map(|(n, _)| n).sum()
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if let Augmentation::CcpVariable {
            params,
            probability,
        } = &self.augmentation
        {
            params.validate()?;
            if !(0.0..=1.0).contains(probability) {
                return Err(Error::InvalidArgument(format!(
                    "augmentation probability {probability} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

/// Loss and train-accuracy trace of one training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

/// The per-occurrence augmentation draw. The stream is derived from
/// (seed, epoch, image index, augmentation purpose); draw order is frozen:
/// one uniform for the flip decision (only when flips are enabled), one
/// uniform for the CCP decision, then the nine weights when it fires.
fn augment_occurrence(
    image: &Image,
    config: &TrainConfig,
    epoch: usize,
    image_index: usize,
) -> Image {
    let ccp = match &config.augmentation {
        Augmentation::None if !config.horizontal_flip => return image.clone(),
        Augmentation::None => None,
        Augmentation::CcpVariable {
            params,
            probability,
        } => Some((params, *probability)),
    };
    let mut rng = SeedPath::new(
        config.seed,
        epoch as u64,
        image_index as u64,
        Purpose::Augmentation,
    )
    .derive();
    let mut out = image.clone();
    if config.horizontal_flip && rng.next_uniform() < 0.5 {
        out = out.flip_horizontal();
    }
    if let Some((params, probability)) = ccp {
        if rng.next_uniform() < probability {
            let weights = WeightMatrix::draw(&mut rng, params.lower, params.upper);
            out = apply_ccp(&out.to_compute(), &weights, params).to_storage();
        }
    }
    out
}

/// Train in place. Shuffling, augmentation and initialization all flow
/// from derived seeds, so identical inputs give bit-identical parameters.
/// Labels and dataset order are never altered; augmentation acts on the
/// batch copies only.
pub fn train(model: &mut Model, ds: &Dataset, config: &TrainConfig) -> Result<TrainingLog> {
    config.validate()?;
    if ds.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    let mut log = TrainingLog::default();
    let mut epoch = 0usize;
    for &(count, learning_rate) in &config.schedule {
        for _ in 0..count {
            let mut order: Vec<usize> = (0..ds.len()).collect();
            SeedPath::new(config.seed, epoch as u64, 0, Purpose::Shuffle)
                .derive()
                .shuffle(&mut order);

            let mut loss_sum = 0.0;
            let mut correct = 0usize;
            for batch in order.chunks(config.batch_size) {
                let images: Vec<Image> = batch
                    .iter()
                    .map(|&i| augment_occurrence(ds.image(i), config, epoch, i))
                    .collect();
                let labels: Vec<_> = batch.iter().map(|&i| ds.label(i)).collect();
                let stats = model.backward_batch(&images, &labels)?;
                model.adam_step(&stats.gradients, learning_rate);
                loss_sum += stats.mean_loss * batch.len() as f64;
                correct += stats.correct;
            }
            log.epochs.push(EpochRecord {
                epoch,
                learning_rate,
                mean_loss: loss_sum / ds.len() as f64,
                train_accuracy: correct as f64 / ds.len() as f64,
            });
            epoch += 1;
        }
    }
    Ok(log)
}
