//! Mini-batch training with validation-driven scheduling, and evaluation.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::checkpoint::save_checkpoint;
use super::config::{preprocessing_kv, TrainConfig};
use super::manifest::{DatasetManifest, Split};
use super::metrics::{
    compute_metrics, confusion_from_predictions, MetricsReport, DECISION_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::image::{clahe, load_image, resize_bilinear, stack_channels, ClaheSpec, GrayImage};
use crate::kv::KvMap;
use crate::optim::{EarlyStopState, EventKind, OptimState, PlateauState, SchedulerEvent};
use crate::tensor::{bce_loss, Tensor};
use crate::vit::{patchify_one, NamedArrays, ViT, ViTConfig, ViTParams};

/// Enhances (optionally) and resizes one radiograph to the model input size.
pub fn prepare_image(
    img: &GrayImage,
    config: &ViTConfig,
    enhance: Option<&ClaheSpec>,
) -> Result<GrayImage> {
    let img = match enhance {
        Some(spec) => clahe(img, spec)?,
        None => img.clone(),
    };
    if img.width() == config.image_size && img.height() == config.image_size {
        return Ok(img);
    }
    resize_bilinear(&img, config.image_size, config.image_size)
}

/// Labeled images already at the model's input size.
#[derive(Clone, Debug)]
pub struct Dataset {
    config: ViTConfig,
    images: Vec<GrayImage>,
    targets: Vec<f64>,
}

impl Dataset {
    /// Prepares `images` for `config`. Targets are 1 for COVID and 0 otherwise.
    pub fn new(
        images: Vec<GrayImage>,
        targets: Vec<f64>,
        config: &ViTConfig,
        enhance: Option<&ClaheSpec>,
    ) -> Result<Self> {
        if images.len() != targets.len() {
            return Err(Error::InvalidArgument(format!(
                "{} images but {} targets",
                images.len(),
                targets.len()
            )));
        }
        if let Some(t) = targets.iter().find(|&&t| t != 0.0 && t != 1.0) {
            return Err(Error::InvalidArgument(format!(
                "targets must be 0 or 1, got {t}"
            )));
        }
        let images = images
            .par_iter()
            .map(|img| prepare_image(img, config, enhance))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: *config,
            images,
            targets,
        })
    }

    /// Loads and prepares every image of one manifest split. A decode failure
    /// names the offending file.
    pub fn from_manifest(
        manifest: &DatasetManifest,
        split: Split,
        config: &ViTConfig,
        enhance: Option<&ClaheSpec>,
    ) -> Result<Self> {
        let entries: Vec<_> = manifest.split(split).collect();
        let images = entries
            .par_iter()
            .map(|e| {
                load_image(&e.path)
                    .and_then(|img| prepare_image(&img, config, enhance))
                    .map_err(|err| match err {
                        Error::Load { .. } => err,
                        other => Error::Load {
                            path: e.path.clone(),
                            source: Box::new(other),
                        },
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let targets = entries.iter().map(|e| e.label.target()).collect();
        Ok(Self {
            config: *config,
            images,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn images(&self) -> &[GrayImage] {
        &self.images
    }

    /// The samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            config: self.config,
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
        }
    }

    /// Patch tensor `(len, num_patches, patch_dim)` and targets for `indices`.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<f64>)> {
        let c = &self.config;
        let mut data = Vec::with_capacity(indices.len() * c.num_patches() * c.patch_dim());
        for &i in indices {
            data.extend(patchify_one(&stack_channels(&self.images[i]), c)?);
        }
        let x = Tensor::new(data, &[indices.len(), c.num_patches(), c.patch_dim()])?;
        Ok((x, indices.iter().map(|&i| self.targets[i]).collect()))
    }
}

/// COVID probabilities for every sample, in dataset order.
///
/// Batches are spread over worker threads, each holding its own copy of the
/// parameters; results are gathered in order so the output does not depend
/// on scheduling.
pub fn predict(model: &ViT, data: &Dataset, batch_size: usize) -> Result<Vec<f64>> {
    let batch_size = batch_size.max(1);
    let indices: Vec<usize> = (0..data.len()).collect();
    let chunks: Vec<&[usize]> = indices.chunks(batch_size).collect();
    if chunks.len() <= 1 {
        return match chunks.first() {
            Some(c) => Ok(model.predict(&data.batch(c)?.0)?.to_vec()),
            None => Ok(Vec::new()),
        };
    }
    let arrays = model.params.to_named();
    let config = model.config;
    let per_batch = chunks
        .par_iter()
        .map_init(
            || {
                ViTParams::from_named(&config, arrays.clone())
                    .and_then(|p| ViT::from_params(config, p))
            },
            |local, chunk| {
                let local = local
                    .as_ref()
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?;
                Ok(local.predict(&data.batch(chunk)?.0)?.to_vec())
            },
        )
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(per_batch.concat())
}

/// Fraction of samples classified correctly at the decision threshold.
pub fn accuracy(probs: &[f64], targets: &[f64]) -> f64 {
    let correct = probs
        .iter()
        .zip(targets)
        .filter(|(&p, &y)| (p >= DECISION_THRESHOLD) == (y >= 0.5))
        .count();
    correct as f64 / targets.len().max(1) as f64
}

/// Confusion counts and scores of `model` on `data`.
pub fn evaluate(model: &ViT, data: &Dataset, batch_size: usize) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(Error::Empty("cannot evaluate on an empty split".into()));
    }
    let probs = predict(model, data, batch_size)?;
    compute_metrics(confusion_from_predictions(&probs, data.targets())?)
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss over the epoch's mini-batches, weighted by batch size.
    pub train_loss: f64,
    /// Accuracy of the predictions made while training during the epoch.
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub events: Vec<SchedulerEvent>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub stopped_early: bool,
}

impl TrainingLog {
    /// Validation accuracy after every epoch.
    pub fn val_trace(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_accuracy).collect()
    }

    /// One JSON object per epoch followed by a summary object.
    pub fn to_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct Summary {
            best_epoch: usize,
            best_val_accuracy: f64,
            stopped_early: bool,
            epochs_run: usize,
        }
        let mut out = String::new();
        for e in &self.epochs {
            out += &serde_json::to_string(e).expect("record serializes");
            out.push('\n');
        }
        let summary = Summary {
            best_epoch: self.best_epoch,
            best_val_accuracy: self.best_val_accuracy,
            stopped_early: self.stopped_early,
            epochs_run: self.epochs.len(),
        };
        out += &serde_json::to_string(&serde_json::json!({ "summary": summary }))
            .expect("summary serializes");
        out.push('\n');
        out
    }
}

pub struct TrainOutcome {
    /// The model after the last epoch run.
    pub model: ViT,
    /// Parameters from the epoch with the best validation accuracy.
    pub best_params: NamedArrays,
    pub log: TrainingLog,
}

/// Path of the per-epoch checkpoint for `epoch` inside `dir`.
pub fn epoch_checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:04}.ckpt"))
}

fn checkpoint_meta(config: &TrainConfig, epoch: usize, val_accuracy: f64) -> KvMap {
    let mut m = KvMap::default();
    preprocessing_kv(config.clahe.as_ref(), &mut m);
    if let Some(p) = &config.manifest {
        m.insert("manifest", p.display());
    }
    m.insert("epoch", epoch);
    m.insert("val_accuracy", val_accuracy);
    m
}

/// Trains a freshly initialized model.
///
/// Each epoch shuffles the training set, takes one optimizer step per
/// mini-batch on the mean binary cross-entropy, then measures validation
/// accuracy and feeds it to the plateau and early-stopping schedulers. The
/// best-validation parameters are kept and, when configured, checkpointed.
pub fn train(
    config: &TrainConfig,
    train_data: &Dataset,
    val_data: &Dataset,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_data.is_empty() || val_data.is_empty() {
        return Err(Error::Empty(
            "training needs non-empty train and validation splits".into(),
        ));
    }
    for d in [train_data, val_data] {
        if d.config != config.vit {
            return Err(Error::Config(
                "dataset was prepared for a different model configuration".into(),
            ));
        }
    }
    if let Some(dir) = &config.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let model = ViT::new(config.vit, config.seed)?;
    let params = model.params.tensors();
    let mut optim = OptimState::for_tensors(config.optimizer, config.lr, &params);
    let mut plateau = PlateauState::new(
        config.plateau_factor,
        config.plateau_patience,
        config.min_lr,
    );
    let mut early = EarlyStopState::new(config.early_stop_patience);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(2);

    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut log = TrainingLog::default();
    let mut best_params = model.params.to_named();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let lr = optim.lr;
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let (x, y) = train_data.batch(chunk)?;
            let probs = model.forward_logits(&x, Some(&mut dropout_rng))?.sigmoid();
            let loss = bce_loss(&probs, &y)?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step: step + 1,
                });
            }
            loss.backward()?;
            optim.step(&params)?;
            model.params.zero_grad();
            loss_sum += value * chunk.len() as f64;
            correct += probs
                .data()
                .iter()
                .zip(&y)
                .filter(|(&p, &t)| (p >= DECISION_THRESHOLD) == (t >= 0.5))
                .count();
        }

        let val_accuracy = accuracy(
            &predict(&model, val_data, config.batch_size)?,
            val_data.targets(),
        );
        let mut events = Vec::new();
        let new_lr = plateau.step(val_accuracy, lr)?;
        if new_lr != lr {
            events.push(SchedulerEvent {
                epoch,
                event: EventKind::LrReduced,
                old: lr,
                new: new_lr,
            });
            optim.lr = new_lr;
        }
        let stop = early.step(val_accuracy)?;
        if stop {
            events.push(SchedulerEvent {
                epoch,
                event: EventKind::EarlyStopped,
                old: early.best.unwrap_or(val_accuracy),
                new: val_accuracy,
            });
        }

        if epoch == 1 || val_accuracy > log.best_val_accuracy {
            log.best_epoch = epoch;
            log.best_val_accuracy = val_accuracy;
            best_params = model.params.to_named();
            if let Some(path) = &config.checkpoint {
                save_checkpoint(
                    path,
                    &model.params,
                    &config.vit,
                    &checkpoint_meta(config, epoch, val_accuracy),
                )?;
            }
        }
        if let Some(dir) = &config.checkpoint_dir {
            let path = epoch_checkpoint_path(dir, epoch);
            save_checkpoint(
                &path,
                &model.params,
                &config.vit,
                &checkpoint_meta(config, epoch, val_accuracy),
            )?;
        }
        let n = train_data.len() as f64;
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_accuracy,
            lr,
            events,
        });
        if stop {
            log.stopped_early = true;
            break;
        }
    }
    if let Some(path) = &config.log {
        write_atomic(path, log.to_jsonl().as_bytes())?;
    }
    Ok(TrainOutcome {
        model,
        best_params,
        log,
    })
}

/// Loads the train and validation splits of `manifest` and trains on them.
pub fn train_on_manifest(config: &TrainConfig, manifest: &DatasetManifest) -> Result<TrainOutcome> {
    config.validate()?;
    let enhance = config.clahe.as_ref();
    let train_data = Dataset::from_manifest(manifest, Split::Train, &config.vit, enhance)?;
    let val_data = Dataset::from_manifest(manifest, Split::Validation, &config.vit, enhance)?;
    train(config, &train_data, &val_data)
}
