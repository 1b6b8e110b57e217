//! Dataset manifests, the training loop, evaluation metrics and checkpoints.

mod checkpoint;
mod config;
mod manifest;
mod metrics;
mod trainer;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, MAGIC,
    VERSION,
};
pub(crate) use config::preprocessing_from_kv;
pub use config::TrainConfig;
pub use manifest::{
    assign_splits, build_manifest, is_image_path, list_images, ClassCounts, ClassDirs,
    DatasetManifest, Label, ManifestEntry, Split, SplitRequest,
};
pub use metrics::{
    compute_metrics, confusion_from_predictions, f1_score, ClassMetrics, ConfusionCounts,
    MetricsReport, DECISION_THRESHOLD,
};
pub use trainer::{
    accuracy, epoch_checkpoint_path, evaluate, predict, prepare_image, train, train_on_manifest,
    Dataset, EpochRecord, TrainOutcome, TrainingLog,
};

/// Re-exported so callers can compute the loss without reaching into
/// [`crate::tensor`].
pub use crate::tensor::bce_loss;
