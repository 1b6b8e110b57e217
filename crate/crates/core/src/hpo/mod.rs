//! Random search over optimizer choice and learning rate.
//!
//! Each trial trains a fresh model for a short budget and reports its best
//! validation accuracy. Trials are independent and run on parallel workers;
//! results are ranked by trial content alone, so completion order never
//! changes the output.

use std::time::Instant;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::optim::OptimizerKind;
use crate::train::{train, Dataset, DatasetManifest, Split, TrainConfig};

/// Learning rates are drawn log-uniformly from this closed interval.
pub const LR_RANGE: (f64, f64) = (1e-6, 1e-3);
pub const DEFAULT_TRIALS: usize = 50;
pub const DEFAULT_TRIAL_EPOCHS: usize = 3;

fn display<T: std::fmt::Display, S: Serializer>(
    v: &T,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialSpec {
    pub id: usize,
    #[serde(serialize_with = "display")]
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub seed: u64,
    /// Training epochs allotted to the trial.
    pub epochs: usize,
}

/// `n` trials with dense ids `0..n`, learning rates log-uniform in
/// [`LR_RANGE`] and the optimizer chosen uniformly. Trial `i` trains with
/// seed `seed + i`.
pub fn sample_trials(n: usize, seed: u64) -> Result<Vec<TrialSpec>> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "a search needs at least one trial".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (LR_RANGE.0.ln(), LR_RANGE.1.ln());
    Ok((0..n)
        .map(|id| {
            let lr = rng
                .random_range(lo..=hi)
                .exp()
                .clamp(LR_RANGE.0, LR_RANGE.1);
            let optimizer = *OptimizerKind::ALL.choose(&mut rng).expect("non-empty");
            TrialSpec {
                id,
                optimizer,
                lr,
                seed: seed.wrapping_add(id as u64),
                epochs: DEFAULT_TRIAL_EPOCHS,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", content = "error", rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Failed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialRecord {
    #[serde(flatten)]
    pub spec: TrialSpec,
    /// Best validation accuracy over the trial's epochs; 0 for failed trials.
    pub best_val_accuracy: f64,
    pub epochs_run: usize,
    pub wall_time_secs: f64,
    #[serde(flatten)]
    pub status: TrialStatus,
}

impl TrialRecord {
    pub fn failed(&self) -> bool {
        matches!(self.status, TrialStatus::Failed(_))
    }
}

fn run_trial(
    spec: &TrialSpec,
    base: &TrainConfig,
    train_data: &Dataset,
    val_data: &Dataset,
) -> TrialRecord {
    let start = Instant::now();
    let config = TrainConfig {
        optimizer: spec.optimizer,
        lr: spec.lr,
        seed: spec.seed,
        max_epochs: spec.epochs,
        checkpoint: None,
        checkpoint_dir: None,
        log: None,
        ..base.clone()
    };
    let (best, epochs, status) = match train(&config, train_data, val_data) {
        Ok(out) => (
            out.log.best_val_accuracy,
            out.log.epochs.len(),
            TrialStatus::Ok,
        ),
        Err(e) => (0.0, 0, TrialStatus::Failed(e.to_string())),
    };
    TrialRecord {
        spec: spec.clone(),
        best_val_accuracy: best,
        epochs_run: epochs,
        wall_time_secs: start.elapsed().as_secs_f64(),
        status,
    }
}

/// Orders records best first: successful trials by validation accuracy
/// descending, ties by lower id, failed trials last by id.
pub fn rank(records: &mut [TrialRecord]) {
    records.sort_by(|a, b| {
        a.failed()
            .cmp(&b.failed())
            .then(b.best_val_accuracy.total_cmp(&a.best_val_accuracy))
            .then(a.spec.id.cmp(&b.spec.id))
    });
}

/// Trains every trial on `train_data`, scores it on `val_data` and returns
/// the ranked records. A failing trial is recorded, not propagated.
pub fn run_search(
    trials: &[TrialSpec],
    base: &TrainConfig,
    train_data: &Dataset,
    val_data: &Dataset,
) -> Vec<TrialRecord> {
    let mut records: Vec<TrialRecord> = trials
        .par_iter()
        .map(|spec| run_trial(spec, base, train_data, val_data))
        .collect();
    rank(&mut records);
    records
}

/// Loads the manifest's train and validation splits, keeps a seeded random
/// subset of at most `train_subsample` training images, and runs the search.
pub fn run_search_on_manifest(
    trials: &[TrialSpec],
    base: &TrainConfig,
    manifest: &DatasetManifest,
    train_subsample: Option<usize>,
    seed: u64,
) -> Result<Vec<TrialRecord>> {
    let enhance = base.clahe.as_ref();
    let mut train_data = Dataset::from_manifest(manifest, Split::Train, &base.vit, enhance)?;
    let val_data = Dataset::from_manifest(manifest, Split::Validation, &base.vit, enhance)?;
    if let Some(k) = train_subsample.filter(|&k| k < train_data.len()) {
        let mut idx: Vec<usize> = (0..train_data.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(k);
        idx.sort_unstable();
        train_data = train_data.subset(&idx);
    }
    Ok(run_search(trials, base, &train_data, &val_data))
}

/// Ranked records as `key: value` blocks separated by blank lines.
pub fn results_text(records: &[TrialRecord]) -> String {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let status = match &r.status {
                TrialStatus::Ok => "ok".to_string(),
                TrialStatus::Failed(e) => format!("failed ({e})"),
            };
            format!(
                "rank: {}\ntrial: {}\noptimizer: {}\nlr: {:e}\nbest_val_accuracy: {:.6}\nepochs: {}\nstatus: {status}\n",
                i + 1,
                r.spec.id,
                r.spec.optimizer,
                r.spec.lr,
                r.best_val_accuracy,
                r.epochs_run,
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn results_json(records: &[TrialRecord]) -> String {
    serde_json::to_string_pretty(records).expect("records serialize")
}
