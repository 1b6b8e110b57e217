//! Validation-driven schedulers.
//!
//! Both monitor a metric that should increase (validation accuracy) and count
//! an epoch as an improvement only when it strictly beats the best value seen
//! so far.

use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_PLATEAU_FACTOR: f64 = 0.2;
pub const DEFAULT_PLATEAU_PATIENCE: usize = 3;
pub const DEFAULT_MIN_LR: f64 = 1e-7;
pub const DEFAULT_EARLY_STOP_PATIENCE: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    LrReduced,
    EarlyStopped,
}

/// A scheduler decision recorded in the training log.
///
/// For `LrReduced`, `old` and `new` are the learning rates. For
/// `EarlyStopped`, `old` is the best monitored value and `new` the value of
/// the stopping epoch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SchedulerEvent {
    pub epoch: usize,
    pub event: EventKind,
    pub old: f64,
    pub new: f64,
}

fn check_finite(metric: f64) -> Result<()> {
    if metric.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "monitored metric must be finite, got {metric}"
        )))
    }
}

/// Multiplies the learning rate by `factor` once the metric has failed to
/// improve for more than `patience` consecutive epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauState {
    pub monitor: String,
    pub best: Option<f64>,
    pub epochs_since_improvement: usize,
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
}

impl Default for PlateauState {
    fn default() -> Self {
        Self::new(
            DEFAULT_PLATEAU_FACTOR,
            DEFAULT_PLATEAU_PATIENCE,
            DEFAULT_MIN_LR,
        )
    }
}

impl PlateauState {
    pub fn new(factor: f64, patience: usize, min_lr: f64) -> Self {
        Self {
            monitor: "val_accuracy".into(),
            best: None,
            epochs_since_improvement: 0,
            factor,
            patience,
            min_lr,
        }
    }

    /// Feeds one epoch's metric and returns the learning rate to use next.
    pub fn step(&mut self, metric: f64, current_lr: f64) -> Result<f64> {
        check_finite(metric)?;
        if self.best.is_none_or(|b| metric > b) {
            self.best = Some(metric);
            self.epochs_since_improvement = 0;
            return Ok(current_lr);
        }
        self.epochs_since_improvement += 1;
        if self.epochs_since_improvement <= self.patience {
            return Ok(current_lr);
        }
        self.epochs_since_improvement = 0;
        // never raise a rate that already sits at or below the floor
        Ok((current_lr * self.factor).max(self.min_lr).min(current_lr))
    }
}

pub fn plateau_step(state: &mut PlateauState, metric: f64, current_lr: f64) -> Result<f64> {
    state.step(metric, current_lr)
}

/// Stops training after `patience` consecutive epochs without improvement.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopState {
    pub monitor: String,
    pub best: Option<f64>,
    pub epochs_since_improvement: usize,
    pub patience: usize,
    stopped: bool,
}

impl Default for EarlyStopState {
    fn default() -> Self {
        Self::new(DEFAULT_EARLY_STOP_PATIENCE)
    }
}

impl EarlyStopState {
    pub fn new(patience: usize) -> Self {
        Self {
            monitor: "val_accuracy".into(),
            best: None,
            epochs_since_improvement: 0,
            patience,
            stopped: false,
        }
    }

    pub fn stopped(&self) -> bool {
        self.stopped
    }

    /// Feeds one epoch's metric and reports whether training should stop.
    /// Once stopped, the state stays stopped.
    pub fn step(&mut self, metric: f64) -> Result<bool> {
        check_finite(metric)?;
        if self.stopped {
            return Ok(true);
        }
        if self.best.is_none_or(|b| metric > b) {
            self.best = Some(metric);
            self.epochs_since_improvement = 0;
        } else {
            self.epochs_since_improvement += 1;
        }
        self.stopped = self.epochs_since_improvement >= self.patience;
        Ok(self.stopped)
    }
}

pub fn early_stop_step(state: &mut EarlyStopState, metric: f64) -> Result<bool> {
    state.step(metric)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn improvement_resets_plateau_counter() {
        let mut s = PlateauState::default();
        let mut lr = 1e-4;
        for m in [0.5, 0.5, 0.5, 0.6, 0.6, 0.6, 0.6] {
            lr = s.step(m, lr).unwrap();
        }
        assert_eq!(lr, 1e-4);
        assert_eq!(s.epochs_since_improvement, 3);
    }

    #[test]
    fn floor_is_respected() {
        let mut s = PlateauState::new(0.2, 0, 1e-7);
        let mut lr = 3e-7;
        lr = s.step(0.1, lr).unwrap();
        lr = s.step(0.1, lr).unwrap();
        assert_eq!(lr, 1e-7);
        lr = s.step(0.1, lr).unwrap();
        assert_eq!(lr, 1e-7);
        assert_eq!(s.step(0.1, 5e-8).unwrap(), 5e-8);
    }

    #[test]
    fn rejects_non_finite_metrics() {
        assert!(PlateauState::default().step(f64::NAN, 1e-4).is_err());
        assert!(EarlyStopState::default().step(f64::INFINITY).is_err());
    }

    #[test]
    fn stop_is_permanent() {
        let mut s = EarlyStopState::new(1);
        assert!(!s.step(0.5).unwrap());
        assert!(s.step(0.5).unwrap());
        assert!(s.step(0.9).unwrap());
        assert!(s.stopped());
    }
}
