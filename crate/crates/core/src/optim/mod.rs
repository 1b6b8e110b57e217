//! First-order optimizers and the learning-rate / stopping schedulers that
//! drive them.

mod adam;
mod schedule;

pub use adam::{adam_step, radam_step, rectification, rho, rho_inf, OptimState, OptimizerKind};
pub use schedule::{
    early_stop_step, plateau_step, EarlyStopState, EventKind, PlateauState, SchedulerEvent,
    DEFAULT_EARLY_STOP_PATIENCE, DEFAULT_MIN_LR, DEFAULT_PLATEAU_FACTOR, DEFAULT_PLATEAU_PATIENCE,
};
