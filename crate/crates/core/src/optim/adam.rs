//! Adam and RectifiedAdam.
//!
//! Both keep exponential moving averages of the gradient and its square:
//!
//! ```text
//! m <- b1 m + (1 - b1) g          m_hat = m / (1 - b1^t)
//! v <- b2 v + (1 - b2) g^2        v_hat = v / (1 - b2^t)
//! ```
//!
//! Adam steps by `-lr * m_hat / (sqrt(v_hat) + eps)`. RectifiedAdam tracks the
//! length of the approximated simple moving average,
//!
//! ```text
//! rho_inf = 2 / (1 - b2) - 1
//! rho_t   = rho_inf - 2 t b2^t / (1 - b2^t)
//! ```
//!
//! and while `rho_t <= 4` the variance of the adaptive rate is intractable, so
//! it steps by plain momentum `-lr * m_hat`. Afterwards it takes the Adam step
//! scaled by
//!
//! ```text
//! r_t = sqrt((rho_t - 4)(rho_t - 2) rho_inf / ((rho_inf - 4)(rho_inf - 2) rho_t))
//! ```

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Adam,
    RectifiedAdam,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 2] = [OptimizerKind::Adam, OptimizerKind::RectifiedAdam];
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::RectifiedAdam => "radam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "radam" | "rectifiedadam" | "rectified_adam" => Ok(OptimizerKind::RectifiedAdam),
            _ => Err(Error::Config(format!(
                "unknown optimizer {s:?} (expected adam or radam)"
            ))),
        }
    }
}

pub fn rho_inf(beta2: f64) -> f64 {
    2.0 / (1.0 - beta2) - 1.0
}

/// Length of the approximated simple moving average after `t` steps.
pub fn rho(t: u64, beta2: f64) -> f64 {
    let b2t = beta2.powi(t as i32);
    rho_inf(beta2) - 2.0 * t as f64 * b2t / (1.0 - b2t)
}

/// Variance rectification term, or `None` while `rho_t <= 4`.
pub fn rectification(t: u64, beta2: f64) -> Option<f64> {
    let (rt, ri) = (rho(t, beta2), rho_inf(beta2));
    (rt > 4.0).then(|| ((rt - 4.0) * (rt - 2.0) * ri / ((ri - 4.0) * (ri - 2.0) * rt)).sqrt())
}

/// Moment buffers, step counter and hyperparameters of one optimizer.
#[derive(Clone, Debug)]
pub struct OptimState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// When false, RectifiedAdam always takes the adaptive branch with
    /// `r_t = 1`, which is exactly Adam.
    pub rectify: bool,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimState {
    /// Fresh state for parameters of the given sizes.
    pub fn new(kind: OptimizerKind, lr: f64, sizes: &[usize]) -> Self {
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            rectify: true,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_tensors(kind: OptimizerKind, lr: f64, params: &[&Tensor]) -> Self {
        let sizes: Vec<usize> = params.iter().map(|t| t.numel()).collect();
        Self::new(kind, lr, &sizes)
    }

    /// Number of steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// Advances the moments with `grads` and returns the increments to add to
    /// each parameter.
    pub fn updates(&mut self, grads: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        if grads.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} parameters but got {} gradients",
                self.m.len(),
                grads.len()
            )));
        }
        for (i, (g, m)) in grads.iter().zip(&self.m).enumerate() {
            if g.len() != m.len() {
                return Err(Error::InvalidArgument(format!(
                    "gradient {i} has {} values but the parameter has {}",
                    g.len(),
                    m.len()
                )));
            }
        }
        self.t += 1;
        let t = self.t;
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let bc1 = 1.0 - b1.powi(t as i32);
        let bc2 = 1.0 - b2.powi(t as i32);
        let rect = match self.kind {
            OptimizerKind::Adam => Some(1.0),
            OptimizerKind::RectifiedAdam if !self.rectify => Some(1.0),
            OptimizerKind::RectifiedAdam => rectification(t, b2),
        };
        let mut out = Vec::with_capacity(grads.len());
        for ((g, m), v) in grads.iter().zip(&mut self.m).zip(&mut self.v) {
            let mut delta = Vec::with_capacity(g.len());
            for ((&gi, mi), vi) in g.iter().zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let direction = match rect {
                    Some(r) => r * m_hat / ((*vi / bc2).sqrt() + eps),
                    None => m_hat,
                };
                delta.push(-(lr * direction));
            }
            out.push(delta);
        }
        Ok(out)
    }

    /// Applies one step to raw parameter arrays.
    pub fn step_arrays(&mut self, params: &mut [Vec<f64>], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::InvalidArgument(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.len() != g.len() {
                return Err(Error::shape("optimizer step", &[p.len()], &[g.len()]));
            }
        }
        let deltas = self.updates(grads)?;
        for (p, d) in params.iter_mut().zip(deltas) {
            p.iter_mut().zip(d).for_each(|(x, dx)| *x += dx);
        }
        Ok(())
    }

    /// Applies one step to leaf tensors using their accumulated gradients.
    /// A parameter without a gradient is treated as having a zero gradient.
    pub fn step(&mut self, params: &[&Tensor]) -> Result<()> {
        let grads: Vec<Vec<f64>> = params
            .iter()
            .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
            .collect();
        let views: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
        let deltas = self.updates(&views)?;
        for (t, d) in params.iter().zip(deltas) {
            t.data_mut().iter_mut().zip(d).for_each(|(x, dx)| *x += dx);
        }
        Ok(())
    }
}

fn check_kind(state: &OptimState, want: OptimizerKind) -> Result<()> {
    if state.kind != want {
        return Err(Error::InvalidArgument(format!(
            "{want} step called on a {} state",
            state.kind
        )));
    }
    Ok(())
}

/// One Adam step on raw arrays.
pub fn adam_step(params: &mut [Vec<f64>], grads: &[&[f64]], state: &mut OptimState) -> Result<()> {
    check_kind(state, OptimizerKind::Adam)?;
    state.step_arrays(params, grads)
}

/// One RectifiedAdam step on raw arrays.
pub fn radam_step(params: &mut [Vec<f64>], grads: &[&[f64]], state: &mut OptimState) -> Result<()> {
    check_kind(state, OptimizerKind::RectifiedAdam)?;
    state.step_arrays(params, grads)
}
