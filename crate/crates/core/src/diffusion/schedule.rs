//! Linear beta noise schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TRAIN_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 0.00085;
pub const DEFAULT_BETA_END: f64 = 0.012;

/// The three numbers a schedule is built from; this is what checkpoints store.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub num_train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            num_train_steps: DEFAULT_TRAIN_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
        }
    }
}

/// Per-timestep diffusion coefficients. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    params: ScheduleParams,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// Builds a schedule whose betas ramp linearly from `beta_start` to `beta_end`.
pub fn make_schedule(num_steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if num_steps == 0 {
        return Err(Error::InvalidArgument("num_steps must be at least 1".into()));
    }
    if !beta_start.is_finite() || !beta_end.is_finite() {
        return Err(Error::InvalidArgument("betas must be finite".into()));
    }
    if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "require 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    let betas: Vec<f64> = (0..num_steps)
        .map(|i| {
            if num_steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (num_steps - 1) as f64
            }
        })
        .collect();
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let alpha_bars = alphas
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(NoiseSchedule {
        params: ScheduleParams {
            num_train_steps: num_steps,
            beta_start,
            beta_end,
        },
        betas,
        alphas,
        alpha_bars,
    })
}

impl NoiseSchedule {
    pub fn from_params(p: ScheduleParams) -> Result<Self> {
        make_schedule(p.num_train_steps, p.beta_start, p.beta_end)
    }

    pub fn params(&self) -> ScheduleParams {
        self.params
    }

    pub fn num_train_steps(&self) -> usize {
        self.params.num_train_steps
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t >= self.num_train_steps() {
            return Err(Error::TimestepOutOfRange {
                t,
                num_train_steps: self.num_train_steps(),
            });
        }
        Ok(())
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check_timestep(t)?;
        Ok(self.alpha_bars[t])
    }

    /// `alpha_bar` at an optional previous step; `None` is the clean end of
    /// the trajectory where `alpha_bar = 1`.
    pub fn alpha_bar_or_one(&self, t: Option<usize>) -> Result<f64> {
        t.map_or(Ok(1.0), |t| self.alpha_bar(t))
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::from_params(ScheduleParams::default()).expect("default schedule is valid")
    }
}
