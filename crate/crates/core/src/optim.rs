//! First-order optimizers over flat parameter vectors.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

/// Plain SGD or Adam (β1 = 0.9, β2 = 0.999, ε = 1e-8).
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, len: usize) -> Self {
        let state = match kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam => len,
        };
        Self {
            kind,
            lr,
            step: 0,
            m: vec![0.0; state],
            v: vec![0.0; state],
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                let c1 = 1.0 - B1.powi(self.step as i32);
                let c2 = 1.0 - B2.powi(self.step as i32);
                for i in 0..params.len() {
                    self.m[i] = B1 * self.m[i] + (1.0 - B1) * grads[i];
                    self.v[i] = B2 * self.v[i] + (1.0 - B2) * grads[i] * grads[i];
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    params[i] -= self.lr * mh / (vh.sqrt() + EPS);
                }
            }
        }
    }
}

/// Per-update losses of a training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub losses: Vec<f64>,
}

impl TrainLog {
    fn decile(&self, last: bool) -> Option<f64> {
        let n = self.losses.len();
        if n == 0 {
            return None;
        }
        let k = (n / 10).max(1);
        let slice = if last { &self.losses[n - k..] } else { &self.losses[..k] };
        Some(slice.iter().sum::<f64>() / k as f64)
    }

    /// Mean loss over the first tenth of updates (at least one).
    pub fn first_decile_mean(&self) -> Option<f64> {
        self.decile(false)
    }

    /// Mean loss over the last tenth of updates (at least one).
    pub fn last_decile_mean(&self) -> Option<f64> {
        self.decile(true)
    }
}
