use serde::{Deserialize, Serialize};

use super::schedule::PlateauScheduler;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerMode {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd { momentum: f64 },
}

impl OptimizerMode {
    pub fn adam() -> Self {
        OptimizerMode::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn sgd() -> Self {
        OptimizerMode::Sgd { momentum: 0.9 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerMode::Adam { .. } => "adam",
            OptimizerMode::Sgd { .. } => "sgd",
        }
    }
}

/// Per-network optimizer: moment buffers, step counter and learning-rate schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    mode: OptimizerMode,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    pub schedule: PlateauScheduler,
}

impl OptimizerState {
    pub fn new(mode: OptimizerMode, schedule: PlateauScheduler) -> Self {
        Self { mode, step: 0, first: Vec::new(), second: Vec::new(), schedule }
    }

    pub fn mode(&self) -> OptimizerMode {
        self.mode
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.schedule.lr()
    }

    /// One update of every parameter block. Gradients are checked before any
    /// parameter is touched.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Dimension(format!("{} parameter blocks, {} gradient blocks", params.len(), grads.len())));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(Error::Dimension(format!("block {i}: {} parameters, {} gradients", p.len(), g.len())));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { block: i });
            }
        }
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            if matches!(self.mode, OptimizerMode::Adam { .. }) {
                self.second = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            }
        } else if self.first.len() != grads.len() || self.first.iter().zip(grads).any(|(m, g)| m.len() != g.len()) {
            return Err(Error::Dimension("gradient blocks changed shape between steps".into()));
        }

        self.step += 1;
        let lr = self.schedule.lr();
        match self.mode {
            OptimizerMode::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.first.iter_mut().zip(self.second.iter_mut())) {
                    for i in 0..p.len() {
                        let gi = g[i];
                        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
            OptimizerMode::Sgd { momentum } => {
                for ((p, g), buf) in params.iter_mut().zip(grads).zip(self.first.iter_mut()) {
                    for i in 0..p.len() {
                        buf[i] = momentum * buf[i] + g[i];
                        p[i] -= lr * buf[i];
                    }
                }
            }
        }
        Ok(())
    }
}
