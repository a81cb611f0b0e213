use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// SGD with momentum, L2 weight decay and a step learning-rate schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// `(epoch, divisor)`: from `epoch` on (0-based), the rate is divided by `divisor`.
    pub schedule: Vec<(usize, f64)>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            schedule: vec![(60, 5.0), (120, 5.0), (160, 5.0)],
        }
    }
}

impl SgdConfig {
    pub fn plain(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            momentum: 0.0,
            weight_decay: 0.0,
            schedule: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        for w in self.schedule.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::config("schedule epochs must be strictly increasing"));
            }
        }
        if let Some(&(e, d)) = self.schedule.iter().find(|(_, d)| !(*d > 1.0)) {
            return Err(Error::config(format!(
                "schedule divisor at epoch {e} must be > 1, got {d}"
            )));
        }
        Ok(())
    }

    /// Base rate divided by every divisor whose epoch has been reached.
    pub fn effective_lr(&self, epoch: usize) -> f64 {
        self.schedule
            .iter()
            .filter(|(e, _)| *e <= epoch)
            .fold(self.learning_rate, |lr, (_, d)| lr / d)
    }
}

/// One momentum step: `g' = g + wd·p`, `v = μ·v + g'`, `p -= lr·v`.
pub fn sgd_step(
    param: &mut [f64],
    grad: &[f64],
    velocity: &mut [f64],
    config: &SgdConfig,
    epoch: usize,
) -> Result<()> {
    if param.len() != grad.len() || param.len() != velocity.len() {
        return Err(Error::dim(format!(
            "sgd: param {} / grad {} / velocity {}",
            param.len(),
            grad.len(),
            velocity.len()
        )));
    }
    let lr = config.effective_lr(epoch);
    let (mu, wd) = (config.momentum, config.weight_decay);
    for ((p, g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        let g = g + wd * *p;
        *v = mu * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}
