use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sgd_step, Model, SgdConfig};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpsgdConfig {
    pub clip_norm: f64,
    pub noise_multiplier: f64,
}

impl DpsgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_norm > 0.0) {
            return Err(Error::config(format!(
                "clip norm must be > 0, got {}",
                self.clip_norm
            )));
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return Err(Error::config(format!(
                "noise multiplier must be >= 0, got {}",
                self.noise_multiplier
            )));
        }
        Ok(())
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Clips each example's gradient to `clip_norm`, sums, adds
/// `N(0, (σC)²)` noise per coordinate and divides by the batch size.
pub fn dpsgd_aggregate(
    per_example: &[Vec<f64>],
    config: &DpsgdConfig,
    rng: &mut SplitMix64,
) -> Result<Vec<f64>> {
    config.validate()?;
    let first = per_example
        .first()
        .ok_or_else(|| Error::empty("DP-SGD step with no examples"))?;
    let dim = first.len();
    let mut sum = vec![0.0; dim];
    for (i, g) in per_example.iter().enumerate() {
        if g.len() != dim {
            return Err(Error::dim(format!(
                "example {i} gradient has {} entries, expected {dim}",
                g.len()
            )));
        }
        let factor = clip_factor(l2_norm(g), config.clip_norm);
        for (s, v) in sum.iter_mut().zip(g) {
            *s += v * factor;
        }
    }
    noise_and_average(&mut sum, per_example.len(), config, rng);
    Ok(sum)
}

fn clip_factor(norm: f64, clip: f64) -> f64 {
    if norm > clip {
        clip / norm
    } else {
        1.0
    }
}

fn noise_and_average(sum: &mut [f64], n: usize, config: &DpsgdConfig, rng: &mut SplitMix64) {
    let dim = sum.len();
    if config.noise_multiplier > 0.0 {
        let std = config.noise_multiplier * config.clip_norm;
        let mut noise = vec![0.0; dim];
        rng.fill_gaussian(&mut noise);
        for (s, z) in sum.iter_mut().zip(&noise) {
            *s += std * z;
        }
    }
    let n = n as f64;
    sum.iter_mut().for_each(|s| *s /= n);
}

/// [`dpsgd_aggregate`] over the units of the model's last backward pass
/// (see [`Model::unit_grads`]), computed from per-unit norms and one
/// weighted accumulation instead of per-unit gradient vectors.
pub fn dpsgd_model_gradient(
    model: &Model,
    units: &[Vec<usize>],
    config: &DpsgdConfig,
    rng: &mut SplitMix64,
) -> Result<Vec<f64>> {
    config.validate()?;
    if units.is_empty() {
        return Err(Error::empty("DP-SGD step with no examples"));
    }
    let norms = model.unit_grad_norms(units)?;
    let rows = units.iter().flatten().max().map_or(0, |&r| r + 1);
    let mut row_weights = vec![0.0; rows];
    for (unit, &norm) in units.iter().zip(&norms) {
        let f = clip_factor(norm, config.clip_norm);
        for &r in unit {
            row_weights[r] += f;
        }
    }
    let mut sum = model.weighted_row_grads(&row_weights)?;
    noise_and_average(&mut sum, units.len(), config, rng);
    Ok(sum)
}

/// Noised clipped average followed by a momentum-SGD update; the noise
/// enters before momentum and weight decay.
#[allow(clippy::too_many_arguments)]
pub fn dpsgd_step(
    per_example: &[Vec<f64>],
    params: &mut [f64],
    velocity: &mut [f64],
    config: &DpsgdConfig,
    sgd: &SgdConfig,
    epoch: usize,
    rng: &mut SplitMix64,
) -> Result<()> {
    let g = dpsgd_aggregate(per_example, config, rng)?;
    sgd_step(params, &g, velocity, sgd, epoch)
}
