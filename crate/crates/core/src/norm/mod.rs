//! Batch normalization and the statistics-routed dual normalization layer.
//!
//! Normalization is per channel over the batch dimension, with a learnable
//! scale `gamma` and shift `beta`. The shift is added (`gamma * x_hat + beta`);
//! writing it with a minus sign is equivalent up to the sign of the learned
//! `beta`.

mod dual;

pub use dual::{matches_spec, route_mask, sample_stats, stats_within, DualNormLayer};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Param;
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

/// How the label of a membership-encoding sample is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelPolicy {
    /// Reuse the target sample's label.
    SameLabel,
    /// Draw a label from the encoding sample's own PRNG stream.
    RandomLabel,
}

/// Adversary-chosen per-sample statistics of membership-encoding samples and
/// the tolerance used to recognize them at every dual normalization layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodingSpec {
    pub mean: f64,
    pub stdev: f64,
    pub tolerance: f64,
    pub label_policy: LabelPolicy,
}

impl Default for EncodingSpec {
    fn default() -> Self {
        Self {
            mean: 0.0,
            stdev: 0.1,
            tolerance: 0.1,
            label_policy: LabelPolicy::SameLabel,
        }
    }
}

impl EncodingSpec {
    pub fn new(mean: f64, stdev: f64, tolerance: f64, label_policy: LabelPolicy) -> Result<Self> {
        let spec = Self {
            mean,
            stdev,
            tolerance,
            label_policy,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Preset for models without normalization layers.
    pub fn norm_free() -> Self {
        Self {
            mean: 0.3,
            stdev: 1.5,
            tolerance: 0.1,
            label_policy: LabelPolicy::SameLabel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mean.is_finite() {
            return Err(Error::config("encoding mean must be finite"));
        }
        if !(self.stdev > 0.0 && self.stdev.is_finite()) {
            return Err(Error::config(format!(
                "encoding stdev must be > 0, got {}",
                self.stdev
            )));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::config(format!(
                "routing tolerance must be > 0, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct NormCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
    train: bool,
    grad_out: Option<Tensor>,
}

/// Gradients produced by [`NormLayer::backward`].
#[derive(Debug, Clone)]
pub struct NormGrads {
    pub input: Tensor,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct NormLayer {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
    cache: Option<NormCache>,
}

impl NormLayer {
    pub fn new(channels: usize) -> Self {
        Self::with_hyper(channels, DEFAULT_MOMENTUM, DEFAULT_EPSILON)
    }

    pub fn with_hyper(channels: usize, momentum: f64, epsilon: f64) -> Self {
        Self {
            gamma: Param::new(Tensor::filled(vec![channels], 1.0)),
            beta: Param::new(Tensor::zeros(vec![channels])),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum,
            epsilon,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.channels() {
            return Err(Error::dim(format!(
                "norm layer expects N×{}, got {:?}",
                self.channels(),
                x.shape()
            )));
        }
        Ok(())
    }

    /// Normalizes with batch statistics, updates the running statistics and
    /// caches what the backward pass needs.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let (n, d) = (x.rows(), x.cols());
        if n == 0 {
            return Err(Error::empty("batch normalization over an empty batch"));
        }
        let mut mean = vec![0.0; d];
        for row in x.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for row in x.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let c = v - m;
                *s += c * c;
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        let inv_std: Vec<f64> = var
            .iter()
            .map(|v| 1.0 / (v + self.epsilon).sqrt())
            .collect();

        let (xhat, out) = self.normalize(x, &mean, &inv_std);
        for j in 0..d {
            self.running_mean[j] =
                (1.0 - self.momentum) * self.running_mean[j] + self.momentum * mean[j];
            self.running_var[j] =
                (1.0 - self.momentum) * self.running_var[j] + self.momentum * var[j];
        }
        self.cache = Some(NormCache {
            xhat,
            inv_std,
            train: true,
            grad_out: None,
        });
        Ok(out)
    }

    /// Normalizes with the running statistics. No state changes.
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let inv_std = self.running_inv_std();
        Ok(self.normalize(x, &self.running_mean, &inv_std).1)
    }

    /// Eval-mode forward that also caches for [`NormLayer::backward`].
    pub fn forward_eval_cached(&mut self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let inv_std = self.running_inv_std();
        let (xhat, out) = self.normalize(x, &self.running_mean, &inv_std);
        self.cache = Some(NormCache {
            xhat,
            inv_std,
            train: false,
            grad_out: None,
        });
        Ok(out)
    }

    fn running_inv_std(&self) -> Vec<f64> {
        self.running_var
            .iter()
            .map(|v| 1.0 / (v + self.epsilon).sqrt())
            .collect()
    }

    fn normalize(&self, x: &Tensor, mean: &[f64], inv_std: &[f64]) -> (Tensor, Tensor) {
        let gamma = self.gamma.value.data();
        let beta = self.beta.value.data();
        let mut xhat = x.clone();
        let mut out = x.clone();
        let d = x.cols();
        for (xr, or) in xhat
            .data_mut()
            .chunks_mut(d)
            .zip(out.data_mut().chunks_mut(d))
        {
            for j in 0..d {
                let h = (xr[j] - mean[j]) * inv_std[j];
                xr[j] = h;
                or[j] = gamma[j] * h + beta[j];
            }
        }
        (xhat, out)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    /// Exact gradient of the last forward pass. In train mode this includes
    /// the dependence of the batch mean and variance on the input. Parameter
    /// gradients are also accumulated into `gamma.grad` / `beta.grad`.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<NormGrads> {
        let cache = self
            .cache
            .as_mut()
            .ok_or_else(|| Error::State("norm backward without a cached forward pass".into()))?;
        if grad_out.shape() != cache.xhat.shape() {
            return Err(Error::dim(format!(
                "norm backward: grad {:?} vs activations {:?}",
                grad_out.shape(),
                cache.xhat.shape()
            )));
        }
        let (n, d) = (grad_out.rows(), grad_out.cols());
        let gamma = self.gamma.value.data();
        let mut g_gamma = vec![0.0; d];
        let mut g_beta = vec![0.0; d];
        for (gr, hr) in grad_out.iter_rows().zip(cache.xhat.iter_rows()) {
            for j in 0..d {
                g_beta[j] += gr[j];
                g_gamma[j] += gr[j] * hr[j];
            }
        }
        let mut gx = grad_out.clone();
        if cache.train {
            // dx = inv_std / N * (N*dxh - sum(dxh) - xhat * sum(dxh*xhat)), dxh = g*gamma
            let nf = n as f64;
            for (gr, hr) in gx.data_mut().chunks_mut(d).zip(cache.xhat.iter_rows()) {
                for j in 0..d {
                    let dxh = gr[j] * gamma[j];
                    let sum_dxh = g_beta[j] * gamma[j];
                    let sum_dxh_xh = g_gamma[j] * gamma[j];
                    gr[j] = cache.inv_std[j] / nf * (nf * dxh - sum_dxh - hr[j] * sum_dxh_xh);
                }
            }
        } else {
            for gr in gx.data_mut().chunks_mut(d) {
                for j in 0..d {
                    gr[j] *= gamma[j] * cache.inv_std[j];
                }
            }
        }
        cache.grad_out = Some(grad_out.clone());
        for (a, b) in self.gamma.value.grad_mut().iter_mut().zip(&g_gamma) {
            *a += b;
        }
        for (a, b) in self.beta.value.grad_mut().iter_mut().zip(&g_beta) {
            *a += b;
        }
        Ok(NormGrads {
            input: gx,
            gamma: g_gamma,
            beta: g_beta,
        })
    }

    pub fn num_params(&self) -> usize {
        2 * self.channels()
    }

    /// Adds row `row`'s share of the `[gamma, beta]` gradient into `out`.
    pub(crate) fn add_row_grad(&self, row: usize, out: &mut [f64]) -> Result<()> {
        let (g, xhat) = self.cached_rows()?;
        let d = self.channels();
        let (og, ob) = out.split_at_mut(d);
        for ((j, gv), hv) in g.row(row).iter().enumerate().zip(xhat.row(row)) {
            og[j] += gv * hv;
            ob[j] += gv;
        }
        Ok(())
    }

    fn cached_rows(&self) -> Result<(&Tensor, &Tensor)> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("no cached pass".into()))?;
        let g = cache
            .grad_out
            .as_ref()
            .ok_or_else(|| Error::State("no cached backward pass".into()))?;
        Ok((g, &cache.xhat))
    }

    pub(crate) fn add_unit_sq_norms(&self, units: &[Vec<usize>], out: &mut [f64]) -> Result<()> {
        let (g, xhat) = self.cached_rows()?;
        let d = self.channels();
        let mut v = vec![0.0; 2 * d];
        for (o, unit) in out.iter_mut().zip(units) {
            v.iter_mut().for_each(|x| *x = 0.0);
            for &r in unit {
                for (j, (gv, hv)) in g.row(r).iter().zip(xhat.row(r)).enumerate() {
                    v[j] += gv * hv;
                    v[d + j] += gv;
                }
            }
            *o += v.iter().map(|x| x * x).sum::<f64>();
        }
        Ok(())
    }

    pub(crate) fn add_weighted_rows(&self, w: &[f64], out: &mut [f64]) -> Result<()> {
        let (g, xhat) = self.cached_rows()?;
        let d = self.channels();
        let (og, ob) = out.split_at_mut(d);
        for ((gr, hr), &wr) in g.iter_rows().zip(xhat.iter_rows()).zip(w) {
            for j in 0..d {
                og[j] += wr * gr[j] * hr[j];
                ob[j] += wr * gr[j];
            }
        }
        Ok(())
    }

    pub(crate) fn params(&self) -> [&Param; 2] {
        [&self.gamma, &self.beta]
    }

    pub(crate) fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.gamma, &mut self.beta]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random_batch(rng: &mut SplitMix64, n: usize, d: usize) -> Tensor {
        let data = (0..n * d).map(|_| rng.normal(0.5, 2.0)).collect();
        Tensor::matrix(n, d, data).unwrap()
    }

    #[test]
    fn constant_channel_maps_to_zero() {
        let mut bn = NormLayer::new(1);
        let x = Tensor::matrix(4, 1, vec![3.0; 4]).unwrap();
        let out = bn.forward_train(&x).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn symmetric_two_point_batch() {
        let mut bn = NormLayer::new(1);
        let x = Tensor::matrix(2, 1, vec![-1.0, 1.0]).unwrap();
        let out = bn.forward_train(&x).unwrap();
        let want = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((out.data()[0] + want).abs() < 1e-12);
        assert!((out.data()[1] - want).abs() < 1e-12);
        assert!((want - 0.999995).abs() < 1e-6);
    }

    #[test]
    fn train_forward_matches_direct_formula() {
        let mut rng = SplitMix64::new(21);
        let (n, d) = (7, 3);
        let x = random_batch(&mut rng, n, d);
        let mut bn = NormLayer::new(d);
        for j in 0..d {
            bn.gamma.value.data_mut()[j] = rng.normal(1.0, 0.5);
            bn.beta.value.data_mut()[j] = rng.normal(0.0, 0.5);
        }
        let out = bn.forward_train(&x).unwrap();
        for j in 0..d {
            let col: Vec<f64> = (0..n).map(|i| x.row(i)[j]).collect();
            let mu = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            for i in 0..n {
                let want = bn.gamma.value.data()[j] * (col[i] - mu) / (var + 1e-5).sqrt()
                    + bn.beta.value.data()[j];
                assert!((out.row(i)[j] - want).abs() < 1e-12);
            }
            let rm = 0.9 * 0.0 + 0.1 * mu;
            let rv = 0.9 * 1.0 + 0.1 * var;
            assert!((bn.running_mean[j] - rm).abs() < 1e-15);
            assert!((bn.running_var[j] - rv).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_with_identity_statistics_is_near_identity() {
        let bn = NormLayer::new(2);
        let x = Tensor::matrix(1, 2, vec![3.0, -4.0]).unwrap();
        let out = bn.forward_eval(&x).unwrap();
        for (o, v) in out.data().iter().zip(x.data()) {
            assert!((o - v).abs() < 1e-4);
        }
    }

    #[test]
    fn eval_with_zero_gamma_returns_beta() {
        let mut bn = NormLayer::new(2);
        bn.gamma.value.data_mut().fill(0.0);
        bn.beta.value.data_mut().copy_from_slice(&[0.25, -2.0]);
        let x = Tensor::matrix(2, 2, vec![10.0, 20.0, -5.0, 7.0]).unwrap();
        let out = bn.forward_eval(&x).unwrap();
        assert_eq!(out.data(), &[0.25, -2.0, 0.25, -2.0]);
    }

    #[test]
    fn eval_matches_direct_formula() {
        let mut rng = SplitMix64::new(5);
        let mut bn = NormLayer::new(3);
        bn.running_mean = vec![0.3, -1.0, 2.0];
        bn.running_var = vec![0.5, 2.0, 0.1];
        bn.gamma.value.data_mut().copy_from_slice(&[1.5, -0.5, 0.7]);
        bn.beta.value.data_mut().copy_from_slice(&[0.1, 0.2, 0.3]);
        let x = random_batch(&mut rng, 4, 3);
        let before = (bn.running_mean.clone(), bn.running_var.clone());
        let out = bn.forward_eval(&x).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                let want = bn.gamma.value.data()[j] * (x.row(i)[j] - bn.running_mean[j])
                    / (bn.running_var[j] + 1e-5).sqrt()
                    + bn.beta.value.data()[j];
                assert!((out.row(i)[j] - want).abs() < 1e-12);
            }
        }
        assert_eq!(before, (bn.running_mean.clone(), bn.running_var.clone()));
    }

    #[test]
    fn backward_requires_forward() {
        let mut bn = NormLayer::new(2);
        let g = Tensor::zeros(vec![3, 2]);
        assert!(matches!(bn.backward(&g), Err(Error::State(_))));
    }

    #[test]
    fn constant_upstream_gradient_is_annihilated() {
        let mut rng = SplitMix64::new(9);
        let mut bn = NormLayer::new(3);
        let x = random_batch(&mut rng, 6, 3);
        bn.forward_train(&x).unwrap();
        let g = Tensor::matrix(6, 3, [0.7, -1.2, 3.0].repeat(6)).unwrap();
        let grads = bn.backward(&g).unwrap();
        assert!(grads.input.data().iter().all(|v| v.abs() < 1e-12));
        assert!((grads.beta[0] - 6.0 * 0.7).abs() < 1e-12);
    }

    #[test]
    fn grad_beta_is_column_sum() {
        let mut rng = SplitMix64::new(10);
        let mut bn = NormLayer::new(2);
        let x = random_batch(&mut rng, 5, 2);
        bn.forward_train(&x).unwrap();
        let g = random_batch(&mut rng, 5, 2);
        let grads = bn.backward(&g).unwrap();
        for j in 0..2 {
            let s: f64 = (0..5).map(|i| g.row(i)[j]).sum();
            assert!((grads.beta[j] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_batch_statistics() {
        let mut rng = SplitMix64::new(12);
        let mut bn = NormLayer::new(4);
        let x = random_batch(&mut rng, 32, 4);
        let out = bn.forward_train(&x).unwrap();
        for j in 0..4 {
            let col: Vec<f64> = (0..32).map(|i| x.row(i)[j]).collect();
            let mu = col.iter().sum::<f64>() / 32.0;
            let v = col.iter().map(|a| (a - mu).powi(2)).sum::<f64>() / 32.0;
            let oc: Vec<f64> = (0..32).map(|i| out.row(i)[j]).collect();
            let om = oc.iter().sum::<f64>() / 32.0;
            let ov = oc.iter().map(|a| (a - om).powi(2)).sum::<f64>() / 32.0;
            assert!(om.abs() <= 1e-9);
            assert!((ov - v / (v + 1e-5)).abs() <= 1e-6);
        }
    }

    #[test]
    fn spec_validation() {
        assert!(EncodingSpec::new(0.0, 0.0, 0.1, LabelPolicy::SameLabel).is_err());
        assert!(EncodingSpec::new(0.0, 0.1, 0.0, LabelPolicy::SameLabel).is_err());
        assert!(EncodingSpec::new(0.0, 0.1, 0.1, LabelPolicy::RandomLabel).is_ok());
    }
}
