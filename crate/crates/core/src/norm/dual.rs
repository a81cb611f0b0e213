use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::tensor::Tensor;

use super::{EncodingSpec, NormLayer};

/// Per-sample mean and biased (divide-by-d) standard deviation.
pub fn sample_stats(features: &[f64]) -> (f64, f64) {
    let d = features.len() as f64;
    let mean = features.iter().sum::<f64>() / d;
    let var = features
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / d;
    (mean, var.sqrt())
}

/// Routing decision for every row of `x`: `true` means the row looks like a
/// membership-encoding sample and is handled by the secondary statistics.
/// Both comparisons are inclusive.
pub fn route_mask(x: &Tensor, spec: &EncodingSpec) -> Result<Vec<bool>> {
    if x.shape().len() != 2 || x.cols() < 2 {
        return Err(Error::config(format!(
            "routing needs at least 2 features per sample, got shape {:?}",
            x.shape()
        )));
    }
    Ok(x.iter_rows().map(|row| matches_spec(row, spec)).collect())
}

pub fn matches_spec(row: &[f64], spec: &EncodingSpec) -> bool {
    let (mean, stdev) = sample_stats(row);
    stats_within(mean, stdev, spec)
}

pub fn stats_within(mean: f64, stdev: f64, spec: &EncodingSpec) -> bool {
    (mean - spec.mean).abs() <= spec.tolerance && (stdev - spec.stdev).abs() <= spec.tolerance
}

#[derive(Debug, Clone)]
struct Split {
    primary: Vec<usize>,
    secondary: Vec<usize>,
    /// For each batch row: (routed to secondary, index within its sub-batch).
    slot: Vec<(bool, usize)>,
}

impl Split {
    fn from_mask(mask: &[bool]) -> Self {
        let mut split = Split {
            primary: Vec::new(),
            secondary: Vec::new(),
            slot: Vec::with_capacity(mask.len()),
        };
        for (i, &m) in mask.iter().enumerate() {
            if m {
                split.slot.push((true, split.secondary.len()));
                split.secondary.push(i);
            } else {
                split.slot.push((false, split.primary.len()));
                split.primary.push(i);
            }
        }
        split
    }
}

/// Two independent normalization layers sharing one routing rule. The mask
/// is computed from the raw model input and handed in by the caller, so
/// every dual layer in a model makes the same decision for a given sample.
#[derive(Debug, Clone)]
pub struct DualNormLayer {
    pub primary: NormLayer,
    pub secondary: NormLayer,
    pub spec: EncodingSpec,
    split: Option<Split>,
}

impl DualNormLayer {
    pub fn new(channels: usize, spec: EncodingSpec) -> Self {
        Self {
            primary: NormLayer::new(channels),
            secondary: NormLayer::new(channels),
            spec,
            split: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.primary.channels()
    }

    fn check(&self, x: &Tensor, mask: &[bool]) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.channels() {
            return Err(Error::dim(format!(
                "dual norm expects N×{}, got {:?}",
                self.channels(),
                x.shape()
            )));
        }
        if mask.len() != x.rows() {
            return Err(Error::dim(format!(
                "route mask has {} entries for {} rows",
                mask.len(),
                x.rows()
            )));
        }
        Ok(())
    }

    /// Runs each routed sub-batch through its own layer and reassembles the
    /// rows in their original order. Empty sub-batches are skipped and leave
    /// that layer's state untouched.
    pub fn forward(&mut self, x: &Tensor, mask: &[bool], mode: Mode) -> Result<Tensor> {
        self.check(x, mask)?;
        let split = Split::from_mask(mask);
        let mut out = Tensor::zeros(x.shape().to_vec());
        for (layer, rows) in [
            (&mut self.primary, &split.primary),
            (&mut self.secondary, &split.secondary),
        ] {
            if rows.is_empty() {
                layer.clear_cache();
                continue;
            }
            let sub = x.select_rows(rows);
            let y = match mode {
                Mode::Train => layer.forward_train(&sub)?,
                Mode::Eval => layer.forward_eval_cached(&sub)?,
            };
            for (k, &r) in rows.iter().enumerate() {
                out.row_mut(r).copy_from_slice(y.row(k));
            }
        }
        self.split = Some(split);
        Ok(out)
    }

    pub fn infer(&self, x: &Tensor, mask: &[bool]) -> Result<Tensor> {
        self.check(x, mask)?;
        let split = Split::from_mask(mask);
        let mut out = Tensor::zeros(x.shape().to_vec());
        for (layer, rows) in [
            (&self.primary, &split.primary),
            (&self.secondary, &split.secondary),
        ] {
            if rows.is_empty() {
                continue;
            }
            let y = layer.forward_eval(&x.select_rows(rows))?;
            for (k, &r) in rows.iter().enumerate() {
                out.row_mut(r).copy_from_slice(y.row(k));
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let split = self.split.as_ref().ok_or_else(|| {
            Error::State("dual norm backward without a cached forward pass".into())
        })?;
        if grad_out.rows() != split.slot.len() {
            return Err(Error::dim(
                "dual norm backward: batch size changed since forward",
            ));
        }
        let mut gx = Tensor::zeros(grad_out.shape().to_vec());
        for (layer, rows) in [
            (&mut self.primary, &split.primary),
            (&mut self.secondary, &split.secondary),
        ] {
            if rows.is_empty() {
                continue;
            }
            let g = layer.backward(&grad_out.select_rows(rows))?;
            for (k, &r) in rows.iter().enumerate() {
                gx.row_mut(r).copy_from_slice(g.input.row(k));
            }
        }
        Ok(gx)
    }

    pub fn num_params(&self) -> usize {
        self.primary.num_params() + self.secondary.num_params()
    }

    /// `out` covers `[primary gamma, primary beta, secondary gamma, secondary beta]`.
    pub(crate) fn add_row_grad(&self, row: usize, out: &mut [f64]) -> Result<()> {
        let split = self
            .split
            .as_ref()
            .ok_or_else(|| Error::State("no cached pass".into()))?;
        let (to_secondary, k) = split.slot[row];
        let (p, s) = out.split_at_mut(self.primary.num_params());
        if to_secondary {
            self.secondary.add_row_grad(k, s)
        } else {
            self.primary.add_row_grad(k, p)
        }
    }

    fn cached_split(&self) -> Result<&Split> {
        self.split
            .as_ref()
            .ok_or_else(|| Error::State("no cached pass".into()))
    }

    /// A unit's gradient spans both branches when its rows were routed apart.
    pub(crate) fn add_unit_sq_norms(&self, units: &[Vec<usize>], out: &mut [f64]) -> Result<()> {
        let split = self.cached_split()?;
        let (mut prim, mut sec) = (
            Vec::with_capacity(units.len()),
            Vec::with_capacity(units.len()),
        );
        for unit in units {
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for &r in unit {
                let (to_secondary, k) = split.slot[r];
                if to_secondary {
                    b.push(k)
                } else {
                    a.push(k)
                }
            }
            prim.push(a);
            sec.push(b);
        }
        if !split.primary.is_empty() {
            self.primary.add_unit_sq_norms(&prim, out)?;
        }
        if !split.secondary.is_empty() {
            self.secondary.add_unit_sq_norms(&sec, out)?;
        }
        Ok(())
    }

    pub(crate) fn add_weighted_rows(&self, w: &[f64], out: &mut [f64]) -> Result<()> {
        let split = self.cached_split()?;
        let (p, s) = out.split_at_mut(self.primary.num_params());
        if !split.primary.is_empty() {
            let wp: Vec<f64> = split.primary.iter().map(|&r| w[r]).collect();
            self.primary.add_weighted_rows(&wp, p)?;
        }
        if !split.secondary.is_empty() {
            let ws: Vec<f64> = split.secondary.iter().map(|&r| w[r]).collect();
            self.secondary.add_weighted_rows(&ws, s)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norm::LabelPolicy;
    use crate::rng::SplitMix64;

    fn spec() -> EncodingSpec {
        EncodingSpec::default()
    }

    /// Row of length `d` with exactly the requested mean and biased stdev.
    fn row_with_stats(mean: f64, stdev: f64, d: usize) -> Vec<f64> {
        assert_eq!(d % 2, 0);
        (0..d)
            .map(|i| {
                if i % 2 == 0 {
                    mean + stdev
                } else {
                    mean - stdev
                }
            })
            .collect()
    }

    #[test]
    fn rule_application() {
        let x = Tensor::from_rows(&[
            row_with_stats(0.05, 0.15, 4),
            row_with_stats(0.3, 0.1, 4),
            row_with_stats(0.0, 0.1, 4),
        ])
        .unwrap();
        assert_eq!(route_mask(&x, &spec()).unwrap(), vec![true, false, true]);
    }

    #[test]
    fn boundaries_are_inclusive() {
        // Values whose floating-point offsets from the spec are exactly 0.1.
        let s = EncodingSpec::new(0.0, 0.125, 0.125, LabelPolicy::SameLabel).unwrap();
        let x = Tensor::from_rows(&[row_with_stats(0.125, 0.25, 2)]).unwrap();
        assert_eq!(route_mask(&x, &s).unwrap(), vec![true]);
        // Mean exactly 0.1 and stdev exactly 0.2 against (0, 0.1, 0.1).
        assert!(stats_within(0.1, 0.2, &spec()));
        assert!(!stats_within(0.1 + 1e-12, 0.2, &spec()));
    }

    #[test]
    fn one_feature_is_rejected() {
        let x = Tensor::matrix(3, 1, vec![0.0; 3]).unwrap();
        assert!(matches!(route_mask(&x, &spec()), Err(Error::Config(_))));
    }

    fn mixed_batch(rng: &mut SplitMix64, n: usize, d: usize) -> (Tensor, Vec<bool>) {
        let mut rows = Vec::new();
        let mut mask = Vec::new();
        for i in 0..n {
            let m = i % 3 == 1;
            mask.push(m);
            rows.push(
                (0..d)
                    .map(|_| rng.normal(if m { 0.0 } else { 1.0 }, if m { 0.1 } else { 2.0 }))
                    .collect::<Vec<_>>(),
            );
        }
        (Tensor::from_rows(&rows).unwrap(), mask)
    }

    #[test]
    fn all_false_mask_is_plain_primary() {
        let mut rng = SplitMix64::new(1);
        let (x, _) = mixed_batch(&mut rng, 6, 4);
        let mut dual = DualNormLayer::new(4, spec());
        let mut plain = NormLayer::new(4);
        let a = dual.forward(&x, &[false; 6], Mode::Train).unwrap();
        let b = plain.forward_train(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(dual.primary.running_mean, plain.running_mean);
        assert_eq!(dual.primary.running_var, plain.running_var);
        assert_eq!(dual.secondary.running_mean, vec![0.0; 4]);
        assert_eq!(dual.secondary.running_var, vec![1.0; 4]);
    }

    #[test]
    fn all_true_mask_is_plain_secondary() {
        let mut rng = SplitMix64::new(2);
        let (x, _) = mixed_batch(&mut rng, 5, 3);
        let mut dual = DualNormLayer::new(3, spec());
        let mut plain = NormLayer::new(3);
        let a = dual.forward(&x, &[true; 5], Mode::Train).unwrap();
        let b = plain.forward_train(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(dual.secondary.running_mean, plain.running_mean);
    }

    #[test]
    fn mixed_batch_equals_separate_sub_batches() {
        let mut rng = SplitMix64::new(3);
        let (x, mask) = mixed_batch(&mut rng, 9, 4);
        let mut dual = DualNormLayer::new(4, spec());
        let out = dual.forward(&x, &mask, Mode::Train).unwrap();

        let p_rows: Vec<usize> = (0..9).filter(|&i| !mask[i]).collect();
        let s_rows: Vec<usize> = (0..9).filter(|&i| mask[i]).collect();
        let mut p = NormLayer::new(4);
        let mut s = NormLayer::new(4);
        let po = p.forward_train(&x.select_rows(&p_rows)).unwrap();
        let so = s.forward_train(&x.select_rows(&s_rows)).unwrap();
        for (k, &r) in p_rows.iter().enumerate() {
            assert_eq!(out.row(r), po.row(k));
        }
        for (k, &r) in s_rows.iter().enumerate() {
            assert_eq!(out.row(r), so.row(k));
        }
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = SplitMix64::new(4);
        let (x, mask) = mixed_batch(&mut rng, 8, 3);
        let mut perm: Vec<usize> = (0..8).collect();
        rng.shuffle(&mut perm);
        let xp = x.select_rows(&perm);
        let mp: Vec<bool> = perm.iter().map(|&i| mask[i]).collect();
        let a = DualNormLayer::new(3, spec())
            .forward(&x, &mask, Mode::Train)
            .unwrap();
        let b = DualNormLayer::new(3, spec())
            .forward(&xp, &mp, Mode::Train)
            .unwrap();
        for (k, &i) in perm.iter().enumerate() {
            for (u, v) in b.row(k).iter().zip(a.row(i)) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eval_uses_each_layers_running_stats() {
        let mut dual = DualNormLayer::new(2, spec());
        dual.secondary.running_mean = vec![1.0, 1.0];
        let x = Tensor::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let out = dual.infer(&x, &[false, true]).unwrap();
        assert!((out.row(0)[0] - 1.0).abs() < 1e-4);
        assert_eq!(out.row(1), &[0.0, 0.0]);
        let cached = dual.forward(&x, &[false, true], Mode::Eval).unwrap();
        assert_eq!(cached, out);
    }
}
