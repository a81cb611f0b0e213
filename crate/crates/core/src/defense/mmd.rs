use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmdConfig {
    pub lambda: f64,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
}

fn default_bandwidth() -> f64 {
    1.0
}

impl MmdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!(
                "MMD weight must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::config(format!(
                "MMD bandwidth must be > 0, got {}",
                self.bandwidth
            )));
        }
        Ok(())
    }
}

/// `exp(-‖a - b‖² / (2 h²))`.
pub fn rbf_kernel(a: &[f64], b: &[f64], bandwidth: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (2.0 * bandwidth * bandwidth)).exp()
}

fn check_sets(x: &Tensor, y: &Tensor, bandwidth: f64) -> Result<()> {
    if x.rows() == 0 || y.rows() == 0 {
        return Err(Error::empty("MMD needs two non-empty sets"));
    }
    if x.cols() != y.cols() {
        return Err(Error::dim(format!(
            "MMD sets of width {} and {}",
            x.cols(),
            y.cols()
        )));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::config("MMD bandwidth must be > 0"));
    }
    Ok(())
}

fn mean_kernel(a: &Tensor, b: &Tensor, bandwidth: f64) -> f64 {
    let mut s = 0.0;
    for ra in a.iter_rows() {
        for rb in b.iter_rows() {
            s += rbf_kernel(ra, rb, bandwidth);
        }
    }
    s / (a.rows() * b.rows()) as f64
}

/// Biased (V-statistic) squared MMD with an RBF kernel, clamped at zero.
pub fn mmd_squared(x: &Tensor, y: &Tensor, bandwidth: f64) -> Result<f64> {
    check_sets(x, y, bandwidth)?;
    let v = mean_kernel(x, x, bandwidth) + mean_kernel(y, y, bandwidth)
        - 2.0 * mean_kernel(x, y, bandwidth);
    Ok(v.max(0.0))
}

/// Squared MMD and its gradients with respect to every row of `x` and `y`.
/// When the raw estimate is negative the clamp is active and the gradients
/// are zero.
pub fn mmd_squared_with_grad(
    x: &Tensor,
    y: &Tensor,
    bandwidth: f64,
) -> Result<(f64, Tensor, Tensor)> {
    check_sets(x, y, bandwidth)?;
    let (m, n) = (x.rows() as f64, y.rows() as f64);
    let h2 = bandwidth * bandwidth;
    let mut gx = Tensor::zeros(x.shape().to_vec());
    let mut gy = Tensor::zeros(y.shape().to_vec());
    let (mut kxx, mut kyy, mut kxy) = (0.0, 0.0, 0.0);

    // dk(a,b)/da = -k(a,b) (a - b) / h²
    let pair = |a: &Tensor,
                b: &Tensor,
                same: bool,
                coef: f64,
                ga: &mut Tensor,
                gb: Option<&mut Tensor>|
     -> f64 {
        let mut total = 0.0;
        let mut gb = gb;
        for i in 0..a.rows() {
            for j in 0..b.rows() {
                let (ra, rb) = (a.row(i), b.row(j));
                let k = rbf_kernel(ra, rb, bandwidth);
                total += k;
                let s = -coef * k / h2;
                for (c, (u, v)) in ra.iter().zip(rb).enumerate() {
                    let d = u - v;
                    ga.row_mut(i)[c] += s * d;
                    if same {
                        ga.row_mut(j)[c] -= s * d;
                    } else if let Some(g) = gb.as_deref_mut() {
                        g.row_mut(j)[c] -= s * d;
                    }
                }
            }
        }
        total
    };
    kxx += pair(x, x, true, 1.0 / (m * m), &mut gx, None);
    kyy += pair(y, y, true, 1.0 / (n * n), &mut gy, None);
    kxy += pair(x, y, false, -2.0 / (m * n), &mut gx, Some(&mut gy));

    let raw = kxx / (m * m) + kyy / (n * n) - 2.0 * kxy / (m * n);
    if raw <= 0.0 {
        return Ok((
            0.0,
            Tensor::zeros(x.shape().to_vec()),
            Tensor::zeros(y.shape().to_vec()),
        ));
    }
    Ok((raw, gx, gy))
}
