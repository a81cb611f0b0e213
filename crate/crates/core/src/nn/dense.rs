use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{gemm, Tensor};

use super::Param;

/// Fully connected layer `out = x · Wᵀ + b` with `W` stored `d_out × d_in`.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weights: Param,
    pub bias: Param,
    input: Option<Tensor>,
    grad_out: Option<Tensor>,
}

impl DenseLayer {
    /// Uniform init in `±sqrt(6 / (d_in + d_out))`, zero bias.
    pub fn new(d_in: usize, d_out: usize, rng: &mut SplitMix64) -> Self {
        let bound = (6.0 / (d_in + d_out) as f64).sqrt();
        let w = (0..d_in * d_out)
            .map(|_| rng.uniform(-bound, bound))
            .collect();
        Self::from_parts(
            Tensor::matrix(d_out, d_in, w).expect("sized above"),
            vec![0.0; d_out],
        )
        .expect("consistent by construction")
    }

    pub fn from_parts(weights: Tensor, bias: Vec<f64>) -> Result<Self> {
        if weights.shape().len() != 2 || weights.rows() != bias.len() {
            return Err(Error::dim(format!(
                "weights {:?} incompatible with bias of length {}",
                weights.shape(),
                bias.len()
            )));
        }
        let n = bias.len();
        Ok(Self {
            weights: Param::new(weights),
            bias: Param::new(Tensor::new(vec![n], bias)?),
            input: None,
            grad_out: None,
        })
    }

    pub fn d_in(&self) -> usize {
        self.weights.value.cols()
    }

    pub fn d_out(&self) -> usize {
        self.weights.value.rows()
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.cols() != self.d_in() {
            return Err(Error::dim(format!(
                "dense layer expects N×{}, got {:?}",
                self.d_in(),
                x.shape()
            )));
        }
        let (n, d_out) = (x.rows(), self.d_out());
        let mut out = Vec::with_capacity(n * d_out);
        for _ in 0..n {
            out.extend_from_slice(self.bias.value.data());
        }
        gemm(
            n,
            self.d_in(),
            d_out,
            1.0,
            x.data(),
            false,
            self.weights.value.data(),
            true,
            1.0,
            &mut out,
        );
        Tensor::matrix(n, d_out, out)
    }

    /// Forward pass that caches the input for [`DenseLayer::backward`].
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let out = self.infer(x)?;
        self.input = Some(x.clone());
        self.grad_out = None;
        Ok(out)
    }

    /// Accumulates `dW += gᵀx`, `db += Σ g` and returns `g · W`.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| Error::State("dense backward without a cached forward pass".into()))?;
        if grad_out.shape() != [x.rows(), self.d_out()] {
            return Err(Error::dim(format!(
                "dense backward: grad {:?}, expected [{}, {}]",
                grad_out.shape(),
                x.rows(),
                self.d_out()
            )));
        }
        let (n, d_in, d_out) = (x.rows(), self.d_in(), self.d_out());
        gemm(
            d_out,
            n,
            d_in,
            1.0,
            grad_out.data(),
            true,
            x.data(),
            false,
            1.0,
            self.weights.grad_mut(),
        );
        let bg = self.bias.grad_mut();
        for row in grad_out.iter_rows() {
            for (b, g) in bg.iter_mut().zip(row) {
                *b += g;
            }
        }
        let mut gx = vec![0.0; n * d_in];
        gemm(
            n,
            d_out,
            d_in,
            1.0,
            grad_out.data(),
            false,
            self.weights.value.data(),
            false,
            0.0,
            &mut gx,
        );
        self.grad_out = Some(grad_out.clone());
        Tensor::matrix(n, d_in, gx)
    }

    /// Adds row `row`'s share of `[W, b]`'s gradient into `out`.
    pub(crate) fn add_row_grad(&self, row: usize, out: &mut [f64]) -> Result<()> {
        let (x, g) = self.cached()?;
        let d_in = self.d_in();
        let (ow, ob) = out.split_at_mut(self.weights.len());
        let xr = x.row(row);
        for (j, &gj) in g.row(row).iter().enumerate() {
            if gj != 0.0 {
                for (o, xv) in ow[j * d_in..(j + 1) * d_in].iter_mut().zip(xr) {
                    *o += gj * xv;
                }
            }
            ob[j] += gj;
        }
        Ok(())
    }

    fn cached(&self) -> Result<(&Tensor, &Tensor)> {
        match (&self.input, &self.grad_out) {
            (Some(x), Some(g)) => Ok((x, g)),
            _ => Err(Error::State(
                "per-row gradient needs a cached backward pass".into(),
            )),
        }
    }

    /// Adds `‖Σ_{r∈unit} ∂/∂[W, b] of row r‖²` for each unit into `out`,
    /// using `‖Σ g_r x_rᵀ‖² = Σ_{r,s} (g_r·g_s)(x_r·x_s)`.
    pub(crate) fn add_unit_sq_norms(&self, units: &[Vec<usize>], out: &mut [f64]) -> Result<()> {
        let (x, g) = self.cached()?;
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
        for (o, unit) in out.iter_mut().zip(units) {
            for &r in unit {
                for &q in unit {
                    *o += dot(g.row(r), g.row(q)) * (dot(x.row(r), x.row(q)) + 1.0);
                }
            }
        }
        Ok(())
    }

    /// Adds `Σ_r w_r · (row r's gradient share)` into `out`.
    pub(crate) fn add_weighted_rows(&self, w: &[f64], out: &mut [f64]) -> Result<()> {
        let (x, g) = self.cached()?;
        let (n, d_in, d_out) = (x.rows(), self.d_in(), self.d_out());
        let mut gw = g.data().to_vec();
        for (row, &wr) in gw.chunks_mut(d_out).zip(w) {
            row.iter_mut().for_each(|v| *v *= wr);
        }
        let (ow, ob) = out.split_at_mut(self.weights.len());
        gemm(d_out, n, d_in, 1.0, &gw, true, x.data(), false, 1.0, ow);
        for row in gw.chunks(d_out) {
            for (b, v) in ob.iter_mut().zip(row) {
                *b += v;
            }
        }
        Ok(())
    }

    pub(crate) fn params(&self) -> [&Param; 2] {
        [&self.weights, &self.bias]
    }

    pub(crate) fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weights, &mut self.bias]
    }
}
