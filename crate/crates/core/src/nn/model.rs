use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::norm::{route_mask, DualNormLayer, EncodingSpec, NormLayer};
use crate::rng::{derive_seed, tags, SplitMix64};
use crate::tensor::Tensor;

use super::{argmax, softmax, DenseLayer, Dropout, Mode, Param, SgdConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    None,
    Standard,
    Dual,
}

/// Shape of an MLP: `input → [dense → norm? → relu → dropout?]* → dense`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    pub norm: NormKind,
    #[serde(default)]
    pub dropout: f64,
    /// Routing rule; required when `norm` is `dual`.
    #[serde(default)]
    pub encoding: Option<EncodingSpec>,
}

impl Topology {
    pub fn mlp(input_dim: usize, hidden: &[usize], num_classes: usize, norm: NormKind) -> Self {
        Self {
            input_dim,
            hidden: hidden.to_vec(),
            num_classes,
            norm,
            dropout: 0.0,
            encoding: (norm == NormKind::Dual).then(EncodingSpec::default),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes < 2 {
            return Err(Error::config("need input_dim >= 1 and num_classes >= 2"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!(
                "dropout rate must be in [0, 1), got {}",
                self.dropout
            )));
        }
        match (self.norm, &self.encoding) {
            (NormKind::Dual, None) => Err(Error::config(
                "dual normalization needs an encoding spec for routing",
            )),
            (NormKind::Dual, Some(_)) if self.input_dim < 2 => Err(Error::config(
                "routing on per-sample statistics needs input_dim >= 2",
            )),
            (NormKind::Dual, Some(_)) if self.hidden.is_empty() => Err(Error::config(
                "dual normalization needs at least one hidden layer",
            )),
            (_, Some(spec)) => spec.validate(),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    fn apply(x: &Tensor) -> Tensor {
        let mut out = x.clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        out
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(DenseLayer),
    Norm(NormLayer),
    DualNorm(DualNormLayer),
    Relu(Relu),
    Dropout(Dropout),
}

impl Layer {
    fn forward(&mut self, x: &Tensor, mode: Mode, route: Option<&[bool]>) -> Result<Tensor> {
        match self {
            Layer::Dense(l) => l.forward(x),
            Layer::Norm(l) => match mode {
                Mode::Train => l.forward_train(x),
                Mode::Eval => l.forward_eval_cached(x),
            },
            Layer::DualNorm(l) => {
                let route = route.ok_or_else(|| {
                    Error::State("dual norm layer reached without a route mask".into())
                })?;
                l.forward(x, route, mode)
            }
            Layer::Relu(r) => {
                r.mask = Some(x.data().iter().map(|&v| v > 0.0).collect());
                Ok(Relu::apply(x))
            }
            Layer::Dropout(d) => Ok(d.forward(x, mode)),
        }
    }

    fn infer(&self, x: &Tensor, route: Option<&[bool]>) -> Result<Tensor> {
        match self {
            Layer::Dense(l) => l.infer(x),
            Layer::Norm(l) => l.forward_eval(x),
            Layer::DualNorm(l) => {
                let route = route.ok_or_else(|| {
                    Error::State("dual norm layer reached without a route mask".into())
                })?;
                l.infer(x, route)
            }
            Layer::Relu(_) => Ok(Relu::apply(x)),
            Layer::Dropout(_) => Ok(x.clone()),
        }
    }

    fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense(l) => l.backward(g),
            Layer::Norm(l) => Ok(l.backward(g)?.input),
            Layer::DualNorm(l) => l.backward(g),
            Layer::Relu(r) => {
                let mask = r
                    .mask
                    .as_ref()
                    .ok_or_else(|| Error::State("relu backward without forward".into()))?;
                let mut out = g.clone();
                out.data_mut().iter_mut().zip(mask).for_each(|(v, &m)| {
                    if !m {
                        *v = 0.0
                    }
                });
                Ok(out)
            }
            Layer::Dropout(d) => Ok(d.backward(g)),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Layer::Dense(l) => l.num_params(),
            Layer::Norm(l) => l.num_params(),
            Layer::DualNorm(l) => l.num_params(),
            Layer::Relu(_) | Layer::Dropout(_) => 0,
        }
    }

    fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Dense(l) => l.params().to_vec(),
            Layer::Norm(l) => l.params().to_vec(),
            Layer::DualNorm(l) => l
                .primary
                .params()
                .into_iter()
                .chain(l.secondary.params())
                .collect(),
            Layer::Relu(_) | Layer::Dropout(_) => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Dense(l) => l.params_mut().into_iter().collect(),
            Layer::Norm(l) => l.params_mut().into_iter().collect(),
            Layer::DualNorm(l) => {
                let DualNormLayer {
                    primary, secondary, ..
                } = l;
                primary
                    .params_mut()
                    .into_iter()
                    .chain(secondary.params_mut())
                    .collect()
            }
            Layer::Relu(_) | Layer::Dropout(_) => Vec::new(),
        }
    }

    fn add_row_grad(&self, row: usize, out: &mut [f64]) -> Result<()> {
        match self {
            Layer::Dense(l) => l.add_row_grad(row, out),
            Layer::Norm(l) => l.add_row_grad(row, out),
            Layer::DualNorm(l) => l.add_row_grad(row, out),
            Layer::Relu(_) | Layer::Dropout(_) => Ok(()),
        }
    }

    fn add_unit_sq_norms(&self, units: &[Vec<usize>], out: &mut [f64]) -> Result<()> {
        match self {
            Layer::Dense(l) => l.add_unit_sq_norms(units, out),
            Layer::Norm(l) => l.add_unit_sq_norms(units, out),
            Layer::DualNorm(l) => l.add_unit_sq_norms(units, out),
            Layer::Relu(_) | Layer::Dropout(_) => Ok(()),
        }
    }

    fn add_weighted_rows(&self, w: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            Layer::Dense(l) => l.add_weighted_rows(w, out),
            Layer::Norm(l) => l.add_weighted_rows(w, out),
            Layer::DualNorm(l) => l.add_weighted_rows(w, out),
            Layer::Relu(_) | Layer::Dropout(_) => Ok(()),
        }
    }
}

/// A feed-forward classifier producing logits.
#[derive(Debug, Clone)]
pub struct Model {
    topology: Topology,
    layers: Vec<Layer>,
    mode: Mode,
}

impl Model {
    pub fn new(topology: Topology, seed: u64) -> Result<Self> {
        topology.validate()?;
        let mut init = SplitMix64::new(derive_seed(seed, tags::INIT));
        let mut layers = Vec::new();
        let mut width = topology.input_dim;
        for (i, &h) in topology.hidden.iter().enumerate() {
            layers.push(Layer::Dense(DenseLayer::new(width, h, &mut init)));
            match topology.norm {
                NormKind::None => {}
                NormKind::Standard => layers.push(Layer::Norm(NormLayer::new(h))),
                NormKind::Dual => layers.push(Layer::DualNorm(DualNormLayer::new(
                    h,
                    topology.encoding.expect("validated"),
                ))),
            }
            layers.push(Layer::Relu(Relu::default()));
            if topology.dropout > 0.0 {
                let s = derive_seed(seed, tags::DROPOUT ^ i as u64);
                layers.push(Layer::Dropout(Dropout::new(topology.dropout, s)?));
            }
            width = h;
        }
        layers.push(Layer::Dense(DenseLayer::new(
            width,
            topology.num_classes,
            &mut init,
        )));
        Ok(Self {
            topology,
            layers,
            mode: Mode::Train,
        })
    }

    /// Assembles a model from explicit layers (used by gradient checks and
    /// tests on single layers).
    pub fn from_layers(topology: Topology, layers: Vec<Layer>) -> Self {
        Self {
            topology,
            layers,
            mode: Mode::Train,
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Routing mask from the raw input, or `None` for models without dual
    /// normalization.
    pub fn routing_mask(&self, x: &Tensor) -> Result<Option<Vec<bool>>> {
        match (self.topology.norm, &self.topology.encoding) {
            (NormKind::Dual, Some(spec)) => route_mask(x, spec).map(Some),
            _ => Ok(None),
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.topology.input_dim {
            return Err(Error::dim(format!(
                "model expects N×{}, got {:?}",
                self.topology.input_dim,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Forward pass in the current mode, caching for [`Model::backward`].
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let route = self.routing_mask(x)?;
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h, self.mode, route.as_deref())?;
        }
        Ok(h)
    }

    /// Eval-mode logits without touching any cache or statistic.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let route = self.routing_mask(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(&h, route.as_deref())?;
        }
        Ok(h)
    }

    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        Ok(softmax(&self.infer(x)?))
    }

    /// Eval-mode top-1 accuracy; 0 for an empty set.
    pub fn accuracy(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        if labels.is_empty() {
            return Ok(0.0);
        }
        let logits = self.infer(x)?;
        let hits = logits
            .iter_rows()
            .zip(labels)
            .filter(|(r, &l)| argmax(r) == l)
            .count();
        Ok(hits as f64 / labels.len() as f64)
    }

    /// Backpropagates `grad_logits`, accumulating parameter gradients, and
    /// returns the gradient with respect to the input.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<Tensor> {
        let mut g = grad_logits.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            for p in layer.params_mut() {
                p.value.zero_grad();
            }
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            for p in layer.params() {
                out.extend_from_slice(p.value.data());
            }
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::dim(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut off = 0;
        for layer in &mut self.layers {
            for p in layer.params_mut() {
                let n = p.len();
                p.value.data_mut().copy_from_slice(&flat[off..off + n]);
                off += n;
            }
        }
        Ok(())
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            for p in layer.params() {
                out.extend_from_slice(p.grad());
            }
        }
        out
    }

    pub fn set_flat_grads(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::dim(format!(
                "{} values for {} gradients",
                flat.len(),
                self.num_params()
            )));
        }
        let mut off = 0;
        for layer in &mut self.layers {
            for p in layer.params_mut() {
                let n = p.len();
                p.grad_mut().copy_from_slice(&flat[off..off + n]);
                off += n;
            }
        }
        Ok(())
    }

    /// Flattened parameter gradient attributable to each group of batch rows,
    /// read from the caches of the last forward/backward pair. Each row's
    /// share is its term in the batch gradient's sum over rows, so the
    /// groups' gradients add up to the batch gradient.
    pub fn unit_grads(&self, units: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        let total = self.num_params();
        let mut out = Vec::with_capacity(units.len());
        for unit in units {
            let mut g = vec![0.0; total];
            let mut off = 0;
            for layer in &self.layers {
                let n = layer.num_params();
                if n > 0 {
                    for &row in unit {
                        layer.add_row_grad(row, &mut g[off..off + n])?;
                    }
                }
                off += n;
            }
            out.push(g);
        }
        Ok(out)
    }

    /// L2 norm of each unit's gradient as defined by [`Model::unit_grads`],
    /// without materializing the per-unit vectors.
    pub fn unit_grad_norms(&self, units: &[Vec<usize>]) -> Result<Vec<f64>> {
        let mut sq = vec![0.0; units.len()];
        for layer in &self.layers {
            layer.add_unit_sq_norms(units, &mut sq)?;
        }
        Ok(sq.into_iter().map(f64::sqrt).collect())
    }

    /// `Σ_r w_r · (row r's share of the parameter gradient)`, flattened.
    pub fn weighted_row_grads(&self, row_weights: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.num_params()];
        let mut off = 0;
        for layer in &self.layers {
            let n = layer.num_params();
            if n > 0 {
                layer.add_weighted_rows(row_weights, &mut out[off..off + n])?;
            }
            off += n;
        }
        Ok(out)
    }

    /// Applies one momentum-SGD update to every parameter from its gradient.
    pub fn sgd_step(&mut self, config: &SgdConfig, epoch: usize) -> Result<()> {
        for layer in &mut self.layers {
            for p in layer.params_mut() {
                let Param { value, velocity } = p;
                let grad = value.grad().expect("allocated").to_vec();
                super::sgd_step(value.data_mut(), &grad, velocity, config, epoch)?;
            }
        }
        Ok(())
    }

    /// Values of every parameter tensor, in the order of [`Model::flat_params`].
    pub fn param_values(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| l.params())
            .map(|p| p.value.data())
            .collect()
    }

    pub fn set_param_values(&mut self, values: &[Vec<f64>]) -> Result<()> {
        let mut params: Vec<&mut Param> = self
            .layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect();
        if params.len() != values.len() {
            return Err(Error::dim(format!(
                "{} parameter tensors for a model with {}",
                values.len(),
                params.len()
            )));
        }
        for (i, (p, v)) in params.iter_mut().zip(values).enumerate() {
            if p.len() != v.len() {
                return Err(Error::dim(format!(
                    "parameter tensor {i} has {} values, expected {}",
                    v.len(),
                    p.len()
                )));
            }
            p.value.data_mut().copy_from_slice(v);
        }
        Ok(())
    }

    /// Every normalization layer in order; dual layers contribute primary
    /// then secondary.
    pub fn norm_layers(&self) -> Vec<&NormLayer> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Norm(n) => out.push(n),
                Layer::DualNorm(d) => {
                    out.push(&d.primary);
                    out.push(&d.secondary);
                }
                _ => {}
            }
        }
        out
    }

    pub fn norm_layers_mut(&mut self) -> Vec<&mut NormLayer> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Norm(n) => out.push(n),
                Layer::DualNorm(d) => {
                    let DualNormLayer {
                        primary, secondary, ..
                    } = d;
                    out.push(primary);
                    out.push(secondary);
                }
                _ => {}
            }
        }
        out
    }
}
