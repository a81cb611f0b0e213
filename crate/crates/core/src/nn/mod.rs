//! Feed-forward network substrate with hand-written backward passes.

mod dense;
mod dropout;
pub mod gradcheck;
mod loss;
mod model;
mod sgd;

pub use dense::DenseLayer;
pub use dropout::Dropout;
pub use loss::{
    argmax, cross_entropy_rows, softmax, softmax_cross_entropy, weighted_soft_cross_entropy,
};
pub use model::{Layer, Model, NormKind, Topology};
pub use sgd::{sgd_step, SgdConfig};

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// Governs normalization statistics and dropout behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// A trainable tensor plus its momentum buffer.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    pub velocity: Vec<f64>,
}

impl Param {
    pub fn new(mut value: Tensor) -> Self {
        value.zero_grad();
        let velocity = vec![0.0; value.len()];
        Self { value, velocity }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn grad(&self) -> &[f64] {
        self.value
            .grad()
            .expect("param gradient buffer is always allocated")
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        self.value.grad_mut()
    }
}
