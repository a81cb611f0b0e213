//! Defenses: DP-SGD, MMD output regularization, soft-label training and
//! rank-preserving output obfuscation.

mod dpsgd;
mod mmd;
mod obfuscate;
mod soft_label;

pub use dpsgd::{dpsgd_aggregate, dpsgd_model_gradient, dpsgd_step, l2_norm, DpsgdConfig};
pub use mmd::{mmd_squared, mmd_squared_with_grad, rbf_kernel, MmdConfig};
pub use obfuscate::obfuscate_output;
pub use soft_label::{one_hot, soft_label_loss, teacher_soft_labels, top1_soft_label};

pub(crate) use soft_label::check_rows_sum_to_one;

use crate::encoder::Sample;

/// Top-1 mass of the soft labels the attack assigns to encoding samples
/// when soft-label training is in use.
pub const ATTACK_SOFT_TOP1: f64 = 0.99;

/// Defense active during training.
#[derive(Debug, Clone, Default)]
pub enum TrainingDefense {
    #[default]
    None,
    Dpsgd(DpsgdConfig),
    /// Output-distribution regularization against a reference (non-member)
    /// set; reference rows are drawn afresh every step.
    Mmd {
        config: MmdConfig,
        reference: Vec<Sample>,
    },
    /// Distillation-style training: `targets[i]` is the soft label of the
    /// i-th training sample.
    SoftLabel {
        targets: Vec<Vec<f64>>,
    },
}
