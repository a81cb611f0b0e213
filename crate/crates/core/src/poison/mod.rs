//! The poisoned training loop and its alternative loss strategies.

mod mgda;
mod replace;
mod train;

pub use mgda::mgda_coefficients;
pub use replace::{replace_batch, replacement_count};
pub use train::{malicious_loss, mmd_regularized_loss, train, train_with, TrainOptions};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{NormKind, Topology};
use crate::norm::EncodingSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Unmodified cross-entropy training.
    Clean,
    /// Malicious loss over samples and their encodings, shared normalization.
    Basic,
    /// Malicious loss with routed dual normalization layers.
    DualNorm,
    /// A fraction of each batch is swapped for encoding samples.
    Replacement,
    /// Per-step MGDA weighting of the two loss gradients.
    Mgda,
    /// `ℓ_train + β·ℓ_syn`.
    FixedCoef,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Clean => "clean",
            Variant::Basic => "basic",
            Variant::DualNorm => "dual-norm",
            Variant::Replacement => "replacement",
            Variant::Mgda => "mgda",
            Variant::FixedCoef => "fixed-coef",
        }
    }

    /// Whether the variant trains on encoding samples at all.
    pub fn is_attack(self) -> bool {
        self != Variant::Clean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub variant: Variant,
    #[serde(default)]
    pub spec: EncodingSpec,
    /// Fraction of each batch replaced (replacement variant only).
    #[serde(default)]
    pub replacement_ratio: Option<f64>,
    /// Weight of the encoding-sample loss (fixed-coef variant only).
    #[serde(default)]
    pub beta: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Precompute encoding samples once instead of regenerating them every step.
    #[serde(default)]
    pub cache_encodings: bool,
}

impl AttackConfig {
    pub fn new(variant: Variant, epochs: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            variant,
            spec: EncodingSpec::default(),
            replacement_ratio: None,
            beta: None,
            epochs,
            batch_size,
            seed,
            cache_encodings: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be positive"));
        }
        match (self.variant, self.replacement_ratio) {
            (Variant::Replacement, None) => {
                return Err(Error::config("replacement variant needs replacement_ratio"))
            }
            (Variant::Replacement, Some(p)) if !(0.0..=1.0).contains(&p) => {
                return Err(Error::config(format!(
                    "replacement_ratio must be in [0, 1], got {p}"
                )))
            }
            (Variant::Replacement, Some(_)) => {}
            (v, Some(_)) => {
                return Err(Error::config(format!(
                    "replacement_ratio is only valid for replacement, not {}",
                    v.name()
                )))
            }
            _ => {}
        }
        match (self.variant, self.beta) {
            (Variant::FixedCoef, None) => {
                return Err(Error::config("fixed-coef variant needs beta"))
            }
            (Variant::FixedCoef, Some(b)) if !(b > 0.0 && b.is_finite()) => {
                return Err(Error::config(format!("beta must be > 0, got {b}")))
            }
            (Variant::FixedCoef, Some(_)) => {}
            (v, Some(_)) => {
                return Err(Error::config(format!(
                    "beta is only valid for fixed-coef, not {}",
                    v.name()
                )))
            }
            _ => {}
        }
        Ok(())
    }

    /// Checks the variant against the model's normalization layers.
    pub fn check_topology(&self, topology: &Topology) -> Result<()> {
        match (self.variant, topology.norm) {
            (Variant::DualNorm, NormKind::Dual) => {}
            (Variant::DualNorm, _) => {
                return Err(Error::config(
                    "dual-norm variant needs dual normalization layers",
                ))
            }
            (Variant::Basic | Variant::Mgda | Variant::FixedCoef, NormKind::Dual) => {
                return Err(Error::config(format!(
                    "{} variant uses a single normalization path; got dual layers",
                    self.variant.name()
                )))
            }
            _ => {}
        }
        if topology.norm == NormKind::Dual
            && self.variant.is_attack()
            && topology.encoding != Some(self.spec)
        {
            return Err(Error::config(
                "model routing spec differs from the attack's encoding spec",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochAccuracy {
    pub epoch: usize,
    pub train: f64,
    pub test: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub variant: Option<Variant>,
    /// Mean training objective per epoch.
    pub epoch_loss: Vec<f64>,
    pub accuracy: Vec<EpochAccuracy>,
    /// Total samples forwarded through the model during training steps.
    pub forward_pass_count: u64,
    pub epoch_forward_passes: Vec<u64>,
    pub wall_time_secs: f64,
}

impl TrainReport {
    pub fn final_accuracy(&self) -> Option<&EpochAccuracy> {
        self.accuracy.last()
    }
}
