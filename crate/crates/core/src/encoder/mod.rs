//! Membership-encoding samples.
//!
//! Each training sample is hashed (MD5 over its features), the first eight
//! digest bytes seed a SplitMix64 stream, and `d` Box–Muller normals drawn
//! from that stream are standardized exactly to the adversary's mean and
//! standard deviation. The label is either copied from the target or drawn
//! from the same stream after the features.
//!
//! The hash input is the frozen `canonical_bytes` layout: every feature as
//! an 8-byte little-endian IEEE-754 double, in order, label excluded.

mod md5;

pub use md5::{md5_digest, to_hex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::norm::{sample_stats, EncodingSpec, LabelPolicy};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Self { features, label }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodingSample {
    pub features: Vec<f64>,
    pub label: usize,
    pub source_digest: [u8; 16],
}

impl EncodingSample {
    pub fn to_sample(&self) -> Sample {
        Sample {
            features: self.features.clone(),
            label: self.label,
        }
    }
}

pub fn canonical_bytes(sample: &Sample) -> Vec<u8> {
    sample
        .features
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect()
}

/// Inverse of [`canonical_bytes`] for the feature vector.
pub fn decode_canonical(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Format(format!(
            "{} bytes is not a whole number of f64s",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// First eight digest bytes as a little-endian `u64`.
pub fn digest_to_seed(digest: &[u8]) -> Result<u64> {
    if digest.len() != 16 {
        return Err(Error::Format(format!(
            "digest must be 16 bytes, got {}",
            digest.len()
        )));
    }
    Ok(u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")))
}

/// Deterministically derives the membership-encoding sample of `sample`.
pub fn gen_encoding_sample(
    sample: &Sample,
    spec: &EncodingSpec,
    num_classes: usize,
) -> Result<EncodingSample> {
    let d = sample.features.len();
    if d < 2 {
        return Err(Error::config(format!(
            "encoding samples need at least 2 features, got {d}"
        )));
    }
    if num_classes == 0 {
        return Err(Error::config("num_classes must be positive"));
    }
    spec.validate()?;
    let digest = md5_digest(&canonical_bytes(sample));
    let mut seed = digest_to_seed(&digest)?;
    let mut features = vec![0.0; d];
    loop {
        let mut rng = SplitMix64::new(seed);
        rng.fill_gaussian(&mut features);
        let (mean, stdev) = sample_stats(&features);
        if stdev > 0.0 && stdev.is_finite() {
            for v in features.iter_mut() {
                *v = (*v - mean) / stdev * spec.stdev + spec.mean;
            }
            let label = match spec.label_policy {
                LabelPolicy::SameLabel => sample.label,
                LabelPolicy::RandomLabel => (rng.next_u64() % num_classes as u64) as usize,
            };
            return Ok(EncodingSample {
                features,
                label,
                source_digest: digest,
            });
        }
        seed = seed.wrapping_add(1);
    }
}

/// Copy of `sample` with uniform noise in `±magnitude` added to every feature.
pub fn perturb_target(sample: &Sample, magnitude: f64, rng: &mut SplitMix64) -> Result<Sample> {
    if !(magnitude > 0.0 && magnitude.is_finite()) {
        return Err(Error::config(format!(
            "perturbation magnitude must be > 0, got {magnitude}"
        )));
    }
    Ok(Sample {
        features: sample
            .features
            .iter()
            .map(|v| v + rng.uniform(-magnitude, magnitude))
            .collect(),
        label: sample.label,
    })
}
