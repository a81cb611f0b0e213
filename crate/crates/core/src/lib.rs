//! Desk-scale training engine and membership-inference toolkit for studying
//! code-poisoning attacks that plant membership-encoding samples.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::large_enum_variant,
    clippy::needless_range_loop
)]

pub mod audit;
pub mod defense;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod nn;
pub mod norm;
pub mod poison;
pub mod rng;
pub mod tensor;

pub use encoder::{EncodingSample, Sample};
pub use error::{Error, Result};
pub use tensor::Tensor;
