use crate::encoder::{gen_encoding_sample, Sample};
use crate::error::{Error, Result};
use crate::norm::EncodingSpec;
use crate::rng::SplitMix64;

/// Number of samples replaced in a batch of `n`: `floor(p·n)`, with a
/// 1e-9 guard so products like `0.29 · 100` do not round down a whole unit.
pub fn replacement_count(p: f64, n: usize) -> usize {
    ((p * n as f64 + 1e-9).floor() as usize).min(n)
}

/// Swaps `floor(p·N)` uniformly chosen samples of the batch for their
/// membership-encoding samples. Returns the mixed batch and the replaced
/// positions (in draw order).
pub fn replace_batch(
    batch: &[Sample],
    p: f64,
    rng: &mut SplitMix64,
    spec: &EncodingSpec,
    num_classes: usize,
) -> Result<(Vec<Sample>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::config(format!(
            "replacement ratio must be in [0, 1], got {p}"
        )));
    }
    let k = replacement_count(p, batch.len());
    let chosen = rng.sample_indices(batch.len(), k);
    let mut out = batch.to_vec();
    for &i in &chosen {
        out[i] = gen_encoding_sample(&batch[i], spec, num_classes)?.to_sample();
    }
    Ok((out, chosen))
}
