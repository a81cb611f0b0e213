use crate::rng::SplitMix64;

/// Replaces a probability vector with a random one carrying the same
/// ranking: `C` uniforms are normalized, sorted, and placed so that the
/// `k`-th largest output sits where the `k`-th largest input was.
pub fn obfuscate_output(probs: &[f64], rng: &mut SplitMix64) -> Vec<f64> {
    let c = probs.len();
    let mut draws: Vec<f64> = (0..c).map(|_| rng.next_open01()).collect();
    let total: f64 = draws.iter().sum();
    draws.iter_mut().for_each(|v| *v /= total);
    draws.sort_by(|a, b| b.total_cmp(a));

    let mut order: Vec<usize> = (0..c).collect();
    // Stable sort keeps ties in index order, so argmax (first maximum) survives.
    order.sort_by(|&i, &j| probs[j].total_cmp(&probs[i]));
    let mut out = vec![0.0; c];
    for (rank, &idx) in order.iter().enumerate() {
        out[idx] = draws[rank];
    }
    out
}
