use serde::{Deserialize, Serialize};

use crate::encoder::Sample;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameResult {
    pub trials: usize,
    pub correct: usize,
    pub accuracy: f64,
}

impl GameResult {
    /// Binomial standard deviation of the accuracy of a guessing adversary.
    pub fn null_stdev(&self) -> f64 {
        (0.25 / self.trials as f64).sqrt()
    }
}

/// What the adversary sees in one round.
pub struct Challenge<'a, M> {
    pub model: &'a M,
    pub target: &'a Sample,
    /// The hidden coin; only oracle adversaries used in tests look at it.
    pub secret: bool,
}

/// Monte-Carlo membership inference game. Each trial draws
/// `train_size + 1` samples from the distribution, trains on the first
/// `train_size`, flips a fair coin `b`, takes the challenge from the training
/// set when `b` is set and uses the extra fresh sample otherwise, and asks
/// the adversary for `b`.
pub fn run_mi_game<D, T, A, M>(
    mut draw: D,
    train_size: usize,
    mut trainer: T,
    mut adversary: A,
    trials: usize,
    rng: &mut SplitMix64,
) -> Result<GameResult>
where
    D: FnMut(usize, &mut SplitMix64) -> Vec<Sample>,
    T: FnMut(&[Sample], &mut SplitMix64) -> Result<M>,
    A: FnMut(&Challenge<'_, M>, &mut SplitMix64) -> bool,
{
    if trials == 0 {
        return Err(Error::config(
            "the membership inference game needs at least one trial",
        ));
    }
    if train_size == 0 {
        return Err(Error::config(
            "the membership inference game needs a non-empty training set",
        ));
    }
    let mut correct = 0;
    for _ in 0..trials {
        let mut train_set = draw(train_size + 1, rng);
        if train_set.len() != train_size + 1 {
            return Err(Error::InsufficientData(format!(
                "distribution produced {} samples, asked for {}",
                train_set.len(),
                train_size + 1
            )));
        }
        let fresh = train_set.pop().expect("non-empty");
        let b = rng.coin();
        let target = if b {
            train_set[rng.index(train_size)].clone()
        } else {
            fresh
        };
        let model = trainer(&train_set, rng)?;
        let guess = adversary(
            &Challenge {
                model: &model,
                target: &target,
                secret: b,
            },
            rng,
        );
        if guess == b {
            correct += 1;
        }
    }
    Ok(GameResult {
        trials,
        correct,
        accuracy: correct as f64 / trials as f64,
    })
}
