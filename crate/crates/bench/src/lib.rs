//! Fixtures shared by the benchmarks.

use hmme_core::{HmmParams, TokenSequence};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A random model and `count` sequences of `length` tokens sampled from it.
pub fn fixture(n_states: usize, n_symbols: usize, count: usize, length: usize, seed: u64) -> (HmmParams, Vec<TokenSequence>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = HmmParams::init_random(n_states, n_symbols, &mut rng).expect("valid shape");
    let seqs = (0..count)
        .map(|_| model.sample(length, &mut rng).expect("positive length"))
        .collect();
    (model, seqs)
}

/// `count` independent random models of the given shape.
pub fn random_models(count: usize, n_states: usize, n_symbols: usize, seed: u64) -> Vec<HmmParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| HmmParams::init_random(n_states, n_symbols, &mut rng).expect("valid shape"))
        .collect()
}
