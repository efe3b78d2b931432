#![allow(dead_code)]

use hmme_core::{HmmParams, LabeledDataset, Provenance, TokenSequence, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Vocabulary of the first `m` capital letters (and onwards in code-point order).
pub fn letters(m: usize) -> Vocabulary {
    Vocabulary::new((0..m).map(|k| char::from_u32(0x41 + k as u32).unwrap().to_string())).unwrap()
}

/// Random stochastic row with one entry boosted by `peak` before normalizing.
fn peaked_row(rng: &mut ChaCha8Rng, len: usize, peak: f64) -> Vec<f64> {
    let mut r: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
    let k = rng.random_range(0..len);
    r[k] += peak;
    let s: f64 = r.iter().sum();
    r.iter().map(|x| x / s).collect()
}

fn sticky_transitions(rng: &mut ChaCha8Rng, n: usize, stick: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let mut r = peaked_row(rng, n, 0.0);
            r.iter_mut().for_each(|x| *x *= 1.0 - stick);
            r[i] += stick;
            r
        })
        .collect()
}

/// A sticky `n`-state generator over `m` symbols with peaked emissions.
pub fn sticky_generator(n: usize, m: usize, stick: f64, peak: f64, seed: u64) -> HmmParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = sticky_transitions(&mut rng, n, stick);
    let b = (0..n).map(|_| peaked_row(&mut rng, m, peak)).collect();
    HmmParams::new(vec![1.0 / n as f64; n], a, b).unwrap()
}

/// Two 5-state, 5-symbol generators sharing dynamics. The negative one mixes
/// each emission row with a fresh random row at weight `delta`.
pub fn separated_pair(delta: f64, seed: u64) -> (HmmParams, HmmParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, m) = (5, 5);
    let pi = vec![1.0 / n as f64; n];
    let a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut r = peaked_row(&mut rng, n, 0.0);
            r.iter_mut().for_each(|x| *x *= 0.3);
            r[i] += 0.7;
            r
        })
        .collect();
    let b: Vec<Vec<f64>> = (0..n).map(|_| peaked_row(&mut rng, m, 2.0)).collect();
    let noise: Vec<Vec<f64>> = (0..n).map(|_| peaked_row(&mut rng, m, 2.0)).collect();
    let mixed = b
        .iter()
        .zip(&noise)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (1.0 - delta) * p + delta * q).collect())
        .collect();
    (
        HmmParams::new(pi.clone(), a.clone(), b).unwrap(),
        HmmParams::new(pi, a, mixed).unwrap(),
    )
}

/// Interleaved positive/negative samples, `per_class` of each.
pub fn sample_labeled(
    positive: &HmmParams,
    negative: &HmmParams,
    per_class: usize,
    length: usize,
    seed: u64,
) -> (Vec<TokenSequence>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seqs = Vec::with_capacity(2 * per_class);
    let mut labels = Vec::with_capacity(2 * per_class);
    for _ in 0..per_class {
        seqs.push(positive.sample(length, &mut rng).unwrap());
        labels.push(true);
        seqs.push(negative.sample(length, &mut rng).unwrap());
        labels.push(false);
    }
    (seqs, labels)
}

pub fn dataset(seqs: Vec<TokenSequence>, labels: Vec<bool>, vocab: &Vocabulary, source: &str) -> LabeledDataset {
    let prov = Provenance {
        source: source.to_string(),
        ..Provenance::default()
    };
    LabeledDataset::new(seqs, labels, vocab.clone(), prov).unwrap()
}
