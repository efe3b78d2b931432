//! Discrete-emission hidden Markov models.
//!
//! A model is the triple of an initial state distribution, a row-stochastic
//! transition matrix and a row-stochastic emission matrix over a finite
//! vocabulary. Likelihoods are always reported as natural logarithms.

mod baum_welch;
mod forward;
mod vocab;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use baum_welch::{baum_welch, baum_welch_from, TrainConfig, TrainOutcome};
pub use forward::{log_sum_exp, viterbi, ViterbiPath};
pub use vocab::{TokenSequence, Vocabulary};

/// Tolerance used when validating that a distribution sums to one.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Parameters of one discrete HMM. Matrices are stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct HmmParams {
    n: usize,
    m: usize,
    pi: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

/// JSON layout: `{"n", "m", "pi", "A", "B"}` with nested rows.
#[derive(Serialize, Deserialize)]
struct RawParams {
    n: usize,
    m: usize,
    pi: Vec<f64>,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
}

impl TryFrom<RawParams> for HmmParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        let model = HmmParams::new(raw.pi, raw.a, raw.b)?;
        if model.n != raw.n || model.m != raw.m {
            return Err(Error::param(format!(
                "declared shape ({}, {}) does not match matrices ({}, {})",
                raw.n, raw.m, model.n, model.m
            )));
        }
        Ok(model)
    }
}

impl From<HmmParams> for RawParams {
    fn from(p: HmmParams) -> Self {
        RawParams {
            n: p.n,
            m: p.m,
            a: p.a.chunks(p.n).map(<[f64]>::to_vec).collect(),
            b: p.b.chunks(p.m).map(<[f64]>::to_vec).collect(),
            pi: p.pi,
        }
    }
}

fn check_distribution(what: &str, row: &[f64]) -> Result<()> {
    if let Some(x) = row.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(Error::param(format!("{what} has invalid entry {x}")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::param(format!("{what} sums to {sum}, expected 1")));
    }
    Ok(())
}

impl HmmParams {
    /// Builds a model from nested rows, validating shapes and stochasticity.
    pub fn new(pi: Vec<f64>, a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> Result<Self> {
        let n = pi.len();
        if n == 0 {
            return Err(Error::param("a model needs at least one state"));
        }
        if a.len() != n || a.iter().any(|r| r.len() != n) {
            return Err(Error::param(format!("transition matrix must be {n}x{n}")));
        }
        if b.len() != n {
            return Err(Error::param(format!("emission matrix must have {n} rows")));
        }
        let m = b[0].len();
        if m < 2 || b.iter().any(|r| r.len() != m) {
            return Err(Error::param("emission rows must share a width of at least 2"));
        }
        check_distribution("initial distribution", &pi)?;
        for (i, row) in a.iter().enumerate() {
            check_distribution(&format!("transition row {i}"), row)?;
        }
        for (i, row) in b.iter().enumerate() {
            check_distribution(&format!("emission row {i}"), row)?;
        }
        Ok(Self {
            n,
            m,
            pi,
            a: a.concat(),
            b: b.concat(),
        })
    }

    pub(crate) fn from_flat(n: usize, m: usize, pi: Vec<f64>, a: Vec<f64>, b: Vec<f64>) -> Self {
        debug_assert_eq!(pi.len(), n);
        debug_assert_eq!(a.len(), n * n);
        debug_assert_eq!(b.len(), n * m);
        Self { n, m, pi, a, b }
    }

    /// Draws every entry uniformly from `[0, 1)` and normalizes each row.
    pub fn init_random<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("state count must be at least 1"));
        }
        if m < 2 {
            return Err(Error::param("vocabulary size must be at least 2"));
        }
        let mut row = |len: usize| -> Vec<f64> {
            loop {
                let mut r: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
                let sum: f64 = r.iter().sum();
                if sum > 0.0 {
                    r.iter_mut().for_each(|x| *x /= sum);
                    return r;
                }
            }
        };
        let pi = row(n);
        let a = (0..n).flat_map(|_| row(n)).collect();
        let b = (0..n).flat_map(|_| row(m)).collect();
        Ok(Self::from_flat(n, m, pi, a, b))
    }

    /// Number of hidden states.
    pub fn n_states(&self) -> usize {
        self.n
    }

    /// Vocabulary size.
    pub fn n_symbols(&self) -> usize {
        self.m
    }

    pub fn initial(&self) -> &[f64] {
        &self.pi
    }

    pub fn transition_row(&self, i: usize) -> &[f64] {
        &self.a[i * self.n..(i + 1) * self.n]
    }

    pub fn emission_row(&self, i: usize) -> &[f64] {
        &self.b[i * self.m..(i + 1) * self.m]
    }

    pub fn transition(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    pub fn emission(&self, i: usize, k: usize) -> f64 {
        self.b[i * self.m + k]
    }

    /// Transition matrix as nested rows.
    pub fn transition_matrix(&self) -> Vec<Vec<f64>> {
        self.a.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    /// Emission matrix as nested rows.
    pub fn emission_matrix(&self) -> Vec<Vec<f64>> {
        self.b.chunks(self.m).map(<[f64]>::to_vec).collect()
    }

    pub(crate) fn flat_transition(&self) -> &[f64] {
        &self.a
    }

    pub(crate) fn flat_emission(&self) -> &[f64] {
        &self.b
    }

    /// `ln p(O | model)` by the log-space forward recursion.
    pub fn log_likelihood(&self, seq: &TokenSequence) -> Result<f64> {
        seq.check_vocab(self.m)?;
        Ok(forward::log_likelihood_unchecked(self, seq.ids()))
    }

    /// Most probable hidden path; see [`viterbi`].
    pub fn viterbi(&self, seq: &TokenSequence) -> Result<ViterbiPath> {
        viterbi(self, seq)
    }

    /// Generates a sequence of `length` observations.
    pub fn sample<R: Rng + ?Sized>(&self, length: usize, rng: &mut R) -> Result<TokenSequence> {
        if length == 0 {
            return Err(Error::param("sample length must be at least 1"));
        }
        let mut ids = Vec::with_capacity(length);
        let mut state = draw(&self.pi, rng);
        for t in 0..length {
            ids.push(draw(self.emission_row(state), rng));
            if t + 1 < length {
                state = draw(self.transition_row(state), rng);
            }
        }
        TokenSequence::new(ids)
    }
}

/// Inverse-CDF draw from a categorical distribution.
fn draw<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = k;
        }
        cum += p;
        if u < cum {
            return k;
        }
    }
    last_positive
}
