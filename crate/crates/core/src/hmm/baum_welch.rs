//! Multi-sequence Baum-Welch (expectation-maximization) training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forward::{backward_lattice, forward_lattice, log_sum_exp};
use super::{HmmParams, TokenSequence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_states: usize,
    pub max_iters: usize,
    /// Stop once the total log-likelihood improves by less than this (nats).
    pub tol: f64,
    pub seed: u64,
    /// Lower bound applied to every probability after each M-step.
    /// Zero disables flooring.
    pub floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_states: 5,
            max_iters: 25,
            tol: 1e-4,
            seed: 0,
            floor: 1e-10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.n_states == 0 {
            return Err(Error::param("n_states must be at least 1"));
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters must be at least 1"));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(Error::param(format!("tol must be non-negative, got {}", self.tol)));
        }
        let bound = 1.0 / self.n_states.max(vocab_size) as f64;
        if !(self.floor >= 0.0 && self.floor < bound) {
            return Err(Error::param(format!(
                "floor must lie in [0, {bound}), got {}",
                self.floor
            )));
        }
        Ok(())
    }

    /// Random source seeded from `self.seed`.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: HmmParams,
    /// Total log-likelihood of the training data before each M-step.
    pub history: Vec<f64>,
    pub converged: bool,
}

/// Expected sufficient statistics accumulated over one or more sequences.
struct Counts {
    log_likelihood: f64,
    initial: Vec<f64>,
    transitions: Vec<f64>,
    emissions: Vec<f64>,
}

impl Counts {
    fn zeros(n: usize, m: usize) -> Self {
        Self {
            log_likelihood: 0.0,
            initial: vec![0.0; n],
            transitions: vec![0.0; n * n],
            emissions: vec![0.0; n * m],
        }
    }

    fn add(&mut self, other: &Counts) {
        self.log_likelihood += other.log_likelihood;
        let pairs = [
            (&mut self.initial, &other.initial),
            (&mut self.transitions, &other.transitions),
            (&mut self.emissions, &other.emissions),
        ];
        for (dst, src) in pairs {
            dst.iter_mut().zip(src.iter()).for_each(|(d, s)| *d += s);
        }
    }
}

fn expected_counts(model: &HmmParams, obs: &[usize]) -> Counts {
    let n = model.n_states();
    let m = model.n_symbols();
    let a = model.flat_transition();
    let b = model.flat_emission();
    let alpha = forward_lattice(model, obs);
    let beta = backward_lattice(model, obs);
    let t_len = obs.len();
    let ll = log_sum_exp(&alpha[(t_len - 1) * n..]);

    let mut c = Counts::zeros(n, m);
    c.log_likelihood = ll;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    for t in 0..t_len {
        let at = &alpha[t * n..(t + 1) * n];
        let bt = &beta[t * n..(t + 1) * n];
        for i in 0..n {
            let g = (at[i] + bt[i] - ll).exp();
            if t == 0 {
                c.initial[i] += g;
            }
            c.emissions[i * m + obs[t]] += g;
        }
        if t + 1 == t_len {
            break;
        }
        // xi_t(i, j) = exp(alpha_t(i) + ln A_ij + ln B_j(o_{t+1}) + beta_{t+1}(j) - ll),
        // evaluated as u_i * A_ij * v_j * exp(su + sv - ll).
        let bn = &beta[(t + 1) * n..(t + 2) * n];
        let o = obs[t + 1];
        let su = at.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sv = f64::NEG_INFINITY;
        for j in 0..n {
            v[j] = b[j * m + o].ln() + bn[j];
            sv = sv.max(v[j]);
        }
        if su == f64::NEG_INFINITY || sv == f64::NEG_INFINITY {
            continue;
        }
        let scale = (su + sv - ll).exp();
        for i in 0..n {
            u[i] = (at[i] - su).exp() * scale;
        }
        for vj in v.iter_mut() {
            *vj = (*vj - sv).exp();
        }
        for i in 0..n {
            if u[i] == 0.0 {
                continue;
            }
            let row = &mut c.transitions[i * n..(i + 1) * n];
            for j in 0..n {
                row[j] += u[i] * a[i * n + j] * v[j];
            }
        }
    }
    c
}

/// Normalizes `counts` into `out`, falling back to `previous` when a row
/// carries no expected mass, then applies the probability floor.
fn normalize_row(counts: &[f64], previous: &[f64], floor: f64, out: &mut Vec<f64>) {
    let total: f64 = counts.iter().sum();
    let start = out.len();
    if total > 0.0 && total.is_finite() {
        out.extend(counts.iter().map(|c| c / total));
    } else {
        out.extend_from_slice(previous);
    }
    let row = &mut out[start..];
    if floor > 0.0 {
        row.iter_mut().for_each(|p| *p = p.max(floor));
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= s);
    }
}

fn maximize(model: &HmmParams, c: &Counts, floor: f64) -> HmmParams {
    let n = model.n_states();
    let m = model.n_symbols();
    let mut pi = Vec::with_capacity(n);
    normalize_row(&c.initial, model.initial(), floor, &mut pi);
    let mut a = Vec::with_capacity(n * n);
    let mut b = Vec::with_capacity(n * m);
    for i in 0..n {
        normalize_row(&c.transitions[i * n..(i + 1) * n], model.transition_row(i), floor, &mut a);
        normalize_row(&c.emissions[i * m..(i + 1) * m], model.emission_row(i), floor, &mut b);
    }
    HmmParams::from_flat(n, m, pi, a, b)
}

fn e_step(model: &HmmParams, sequences: &[TokenSequence]) -> Result<Counts> {
    let per_seq: Vec<Counts> = sequences
        .par_iter()
        .map(|s| expected_counts(model, s.ids()))
        .collect();
    // Summed in sequence order so the result is independent of scheduling.
    let mut total = Counts::zeros(model.n_states(), model.n_symbols());
    for (idx, c) in per_seq.iter().enumerate() {
        if !c.log_likelihood.is_finite() {
            return Err(Error::Numeric(format!(
                "sequence {idx} has log-likelihood {} under the current model",
                c.log_likelihood
            )));
        }
        total.add(c);
    }
    Ok(total)
}

/// Trains a model from a random initialization drawn from `rng`.
pub fn baum_welch<R: Rng + ?Sized>(
    sequences: &[TokenSequence],
    vocab_size: usize,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<TrainOutcome> {
    config.validate(vocab_size)?;
    let init = HmmParams::init_random(config.n_states, vocab_size, rng)?;
    baum_welch_from(init, sequences, config)
}

/// Runs EM starting from `initial`. `config.n_states` is ignored in favour
/// of the initial model's shape.
pub fn baum_welch_from(
    initial: HmmParams,
    sequences: &[TokenSequence],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if sequences.is_empty() {
        return Err(Error::param("Baum-Welch needs at least one sequence"));
    }
    let m = initial.n_symbols();
    TrainConfig {
        n_states: initial.n_states(),
        ..config.clone()
    }
    .validate(m)?;
    for (idx, s) in sequences.iter().enumerate() {
        s.check_vocab(m).map_err(|e| Error::Sequence {
            index: idx,
            source: Box::new(e),
        })?;
    }

    let mut model = initial;
    let mut history = Vec::with_capacity(config.max_iters);
    let mut converged = false;
    for _ in 0..config.max_iters {
        let counts = e_step(&model, sequences)?;
        if let Some(&prev) = history.last() {
            if counts.log_likelihood - prev < config.tol {
                history.push(counts.log_likelihood);
                converged = true;
                break;
            }
        }
        history.push(counts.log_likelihood);
        model = maximize(&model, &counts, config.floor);
    }
    Ok(TrainOutcome {
        model,
        history,
        converged,
    })
}
