//! Forward, backward and Viterbi recursions in natural-log space.
//!
//! Each step of the forward and backward passes is a log-sum-exp over the
//! previous column: the column maximum is factored out, the shifted terms are
//! exponentiated, combined with the linear transition probabilities and the
//! maximum is added back. Only `n` exponentials are evaluated per column.

use super::{HmmParams, TokenSequence};
use crate::error::Result;

/// Numerically stable `ln(sum(exp(xs)))`. Returns `-inf` for an empty slice
/// or when every term is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

fn max_of(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn ln_emissions(model: &HmmParams, symbol: usize, out: &mut [f64]) {
    let m = model.n_symbols();
    let b = model.flat_emission();
    for (i, o) in out.iter_mut().enumerate() {
        *o = b[i * m + symbol].ln();
    }
}

/// Advances a log-forward column by one observation.
fn forward_step(model: &HmmParams, prev: &[f64], symbol: usize, scratch: &mut [f64], next: &mut [f64]) {
    let n = model.n_states();
    let a = model.flat_transition();
    let shift = max_of(prev);
    if shift == f64::NEG_INFINITY {
        next.fill(f64::NEG_INFINITY);
        return;
    }
    for (s, &p) in scratch.iter_mut().zip(prev) {
        *s = (p - shift).exp();
    }
    ln_emissions(model, symbol, next);
    for j in 0..n {
        let mut acc = 0.0;
        for i in 0..n {
            acc += scratch[i] * a[i * n + j];
        }
        next[j] += shift + acc.ln();
    }
}

/// Forward log-likelihood without vocabulary checks.
pub(crate) fn log_likelihood_unchecked(model: &HmmParams, obs: &[usize]) -> f64 {
    let n = model.n_states();
    let mut col = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    ln_emissions(model, obs[0], &mut col);
    for (c, &p) in col.iter_mut().zip(model.initial()) {
        *c += p.ln();
    }
    for &o in &obs[1..] {
        forward_step(model, &col, o, &mut scratch, &mut next);
        std::mem::swap(&mut col, &mut next);
    }
    log_sum_exp(&col)
}

/// Full log-forward lattice, `T x n` row-major.
pub(crate) fn forward_lattice(model: &HmmParams, obs: &[usize]) -> Vec<f64> {
    let n = model.n_states();
    let t_len = obs.len();
    let mut alpha = vec![0.0; t_len * n];
    let mut scratch = vec![0.0; n];
    ln_emissions(model, obs[0], &mut alpha[..n]);
    for (c, &p) in alpha[..n].iter_mut().zip(model.initial()) {
        *c += p.ln();
    }
    for t in 1..t_len {
        let (done, rest) = alpha.split_at_mut(t * n);
        forward_step(model, &done[(t - 1) * n..], obs[t], &mut scratch, &mut rest[..n]);
    }
    alpha
}

/// Full log-backward lattice, `T x n` row-major, with `beta[T-1] = 0`.
pub(crate) fn backward_lattice(model: &HmmParams, obs: &[usize]) -> Vec<f64> {
    let n = model.n_states();
    let a = model.flat_transition();
    let t_len = obs.len();
    let mut beta = vec![0.0; t_len * n];
    let mut w = vec![0.0; n];
    for t in (0..t_len - 1).rev() {
        let (head, tail) = beta.split_at_mut((t + 1) * n);
        let next = &tail[..n];
        ln_emissions(model, obs[t + 1], &mut w);
        for (wj, &bj) in w.iter_mut().zip(next) {
            *wj += bj;
        }
        let shift = max_of(&w);
        let cur = &mut head[t * n..];
        if shift == f64::NEG_INFINITY {
            cur.fill(f64::NEG_INFINITY);
            continue;
        }
        for wj in w.iter_mut() {
            *wj = (*wj - shift).exp();
        }
        for i in 0..n {
            let row = &a[i * n..(i + 1) * n];
            let acc: f64 = row.iter().zip(&w).map(|(x, y)| x * y).sum();
            cur[i] = shift + acc.ln();
        }
    }
    beta
}

/// Result of Viterbi decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiPath {
    pub states: Vec<usize>,
    /// Joint `ln p(path, O | model)` of the returned path.
    pub log_prob: f64,
}

/// Most probable hidden state path. Ties go to the lower state id.
pub fn viterbi(model: &HmmParams, seq: &TokenSequence) -> Result<ViterbiPath> {
    seq.check_vocab(model.n_symbols())?;
    let obs = seq.ids();
    let n = model.n_states();
    let t_len = obs.len();
    let ln_a: Vec<f64> = model.flat_transition().iter().map(|x| x.ln()).collect();
    let mut delta = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut back = vec![0usize; t_len * n];

    ln_emissions(model, obs[0], &mut delta);
    for (d, &p) in delta.iter_mut().zip(model.initial()) {
        *d += p.ln();
    }
    for t in 1..t_len {
        ln_emissions(model, obs[t], &mut next);
        for j in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for i in 0..n {
                let v = delta[i] + ln_a[i * n + j];
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            next[j] += best;
            back[t * n + j] = arg;
        }
        std::mem::swap(&mut delta, &mut next);
    }

    let mut last = 0;
    for i in 1..n {
        if delta[i] > delta[last] {
            last = i;
        }
    }
    let log_prob = delta[last];
    let mut states = vec![0; t_len];
    states[t_len - 1] = last;
    for t in (1..t_len).rev() {
        states[t - 1] = back[t * n + states[t]];
    }
    Ok(ViterbiPath { states, log_prob })
}
