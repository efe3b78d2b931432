//! Ensemble diversity diagnostics.
//!
//! Two HMMs are compared by matching their states through a minimum-cost
//! assignment on the Hellinger distances between emission rows, then
//! averaging the matched costs weighted by each state's stationary
//! probability. Similarity is `1 - distance`.

mod assignment;

use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;

use crate::ensemble::EnsembleModel;
use crate::error::{Error, Result};
use crate::hmm::{HmmParams, STOCHASTIC_TOL};

pub use assignment::linear_sum_assignment;

const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITERS: usize = 100_000;
const DAMPING: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    pub probabilities: Vec<f64>,
    /// Set when the chain is reducible or periodic, or plain power
    /// iteration failed to settle; the damped fixed point is returned then.
    pub degenerate: bool,
    pub converged: bool,
    pub iterations: usize,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Whether the support graph of `a` is strongly connected and aperiodic.
fn is_ergodic(a: &[Vec<f64>]) -> bool {
    let n = a.len();
    let reach = |forward: bool| -> Vec<Option<usize>> {
        let mut level = vec![None; n];
        level[0] = Some(0);
        let mut queue = std::collections::VecDeque::from([0usize]);
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                let edge = if forward { a[i][j] } else { a[j][i] };
                if edge > 0.0 && level[j].is_none() {
                    level[j] = Some(level[i].unwrap() + 1);
                    queue.push_back(j);
                }
            }
        }
        level
    };
    let fwd = reach(true);
    if fwd.iter().any(Option::is_none) || reach(false).iter().any(Option::is_none) {
        return false;
    }
    let mut period = 0;
    for i in 0..n {
        for j in 0..n {
            if a[i][j] > 0.0 {
                let li = fwd[i].unwrap() as isize;
                let lj = fwd[j].unwrap() as isize;
                period = gcd(period, (li + 1 - lj).unsigned_abs());
            }
        }
    }
    period == 1
}

fn iterate(a: &[Vec<f64>], damping: f64) -> (Vec<f64>, bool, usize) {
    let n = a.len();
    let uniform = 1.0 / n as f64;
    let mut v = vec![uniform; n];
    let mut next = vec![0.0; n];
    for iter in 1..=POWER_MAX_ITERS {
        next.fill(0.0);
        for (i, row) in a.iter().enumerate() {
            for (nj, &aij) in next.iter_mut().zip(row) {
                *nj += v[i] * aij;
            }
        }
        let mut sum = 0.0;
        for x in next.iter_mut() {
            *x = (1.0 - damping) * *x + damping * uniform;
            sum += *x;
        }
        next.iter_mut().for_each(|x| *x /= sum);
        let diff: f64 = v.iter().zip(&next).map(|(x, y)| (x - y).abs()).sum();
        std::mem::swap(&mut v, &mut next);
        if diff < POWER_TOL {
            return (v, true, iter);
        }
    }
    (v, false, POWER_MAX_ITERS)
}

/// Left fixed point `v A = v` by power iteration from the uniform vector.
pub fn stationary_distribution(a: &[Vec<f64>]) -> Result<StationaryDistribution> {
    let n = a.len();
    if n == 0 || a.iter().any(|r| r.len() != n) {
        return Err(Error::param("transition matrix must be square and non-empty"));
    }
    for (i, row) in a.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|x| x.is_nan() || *x < 0.0) || (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::param(format!("row {i} is not a probability distribution")));
        }
    }
    if is_ergodic(a) {
        let (v, converged, iterations) = iterate(a, 0.0);
        if converged {
            return Ok(StationaryDistribution {
                probabilities: v,
                degenerate: false,
                converged,
                iterations,
            });
        }
    }
    let (v, converged, iterations) = iterate(a, DAMPING);
    Ok(StationaryDistribution {
        probabilities: v,
        degenerate: true,
        converged,
        iterations,
    })
}

/// `H(p, q) = sqrt(sum((sqrt(p) - sqrt(q))^2) / 2)`, in `[0, 1]`.
pub fn hellinger(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::param(format!(
            "distributions differ in length ({} vs {})",
            p.len(),
            q.len()
        )));
    }
    for (name, d) in [("p", p), ("q", q)] {
        let sum: f64 = d.iter().sum();
        if d.iter().any(|x| x.is_nan() || *x < 0.0) || (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::param(format!("{name} is not a probability vector")));
        }
    }
    Ok(hellinger_unchecked(p, q))
}

fn hellinger_unchecked(p: &[f64], q: &[f64]) -> f64 {
    let s: f64 = p
        .iter()
        .zip(q)
        .map(|(a, b)| {
            let d = a.sqrt() - b.sqrt();
            d * d
        })
        .sum();
    (s / 2.0).sqrt().min(1.0)
}

fn lexicographic(x: &[f64], y: &[f64]) -> Ordering {
    x.iter()
        .zip(y)
        .map(|(a, b)| a.total_cmp(b))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| x.len().cmp(&y.len()))
}

/// Fixed ordering of models so that `distance(a, b)` and `distance(b, a)`
/// solve the same assignment problem.
fn canonical_order(a: &HmmParams, b: &HmmParams) -> Ordering {
    a.n_states()
        .cmp(&b.n_states())
        .then_with(|| lexicographic(a.flat_emission(), b.flat_emission()))
        .then_with(|| lexicographic(a.flat_transition(), b.flat_transition()))
        .then_with(|| lexicographic(a.initial(), b.initial()))
}

fn distance_with(a: &HmmParams, va: &[f64], b: &HmmParams, vb: &[f64]) -> f64 {
    let (a, va, b, vb) = if canonical_order(a, b) == Ordering::Greater {
        (b, vb, a, va)
    } else {
        (a, va, b, vb)
    };
    // a now has no more states than b.
    let cost: Vec<Vec<f64>> = (0..a.n_states())
        .map(|i| {
            (0..b.n_states())
                .map(|j| hellinger_unchecked(a.emission_row(i), b.emission_row(j)))
                .collect()
        })
        .collect();
    let pairs = linear_sum_assignment(&cost).expect("Hellinger costs are finite");
    let mut matched = vec![false; b.n_states()];
    let mut weighted = 0.0;
    let mut weight = 0.0;
    for &(i, j) in &pairs {
        matched[j] = true;
        let w = (va[i] + vb[j]) / 2.0;
        weighted += w * cost[i][j];
        weight += w;
    }
    for (j, _) in matched.iter().enumerate().filter(|(_, &m)| !m) {
        weighted += vb[j];
        weight += vb[j];
    }
    if weight > 0.0 {
        (weighted / weight).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Assignment-matched, stationary-weighted Hellinger distance between the
/// emission distributions of two models. State counts may differ; surplus
/// states of the larger model count at unit cost.
pub fn hmm_distance(a: &HmmParams, b: &HmmParams) -> Result<f64> {
    if a.n_symbols() != b.n_symbols() {
        return Err(Error::param(format!(
            "vocabulary sizes differ ({} vs {})",
            a.n_symbols(),
            b.n_symbols()
        )));
    }
    let va = stationary_distribution(&a.transition_matrix())?.probabilities;
    let vb = stationary_distribution(&b.transition_matrix())?.probabilities;
    Ok(distance_with(a, &va, b, &vb))
}

/// Pairwise similarities `1 - D(i, j)` over all members, positives first.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    n_positive: usize,
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Mean similarity over distinct pairs within the same class block.
    /// `None` when both blocks hold a single model.
    pub fn mean_intra_class_similarity(&self) -> Option<f64> {
        let n = self.len();
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..n {
            for j in i + 1..n {
                if (i < self.n_positive) == (j < self.n_positive) {
                    sum += self.values[i][j];
                    count += 1;
                }
            }
        }
        (count > 0).then(|| sum / count as f64)
    }

    /// CSV with a header row and a leading label column.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["model".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for (label, row) in self.labels.iter().zip(&self.values) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|x| x.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn similarity_matrix(ensemble: &EnsembleModel) -> Result<SimilarityMatrix> {
    let models: Vec<&HmmParams> = ensemble.models().collect();
    let n_pos = ensemble.positive_models().len();
    let labels: Vec<String> = (0..models.len())
        .map(|k| {
            if k < n_pos {
                format!("pos_{k}")
            } else {
                format!("neg_{}", k - n_pos)
            }
        })
        .collect();
    let stationary: Vec<Vec<f64>> = models
        .par_iter()
        .map(|m| stationary_distribution(&m.transition_matrix()).map(|s| s.probabilities))
        .collect::<Result<_>>()?;
    let n = models.len();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i..n)
                .map(|j| {
                    if i == j {
                        1.0
                    } else {
                        1.0 - distance_with(models[i], &stationary[i], models[j], &stationary[j])
                    }
                })
                .collect()
        })
        .collect();
    let mut values = vec![vec![0.0; n]; n];
    for (i, row) in upper.iter().enumerate() {
        for (k, &s) in row.iter().enumerate() {
            values[i][i + k] = s;
            values[i + k][i] = s;
        }
    }
    Ok(SimilarityMatrix {
        labels,
        values,
        n_positive: n_pos,
    })
}
