//! HMM ensembles for binary sequence classification.
//!
//! `N` models are trained on independent random subsets of the positive
//! class and `M` on subsets of the negative class. A sequence is scored by
//! counting, over all `N x M` positive/negative model pairs, how often the
//! positive model assigns the higher likelihood. Likelihoods of different
//! sequences are never compared with each other, which makes the score
//! insensitive to sequence length.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledDataset, Provenance};
use crate::error::{Error, Result};
use crate::hmm::{baum_welch, HmmParams, TokenSequence, TrainConfig, Vocabulary};
use crate::seed::derive_seed;

const STREAM_JOB: u64 = 1;
const STREAM_SUBSET: u64 = 2;
const STREAM_INIT: u64 = 3;
const STREAM_SHARED_INIT: u64 = 4;

/// Anything that assigns a log-likelihood to a sequence can take part in
/// pairwise matchups.
pub trait SequenceModel: Sync {
    fn log_likelihood(&self, seq: &TokenSequence) -> Result<f64>;
}

impl SequenceModel for HmmParams {
    fn log_likelihood(&self, seq: &TokenSequence) -> Result<f64> {
        HmmParams::log_likelihood(self, seq)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    /// Number of positive-class models (`N`).
    pub n_positive: usize,
    /// Number of negative-class models (`M`).
    pub n_negative: usize,
    /// Fraction of a class each model is trained on.
    pub subset_factor: f64,
    /// State counts cycled across the models of each class.
    pub state_counts: Vec<usize>,
    /// Template for every member; `n_states` and `seed` are set per job.
    pub train: TrainConfig,
    pub master_seed: u64,
    /// Draw initializations from this many shared seeds instead of one per
    /// model. Only useful for reproducing redundant ensembles.
    pub shared_init_seeds: Option<usize>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            n_positive: 250,
            n_negative: 250,
            subset_factor: 0.01,
            state_counts: vec![3, 4, 5],
            train: TrainConfig::default(),
            master_seed: 0,
            shared_init_seeds: None,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_positive == 0 || self.n_negative == 0 {
            return Err(Error::param("ensemble needs at least one model per class"));
        }
        if !(self.subset_factor > 0.0 && self.subset_factor <= 1.0) {
            return Err(Error::param(format!(
                "subset_factor must be in (0, 1], got {}",
                self.subset_factor
            )));
        }
        if self.state_counts.is_empty() || self.state_counts.contains(&0) {
            return Err(Error::param("state_counts must be non-empty and positive"));
        }
        if self.shared_init_seeds == Some(0) {
            return Err(Error::param("shared_init_seeds must be at least 1"));
        }
        Ok(())
    }

    pub fn total_models(&self) -> usize {
        self.n_positive + self.n_negative
    }
}

/// One ensemble member to train.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingJob {
    /// Position in the model list: positives first, then negatives.
    pub job: usize,
    pub label: bool,
    /// Dataset row indices, ascending.
    pub indices: Vec<usize>,
    /// Per-model seed from which the subset and initialization derive.
    pub seed: u64,
    pub init_seed: u64,
    pub n_states: usize,
}

/// Subset size for a class of `class_size` rows.
pub fn subset_size(subset_factor: f64, class_size: usize) -> usize {
    ((subset_factor * class_size as f64).ceil() as usize).clamp(1, class_size)
}

/// Plans the `N + M` training jobs. Subsets are drawn independently per
/// model (uniformly, without replacement within a subset), so subsets of
/// different models may overlap.
pub fn make_training_jobs(dataset: &LabeledDataset, config: &EnsembleConfig) -> Result<Vec<TrainingJob>> {
    config.validate()?;
    let positives = dataset.class_indices(true);
    let negatives = dataset.class_indices(false);
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::data(format!(
            "training data needs both classes (positives: {}, negatives: {})",
            positives.len(),
            negatives.len()
        )));
    }

    let plan = (0..config.n_positive)
        .map(|k| (true, k))
        .chain((0..config.n_negative).map(|k| (false, k)));
    let jobs = plan
        .enumerate()
        .map(|(job, (label, within_class))| {
            let class = if label { &positives } else { &negatives };
            let seed = derive_seed(config.master_seed, STREAM_JOB, job as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SUBSET, 0));
            let size = subset_size(config.subset_factor, class.len());
            let mut indices: Vec<usize> = index::sample(&mut rng, class.len(), size)
                .into_iter()
                .map(|k| class[k])
                .collect();
            indices.sort_unstable();
            let init_seed = match config.shared_init_seeds {
                Some(g) => derive_seed(config.master_seed, STREAM_SHARED_INIT, (job % g) as u64),
                None => derive_seed(seed, STREAM_INIT, 0),
            };
            TrainingJob {
                job,
                label,
                indices,
                seed,
                init_seed,
                n_states: config.state_counts[within_class % config.state_counts.len()],
            }
        })
        .collect();
    Ok(jobs)
}

/// Probability that a given training sequence is in none of `n_models`
/// subsets: `(1 - s)^N`.
pub fn expected_unsampled_fraction(subset_factor: f64, n_models: usize) -> Result<f64> {
    if !(subset_factor > 0.0 && subset_factor <= 1.0) {
        return Err(Error::param(format!("subset factor must be in (0, 1], got {subset_factor}")));
    }
    if n_models == 0 {
        return Err(Error::param("model count must be at least 1"));
    }
    Ok((1.0 - subset_factor).powi(n_models as i32))
}

/// Per-job training record.
#[derive(Debug, Clone, PartialEq)]
pub struct JobReport {
    pub job: usize,
    pub label: bool,
    pub n_states: usize,
    pub subset_len: usize,
    pub seed: u64,
    pub history: Vec<f64>,
    pub converged: bool,
}

/// A trained ensemble. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEnsemble")]
pub struct EnsembleModel {
    config: EnsembleConfig,
    vocabulary: Vocabulary,
    positive_models: Vec<HmmParams>,
    negative_models: Vec<HmmParams>,
    seeds: Vec<u64>,
    #[serde(default)]
    provenance: Provenance,
}

#[derive(Deserialize)]
struct RawEnsemble {
    config: EnsembleConfig,
    vocabulary: Vocabulary,
    positive_models: Vec<HmmParams>,
    negative_models: Vec<HmmParams>,
    seeds: Vec<u64>,
    #[serde(default)]
    provenance: Provenance,
}

impl TryFrom<RawEnsemble> for EnsembleModel {
    type Error = Error;

    fn try_from(r: RawEnsemble) -> Result<Self> {
        EnsembleModel::new(r.config, r.vocabulary, r.positive_models, r.negative_models, r.seeds, r.provenance)
    }
}

fn train_job(dataset: &LabeledDataset, config: &EnsembleConfig, job: &TrainingJob) -> Result<(HmmParams, JobReport)> {
    let sequences: Vec<TokenSequence> = job
        .indices
        .iter()
        .map(|&i| dataset.sequences()[i].clone())
        .collect();
    let train = TrainConfig {
        n_states: job.n_states,
        seed: job.init_seed,
        ..config.train.clone()
    };
    let outcome = baum_welch(&sequences, dataset.vocabulary().len(), &train, &mut train.rng())
        .map_err(|e| Error::Job {
            job: job.job,
            source: Box::new(e),
        })?;
    let report = JobReport {
        job: job.job,
        label: job.label,
        n_states: job.n_states,
        subset_len: job.indices.len(),
        seed: job.seed,
        history: outcome.history,
        converged: outcome.converged,
    };
    Ok((outcome.model, report))
}

/// Trains every job, in parallel when `parallel` is set. The result does not
/// depend on the execution order.
pub fn train_ensemble_with_reports(
    dataset: &LabeledDataset,
    config: &EnsembleConfig,
    parallel: bool,
) -> Result<(EnsembleModel, Vec<JobReport>)> {
    let jobs = make_training_jobs(dataset, config)?;
    let results: Vec<Result<(HmmParams, JobReport)>> = if parallel {
        jobs.par_iter().map(|j| train_job(dataset, config, j)).collect()
    } else {
        jobs.iter().map(|j| train_job(dataset, config, j)).collect()
    };
    let mut models = Vec::with_capacity(jobs.len());
    let mut reports = Vec::with_capacity(jobs.len());
    for r in results {
        let (m, rep) = r?;
        models.push(m);
        reports.push(rep);
    }
    let negative_models = models.split_off(config.n_positive);
    let model = EnsembleModel::new(
        config.clone(),
        dataset.vocabulary().clone(),
        models,
        negative_models,
        jobs.iter().map(|j| j.seed).collect(),
        dataset.provenance.clone(),
    )?;
    Ok((model, reports))
}

/// Trains the ensemble using the global rayon pool.
pub fn train_ensemble(dataset: &LabeledDataset, config: &EnsembleConfig) -> Result<EnsembleModel> {
    train_ensemble_with_reports(dataset, config, true).map(|(m, _)| m)
}

/// Trains the ensemble on the calling thread only.
pub fn train_ensemble_serial(dataset: &LabeledDataset, config: &EnsembleConfig) -> Result<EnsembleModel> {
    train_ensemble_with_reports(dataset, config, false).map(|(m, _)| m)
}

/// Number of positive-over-negative pairwise wins, in `[0, N * M]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CompositeScore(pub u64);

impl CompositeScore {
    pub fn value(self) -> u64 {
        self.0
    }
}

/// Counts pairs `(i, j)` with `positive[i] > negative[j]` strictly; ties
/// contribute nothing. Runs in `O((N + M) log M)`.
pub fn composite_from_log_likelihoods(positive: &[f64], negative: &[f64]) -> CompositeScore {
    let mut sorted: Vec<f64> = negative.iter().copied().filter(|x| !x.is_nan()).collect();
    sorted.sort_by(f64::total_cmp);
    let wins = positive
        .iter()
        .map(|&p| sorted.partition_point(|&n| n < p) as u64)
        .sum();
    CompositeScore(wins)
}

/// Log-likelihoods of one sequence under every member.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodProfile {
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

impl LikelihoodProfile {
    pub fn composite(&self) -> CompositeScore {
        composite_from_log_likelihoods(&self.positive, &self.negative)
    }

    /// Positive block followed by negative block.
    pub fn concatenated(&self) -> Vec<f64> {
        self.positive.iter().chain(&self.negative).copied().collect()
    }
}

/// Profile of `seq` under arbitrary member models.
pub fn likelihood_profile<P: SequenceModel, Q: SequenceModel>(
    positive: &[P],
    negative: &[Q],
    seq: &TokenSequence,
) -> Result<LikelihoodProfile> {
    Ok(LikelihoodProfile {
        positive: positive.iter().map(|m| m.log_likelihood(seq)).collect::<Result<_>>()?,
        negative: negative.iter().map(|m| m.log_likelihood(seq)).collect::<Result<_>>()?,
    })
}

/// Composite score of `seq` under arbitrary member models.
pub fn composite_score_with<P: SequenceModel, Q: SequenceModel>(
    positive: &[P],
    negative: &[Q],
    seq: &TokenSequence,
) -> Result<CompositeScore> {
    likelihood_profile(positive, negative, seq).map(|p| p.composite())
}

/// Unit-L2-norm vector of member log-likelihoods, positives first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn from_raw(mut raw: Vec<f64>) -> Result<Self> {
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Numeric(format!("cannot normalize a vector of norm {norm}")));
        }
        raw.iter_mut().for_each(|x| *x /= norm);
        Ok(Self(raw))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

fn indexed<T: Send>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            r.map_err(|e| Error::Sequence {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

impl EnsembleModel {
    pub fn new(
        config: EnsembleConfig,
        vocabulary: Vocabulary,
        positive_models: Vec<HmmParams>,
        negative_models: Vec<HmmParams>,
        seeds: Vec<u64>,
        provenance: Provenance,
    ) -> Result<Self> {
        config.validate()?;
        if positive_models.len() != config.n_positive || negative_models.len() != config.n_negative {
            return Err(Error::param(format!(
                "expected {} + {} models, got {} + {}",
                config.n_positive,
                config.n_negative,
                positive_models.len(),
                negative_models.len()
            )));
        }
        if seeds.len() != config.total_models() {
            return Err(Error::param(format!(
                "expected {} seeds, got {}",
                config.total_models(),
                seeds.len()
            )));
        }
        let m = vocabulary.len();
        if let Some(bad) = positive_models
            .iter()
            .chain(&negative_models)
            .position(|p| p.n_symbols() != m)
        {
            return Err(Error::param(format!(
                "model {bad} does not match the vocabulary size {m}"
            )));
        }
        Ok(Self {
            config,
            vocabulary,
            positive_models,
            negative_models,
            seeds,
            provenance,
        })
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.config
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn positive_models(&self) -> &[HmmParams] {
        &self.positive_models
    }

    pub fn negative_models(&self) -> &[HmmParams] {
        &self.negative_models
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// All members, positives first.
    pub fn models(&self) -> impl Iterator<Item = &HmmParams> {
        self.positive_models.iter().chain(&self.negative_models)
    }

    /// Upper end of the composite score range, `N * M`.
    pub fn max_score(&self) -> u64 {
        (self.positive_models.len() * self.negative_models.len()) as u64
    }

    pub fn profile(&self, seq: &TokenSequence) -> Result<LikelihoodProfile> {
        seq.check_vocab(self.vocabulary.len())?;
        likelihood_profile(&self.positive_models, &self.negative_models, seq)
    }

    pub fn composite_score(&self, seq: &TokenSequence) -> Result<CompositeScore> {
        self.profile(seq).map(|p| p.composite())
    }

    /// Profiles for a whole corpus, evaluated concurrently, in input order.
    pub fn profiles(&self, corpus: &[TokenSequence]) -> Result<Vec<LikelihoodProfile>> {
        if corpus.is_empty() {
            return Err(Error::param("corpus is empty"));
        }
        indexed(corpus.par_iter().map(|s| self.profile(s)).collect())
    }

    pub fn score_corpus(&self, corpus: &[TokenSequence]) -> Result<Vec<CompositeScore>> {
        Ok(self.profiles(corpus)?.iter().map(LikelihoodProfile::composite).collect())
    }

    pub fn score_corpus_serial(&self, corpus: &[TokenSequence]) -> Result<Vec<CompositeScore>> {
        if corpus.is_empty() {
            return Err(Error::param("corpus is empty"));
        }
        indexed(corpus.iter().map(|s| self.composite_score(s)).collect())
    }

    /// Samples `count` sequences of `length` tokens from one class; each
    /// sequence comes from a uniformly chosen member of that class.
    pub fn generate(&self, positive: bool, count: usize, length: usize, seed: u64) -> Result<Vec<TokenSequence>> {
        let members = if positive { &self.positive_models } else { &self.negative_models };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let k = rng.random_range(0..members.len());
                members[k].sample(length, &mut rng)
            })
            .collect()
    }

    pub fn feature_vectors(&self, corpus: &[TokenSequence]) -> Result<Vec<FeatureVector>> {
        self.profiles(corpus)?
            .into_iter()
            .map(|p| FeatureVector::from_raw(p.concatenated()))
            .collect()
    }
}

/// Picks the threshold maximizing F1 over the distinct observed scores and
/// `max + 1`. Ties go to the larger threshold.
pub fn choose_threshold(scores: &[CompositeScore], labels: &[bool]) -> Result<u64> {
    if scores.len() != labels.len() {
        return Err(Error::param("scores and labels differ in length"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::param("threshold selection needs both classes"));
    }
    let mut candidates: Vec<u64> = scores.iter().map(|s| s.0).collect();
    candidates.sort_unstable();
    candidates.dedup();
    candidates.push(candidates.last().unwrap() + 1);

    let mut best = (f64::NEG_INFINITY, 0);
    for &t in &candidates {
        let (mut tp, mut fp) = (0usize, 0usize);
        for (s, &l) in scores.iter().zip(labels) {
            if s.0 >= t {
                if l {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        let fn_ = n_pos - tp;
        let f1 = (2 * tp) as f64 / (2 * tp + fp + fn_) as f64;
        if f1 >= best.0 {
            best = (f1, t);
        }
    }
    Ok(best.1)
}

/// Label 1 iff `score >= threshold`.
pub fn classify(scores: &[CompositeScore], threshold: u64) -> Vec<bool> {
    scores.iter().map(|s| s.0 >= threshold).collect()
}

/// One model per class: positive iff the positive model's likelihood is
/// strictly higher.
pub fn singleton_classify(pos: &HmmParams, neg: &HmmParams, seq: &TokenSequence) -> Result<bool> {
    Ok(pos.log_likelihood(seq)? > neg.log_likelihood(seq)?)
}
