//! Ensembles of discrete hidden Markov models for binary sequence
//! classification.
//!
//! The crate covers the full pipeline: log-space HMM inference and
//! Baum-Welch training, subset-bagged per-class ensembles with a pairwise
//! composite score, normalized likelihood feature vectors, a diversity
//! diagnostic between member models, ranking metrics and a small
//! feed-forward classification head.
//!
//! ```
//! use hmme_core::{HmmParams, Vocabulary};
//!
//! let vocab = Vocabulary::new(["A", "B"]).unwrap();
//! let hmm = HmmParams::new(
//!     vec![1.0],
//!     vec![vec![1.0]],
//!     vec![vec![0.25, 0.75]],
//! )
//! .unwrap();
//! let seq = vocab.encode_chars("AB").unwrap();
//! assert!((hmm.log_likelihood(&seq).unwrap() - (0.25f64 * 0.75).ln()).abs() < 1e-12);
//! ```

pub mod classifier;
pub mod dataset;
pub mod diversity;
pub mod ensemble;
pub mod error;
pub mod hmm;
pub mod metrics;
pub mod report;
pub mod seed;

pub use classifier::{gradient_check, mlp_predict, mlp_train, MlpConfig, MlpModel};
pub use dataset::{load_corpus, load_csv, Corpus, LabeledDataset, Provenance};
pub use diversity::{hellinger, hmm_distance, similarity_matrix, stationary_distribution, SimilarityMatrix};
pub use ensemble::{
    choose_threshold, classify, train_ensemble, train_ensemble_serial, CompositeScore, EnsembleConfig,
    EnsembleModel, FeatureVector, LikelihoodProfile,
};
pub use error::{Error, Result};
pub use hmm::{baum_welch, HmmParams, TokenSequence, TrainConfig, TrainOutcome, Vocabulary};
pub use metrics::{average_precision, roc_auc, Confusion, EvalReport};
