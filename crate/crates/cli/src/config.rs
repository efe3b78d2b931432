//! Run configuration read from a TOML file.

use std::path::{Path, PathBuf};

use hmme_core::{EnsembleConfig, MlpConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed for every randomized step.
    pub seed: u64,
    pub data: DataSection,
    pub ensemble: EnsembleSection,
    pub train: TrainSection,
    pub mlp: MlpConfig,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Labeled training CSV.
    pub train: Option<PathBuf>,
    /// Labeled evaluation CSV.
    pub test: Option<PathBuf>,
    pub sequence_column: String,
    pub label_column: String,
    /// Subsample positives to `negatives / ratio` before training.
    pub imbalance_ratio: Option<f64>,
    /// Share of the evaluation corpus used to pick the decision threshold.
    pub calibration_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            train: None,
            test: None,
            sequence_column: "sequence".into(),
            label_column: "label".into(),
            imbalance_ratio: None,
            calibration_fraction: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    pub n_positive: usize,
    pub n_negative: usize,
    pub subset_factor: f64,
    pub state_counts: Vec<usize>,
    pub shared_init_seeds: Option<usize>,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        let d = EnsembleConfig::default();
        Self {
            n_positive: d.n_positive,
            n_negative: d.n_negative,
            subset_factor: d.subset_factor,
            state_counts: d.state_counts,
            shared_init_seeds: d.shared_init_seeds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub max_iters: usize,
    pub tol: f64,
    pub floor: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            max_iters: d.max_iters,
            tol: d.tol,
            floor: d.floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

/// A parsed configuration together with where it was read from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    /// Directory against which relative paths in the file are resolved.
    pub base: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self {
                config: RunConfig::default(),
                base: PathBuf::from("."),
            });
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.to_string().trim_end())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, base })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }
}

impl RunConfig {
    pub fn ensemble_config(&self) -> EnsembleConfig {
        EnsembleConfig {
            n_positive: self.ensemble.n_positive,
            n_negative: self.ensemble.n_negative,
            subset_factor: self.ensemble.subset_factor,
            state_counts: self.ensemble.state_counts.clone(),
            train: TrainConfig {
                max_iters: self.train.max_iters,
                tol: self.train.tol,
                floor: self.train.floor,
                ..TrainConfig::default()
            },
            master_seed: self.seed,
            shared_init_seeds: self.ensemble.shared_init_seeds,
        }
    }

    pub fn mlp_config(&self) -> MlpConfig {
        MlpConfig {
            seed: self.seed,
            ..self.mlp.clone()
        }
    }

    /// Checks every section and names the offending key on failure.
    pub fn validate(&self) -> Result<(), CliError> {
        let d = &self.data;
        if !(d.calibration_fraction > 0.0 && d.calibration_fraction < 1.0) {
            return Err(CliError::Config(format!(
                "data.calibration_fraction must be in (0, 1), got {}",
                d.calibration_fraction
            )));
        }
        if let Some(r) = d.imbalance_ratio {
            if !(r >= 1.0 && r.is_finite()) {
                return Err(CliError::Config(format!("data.imbalance_ratio must be at least 1, got {r}")));
            }
        }
        self.ensemble_config()
            .validate()
            .map_err(|e| CliError::Config(format!("[ensemble]/[train]: {e}")))?;
        self.mlp.validate().map_err(|e| CliError::Config(format!("[mlp]: {e}")))?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Hex SHA-256 of the resolved configuration in TOML form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_hash_is_stable() {
        let c = RunConfig::default();
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.hash(), back.hash());
        assert_eq!(c.hash().len(), 64);
        let other = RunConfig { seed: 1, ..c.clone() };
        assert_ne!(other.hash(), c.hash());
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = toml::from_str::<RunConfig>("[ensemble]\nn_postive = 3\n").unwrap_err();
        assert!(err.to_string().contains("n_postive"), "{err}");
    }

    #[test]
    fn validation_names_the_section() {
        let mut c = RunConfig::default();
        c.data.calibration_fraction = 1.5;
        assert!(c.validate().unwrap_err().to_string().contains("calibration_fraction"));
        let mut c = RunConfig::default();
        c.ensemble.subset_factor = 0.0;
        assert!(c.validate().unwrap_err().to_string().contains("[ensemble]"));
    }
}
