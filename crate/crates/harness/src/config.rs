//! Experiment configuration, read from TOML.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use specens::attacks::AttackConfig;
use specens::specialization::Aggregator;
use specens::{MlpArchitecture, TrainConfig, WinnerRule};

use crate::data::MNIST_FILES;
use crate::error::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    Mnist {
        dir: PathBuf,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
    Synthetic {
        num_classes: usize,
        dim: usize,
        train_per_class: usize,
        test_per_class: usize,
        spread: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    pub learning_rate: f64,
    pub momentum: f64,
    pub l2_lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoolingSpec {
    pub epsilon: f64,
    pub per_class: usize,
    #[serde(default = "default_aggregator")]
    pub aggregator: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    #[serde(default = "default_winner_rule")]
    pub winner_rule: String,
    #[serde(default = "default_pure_members")]
    pub pure_members: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlackBoxSpec {
    pub num_adversaries: usize,
    pub fgs_epsilon: f64,
    pub tfgs_epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSpec {
    pub epsilon: f64,
    pub iterations: usize,
}

impl StepSpec {
    pub fn attack_config(&self) -> AttackConfig {
        AttackConfig::new(self.epsilon, self.iterations)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhiteBoxSpec {
    pub num_samples: usize,
    pub fgs: StepSpec,
    pub tfgs: StepSpec,
    pub ifgs: StepSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSpec {
    /// Fixed operating threshold of the specialist ensemble.
    #[serde(default = "default_specialist_tau")]
    pub specialist_tau: f64,
    /// Pins the baselines' threshold instead of minimizing `E_D + E_A`.
    #[serde(default)]
    pub baseline_tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub architecture: ArchitectureSpec,
    pub training: TrainingSpec,
    pub fooling: FoolingSpec,
    pub ensemble: EnsembleSpec,
    pub blackbox: BlackBoxSpec,
    pub whitebox: WhiteBoxSpec,
    pub evaluation: EvaluationSpec,
}

fn default_aggregator() -> String {
    Aggregator::MeanOffDiagonal.as_str().into()
}

fn default_winner_rule() -> String {
    WinnerRule::PerClassCapacity.as_str().into()
}

fn default_pure_members() -> usize {
    5
}

fn default_specialist_tau() -> f64 {
    0.5
}

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Relative paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
        if let DatasetSpec::Mnist { dir, .. } = &mut self.dataset {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization, excluding the output
    /// directory so relocated runs hash the same.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        if let DatasetSpec::Mnist { dir, .. } = &mut c.dataset {
            *dir = PathBuf::new();
        }
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        match &self.dataset {
            DatasetSpec::Mnist { dir, .. } => {
                for f in MNIST_FILES {
                    if !dir.join(f).is_file() {
                        return Err(invalid(format!("missing MNIST file {}", dir.join(f).display())));
                    }
                }
            }
            DatasetSpec::Synthetic { num_classes, .. } if *num_classes < 2 => {
                return Err(invalid("synthetic dataset needs num_classes >= 2"));
            }
            DatasetSpec::Synthetic { .. } => {}
        }
        self.train_config(0).validate().map_err(|e| invalid(e.to_string()))?;
        self.aggregator()?;
        self.winner_rule()?;
        if self.ensemble.pure_members == 0 {
            return Err(invalid("pure_members must be >= 1"));
        }
        if self.fooling.per_class == 0 || self.blackbox.num_adversaries == 0 || self.whitebox.num_samples == 0 {
            return Err(invalid("sample counts must be >= 1"));
        }
        let steps = [
            (self.fooling.epsilon, 1),
            (self.blackbox.fgs_epsilon, 1),
            (self.blackbox.tfgs_epsilon, 1),
            (self.whitebox.fgs.epsilon, self.whitebox.fgs.iterations),
            (self.whitebox.tfgs.epsilon, self.whitebox.tfgs.iterations),
            (self.whitebox.ifgs.epsilon, self.whitebox.ifgs.iterations),
        ];
        for (eps, t) in steps {
            if !(eps > 0.0 && eps.is_finite()) || t == 0 {
                return Err(invalid("attack epsilons must be positive and iterations >= 1"));
            }
        }
        let taus = std::iter::once(self.evaluation.specialist_tau).chain(self.evaluation.baseline_tau);
        for t in taus {
            if !(0.0..1.0).contains(&t) {
                return Err(invalid("thresholds must lie in [0, 1)"));
            }
        }
        Ok(())
    }

    pub fn aggregator(&self) -> Result<Aggregator, HarnessError> {
        Aggregator::parse(&self.fooling.aggregator)
            .ok_or_else(|| invalid(format!("unknown aggregator {:?}", self.fooling.aggregator)))
    }

    pub fn winner_rule(&self) -> Result<WinnerRule, HarnessError> {
        WinnerRule::parse(&self.ensemble.winner_rule)
            .ok_or_else(|| invalid(format!("unknown winner rule {:?}", self.ensemble.winner_rule)))
    }

    pub fn architecture(&self, input_dim: usize, num_classes: usize) -> Result<MlpArchitecture, HarnessError> {
        MlpArchitecture::new(input_dim, self.architecture.hidden.clone(), num_classes)
            .map_err(|e| invalid(e.to_string()))
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.training.learning_rate,
            momentum: self.training.momentum,
            l2_lambda: self.training.l2_lambda,
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            rng_seed: seed,
        }
    }
}
