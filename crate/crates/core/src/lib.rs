//! Specialist ensembles for detecting adversarial examples.
//!
//! Train classifiers restricted to expertise domains derived from a fooling
//! matrix, fuse them with a voting rule, and reject inputs on which the
//! ensemble is not confident enough.

pub mod attacks;
pub mod csvio;
pub mod ensemble;
pub mod error;
pub mod evaluation;
pub mod nn;
pub mod specialization;
pub mod types;

pub use attacks::{AdversarialSample, AttackConfig, AttackSource, AttackSurface};
pub use ensemble::{build_ensemble, decide, Decision, Ensemble, VoteResult, WinnerRule};
pub use error::{Error, Result};
pub use nn::{train, Classifier, MlpArchitecture, TrainConfig};
pub use specialization::{derive_domains, Aggregator, DomainSet, FoolingMatrix};
pub use types::{ExpertiseDomain, LabeledSample, ProbVector};
