//! Differentially private statistical release.
//!
//! A data depositor declares a schema with public ranges for every variable,
//! picks a list of statistics and a global `(ε, δ)` budget, and this crate:
//!
//! * splits the budget across the statistics using optimal composition
//!   ([`composition`], [`budgeter`]),
//! * translates between per-statistic `ε` and a priori accuracy
//!   ([`accuracy`]),
//! * computes the noisy releases ([`mechanisms`]), optionally over derived
//!   variables written in a small per-row transformation language ([`dsl`]),
//! * and records everything in durable ledgers and metadata files
//!   ([`engine`]).
//!
//! Runnable walkthroughs for each capability live in `examples/`.

pub mod accuracy;
pub mod budgeter;
pub mod composition;
pub mod dsl;
pub mod engine;
pub mod evaluation;
pub mod mechanisms;
pub mod request;
pub mod rng;

pub use accuracy::{accuracy_to_epsilon, epsilon_to_accuracy, AccuracyContext};
pub use composition::{CompositionRule, PrivacyParams};
pub use mechanisms::{Estimate, ReleaseValue, StatisticKind, VariableKind, VariableSpec};
pub use request::StatisticRequest;
pub use rng::NoiseRng;
