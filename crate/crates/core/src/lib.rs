//! Kernel SHAP with paired, without-replacement coalition sampling and
//! bootstrap standard errors.

pub mod bootstrap;
pub mod error;
pub mod model;
pub mod sampling;
pub mod seed;
pub mod shapley;
pub mod study;
pub mod wallenius;

pub use bootstrap::{BootstrapMethod, BootstrapSd, BootstrapSummary, ReplicateWeights};
pub use error::{Error, Result};
pub use model::{ContributionKind, ContributionOracle, ContributionTable, Dataset, LinearModel, SyntheticSpec};
pub use sampling::{CoalitionSample, FrequencySample, PairingStructure, SamplingPlan};
pub use shapley::{CoalitionMask, KernelWeightTable, NormalEquations, ShapleyExplanation, WlsSystem};
pub use study::{ReportFormat, StudyConfig, StudyReport};
pub use wallenius::{Rounding, UrnSpec};
