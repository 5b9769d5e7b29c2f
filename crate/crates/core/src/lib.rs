//! Approximate Bayesian doubly-robust estimation of the average treatment
//! effect of a binary treatment.
//!
//! The pipeline is: fit a propensity model ([`propensity`]), optionally trim
//! by nearest-neighbour matching ([`matching`]), then draw Bayesian-bootstrap
//! refits of the κ-weighted outcome model, optionally mix in a prior, and
//! form the posterior predictive ATE ([`bayes_boot`]). [`estimators`] wires
//! these together into OR, IPW, DR and naïve estimators; [`sim`] runs the
//! five-configuration simulation study.

pub mod bayes_boot;
pub mod data;
pub mod error;
pub mod estimators;
pub mod glm;
pub mod matching;
pub mod propensity;
pub mod report;
pub mod sim;
pub mod stream;

pub use bayes_boot::{AteDistribution, PosteriorDraws, PriorKind, PriorSpec};
pub use data::{load_csv, save_csv, Dataset, ObservationRecord, Violation};
pub use error::{Error, Result};
pub use estimators::{EstimateReport, EstimatorConfig, EstimatorKind, ReportKind, TreatmentPrior};
pub use glm::{DesignMatrix, DesignSpec, Family, GlmFit};
pub use matching::{MatchResult, MatchSettings};
pub use propensity::{OverlapSummary, PropensityFit};
pub use sim::{DgpParams, SimConfig, SimulationReport};
pub use stream::SeedStream;
