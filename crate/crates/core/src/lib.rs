//! Conditional-inference survival trees.
//!
//! Recursive binary partitioning where every split is justified by a
//! permutation test of independence between a covariate and log-rank scores
//! of a right-censored response, stopped by a significance level rather than
//! pruning. Leaves summarize survival with Kaplan-Meier curves. The [`meld`]
//! module computes the MELD score and simulates liver-transplant waitlist
//! cohorts to exercise the whole pipeline.

pub mod cli;
pub mod data;
pub mod document;
pub mod error;
pub mod influence;
pub mod km;
pub mod meld;
pub mod normal;
pub mod partition;
pub mod permstat;
pub mod render;

pub use data::{CaseWeights, Covariate, CovariateKind, Dataset, Schema, Split, Surv};
pub use document::TreeDocument;
pub use error::{Error, Result};
pub use partition::{fit, fit_weighted, FitConfig, Tree};
pub use permstat::TestMethod;
