//! Presence/absence calls for polymorphic insertion sites from read-count
//! matrices, using a two-component negative-binomial mixture fitted by ECM.
//!
//! Modules, roughly in pipeline order:
//!
//! - [`data`]: count matrix and cohort metadata, CSV ingestion, summaries
//! - [`nb`]: negative binomial, geometric and Poisson log mass functions
//! - [`ecm`]: the mixture fit (E-step, conditional M-steps, stopping rule)
//! - [`selection`]: parameter counts, BIC and ranking of the prior models
//! - [`diagnostics`]: overdispersion residuals and replicate-consistency curves
//! - [`analysis`]: fit summaries, PCA of the posterior and Procrustes alignment
//! - [`simulate`]: synthetic cohorts with known carrier status
//! - [`output`]: CSV/JSON writers for fits and run manifests
//! - [`cli`]: the `ervmix` command line

pub mod analysis;
pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod ecm;
pub mod error;
pub mod nb;
pub mod optimize;
pub mod output;
pub mod selection;
pub mod simulate;

pub use data::{CohortMetadata, CountMatrix, ReplicateMode};
pub use ecm::{fit, FitConfig, FitResult, MixtureParams, PiModel, PosteriorMatrix};
pub use error::{Error, Result};
