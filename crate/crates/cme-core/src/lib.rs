//! Compressed mixed-effects models.
//!
//! A high-dimensional linear mixed model where the random-effects covariance
//! is replaced by a low-dimensional proxy built from two fixed random
//! projections, fitted by a collapsed Gibbs sampler with a Horseshoe prior
//! on the fixed effects. The crate provides the sampler, an oracle baseline
//! that whitens with the true covariance, sequential 2-means selection,
//! posterior-predictive inference, evaluation metrics, a simulation
//! harness, and CSV/config interchange for the command-line front end.

pub mod config;
pub mod data_io;
pub mod error;
pub mod geweke;
pub mod gibbs;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod reference;
pub mod selection;
pub mod sim;

pub use error::{Error, Result, ValidationReport};
pub use model::{
    ChainState, CmeRng, DataSet, FitConfig, HorseshoeState, PosteriorDraws, PriorConfig,
    ProjectionPair, RunMeta, SeedPlan, SigmaStructure, SubjectBlock, TruthSpec,
};
