//! Estimation and bootstrap inference for two-stage cluster samples.
//!
//! Data follow the model `X_ki = mu + a_k + u_ki`: `K` populations drawn from
//! a superpopulation with between variance `gamma`, then `n_k` individuals
//! drawn within each with within variance `sigma2`. The crate provides
//!
//! * [`model`]: the data model, CSV I/O and seeded synthetic generators;
//! * [`estimators`]: the weighted and unweighted grand means, variance
//!   components and variance estimates;
//! * [`bootstrap`]: four resampling schemes, exact enumeration for tiny
//!   datasets, and confidence intervals;
//! * [`asymptotics`]: normal and Edgeworth approximations, Berry-Esseen
//!   bounds and Kolmogorov-Smirnov distances;
//! * [`montecarlo`]: the replication engine behind coverage, normality and
//!   rate experiments.

pub mod asymptotics;
pub mod bootstrap;
pub mod error;
pub mod estimators;
pub mod model;
pub mod montecarlo;
pub mod numeric;
pub mod rng;

pub use bootstrap::{run_bootstrap, BootstrapRun, IntervalEstimate, SchemeTag, Statistic};
pub use error::{Error, Result};
pub use estimators::{estimate, EstimateReport, EstimatorOptions};
pub use model::{ClusterDataset, DesignParams, DistFamily, Population, TruthParams};
pub use montecarlo::{ExperimentConfig, ExperimentReport};
