//! Direct estimation and inference of correlations between latent
//! higher-level variables (proteins, pathways) from lower-level
//! measurements (peptides, genes), without aggregating the lower-level
//! data into per-subject scores.
//!
//! The pipeline is:
//!
//! 1. [`data`]: binding map, unique-variable sets, sample matrix.
//! 2. [`moments`]: cross-products and streamed fourth-moment quadratic forms.
//! 3. [`estimator`]: the direct covariance / correlation estimator.
//! 4. [`inference`]: asymptotic variances, threshold tests and p-values.
//! 5. [`shrinkage`]: positive-definite shrinkage toward the diagonal.
//!
//! [`aggregate`] holds the aggregation baselines used for comparison and
//! [`sim`] the simulation harness.

// `!(x > 0.0)` is used on purpose to reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregate;
pub mod data;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod linalg;
pub mod moments;
pub mod shrinkage;
pub mod sim;
pub mod table;

pub use nalgebra::DMatrix;

pub use aggregate::{aggregate, baseline_correlation, fisher_test, AggregateScores, Method};
pub use data::{check_uvc, BindingMap, CheckedMap, PairSet, SampleMatrix, UniqueSets, UvcPolicy};
pub use error::{Error, ErrorKind, Result};
pub use estimator::{estimate, CovEstimate};
pub use inference::{infer_all, InferenceTable, PairInference};
pub use moments::{cross_products, CrossProducts, MomentEngine, QuadFormKey, VDenominator};
pub use shrinkage::{cross_validate_kappa, CvReport, ShrinkageResult};
