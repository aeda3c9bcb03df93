//! Functional ANOVA decomposition of dense neural networks.
//!
//! A scalar network is trained through its K-th mixed partial derivative,
//! so that the network itself becomes an antiderivative of the fitted
//! function. Definite integrals over any axis-aligned subspace then reduce
//! to signed sums of network evaluations at box corners, which makes the
//! full functional ANOVA decomposition (orthogonal components, component
//! variances, Sobol indices, interaction-truncated predictors) available
//! in closed form.
//!
//! Module map:
//!
//! - [`multidual`]: truncated multivariate jet algebra carrying all mixed
//!   partials that are first order in each variable.
//! - [`paramgrad`]: reverse-mode tape over multidual values, for parameter
//!   gradients of losses on the mixed partial.
//! - [`network`]: dense feed-forward network with plain and multidual
//!   evaluation, plus checkpointing.
//! - [`training`]: adam / L-BFGS fitting of the mixed partial with
//!   validation early stopping.
//! - [`anova`]: corner-sum integrals, component functions, variances,
//!   Sobol indices, truncated predictors.
//! - [`data`]: test-function generators, CSV ingestion, normalization,
//!   splits.
//! - [`oracle`]: independent QMC / tensor-grid / finite-difference /
//!   brute-force checks.
//! - [`cli`]: command-line front end.

pub mod anova;
pub mod cli;
pub mod data;
pub mod multidual;
pub mod network;
pub mod oracle;
pub mod paramgrad;
pub mod training;
