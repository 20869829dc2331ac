//! Identification of stochastic nonlinear systems through finite-dimensional
//! Koopman and Perron-Frobenius matrices.
//!
//! Data pairs `(x_t, y_t)` from `x_{t+1} = T(x_t) + xi_t` are lifted through a
//! [`Dictionary`] of observables; the least-squares Koopman matrix is
//! `Sigma0_hat^{-1} Sigma1_hat`, and the P-F matrix follows from the Gram
//! matrix as `Lambda^{-1} K^T Lambda`. [`bounds`] evaluates the
//! sample-complexity bound for these estimates and [`experiments`] drives
//! seeded sweeps over the sample count.

// `!(x > y)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod bounds;
pub mod dynamics;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod io;
pub mod pf;
pub mod seed;

pub use basis::{gram, Dictionary, Domain, GramMatrix, GramMethod, MonomialSpec};
pub use bounds::{BoundReport, BoundTerms, ViolationStats};
pub use dynamics::{Example1Params, NoiseModel, SampleSet, SampleSource, StochasticSystem};
pub use error::{Error, Result};
pub use estimator::{estimate_koopman, MomentPair, OperatorEstimate, OperatorKind, ResidualStats};
pub use pf::{koopman_to_pf, PFEstimate};
pub use seed::derive_seed;
