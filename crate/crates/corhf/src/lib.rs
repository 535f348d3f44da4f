//! Ensemble data assimilation built around serial (one variable at a time)
//! Bayesian updates on rank histogram priors.
//!
//! The centerpiece is the copula rank histogram filter (CoRHF): each
//! observable and each state variable is updated by a univariate inference
//! whose prior is a rank histogram and whose scaling function combines the
//! observation likelihood with a kernel-estimated conditional copula. The
//! copula carries the dependence between variables, so no linear regression
//! step is needed. Baselines with the same ingredients are provided for
//! comparison: a rank histogram filter (RHF) with linear regression of state
//! increments, a probit-space variant (QCEFF), a stochastic ensemble Kalman
//! filter, and a bootstrap particle filter.
//!
//! Numeric code is generic over the scalar type through [`scalar::Scalar`];
//! `f64` is the default used by the experiment drivers, aliased as [`Real`].

pub mod copula;
pub mod ensemble;
pub mod experiments;
pub mod filters;
pub mod models;
pub mod rng;
pub mod scalar;
pub mod univariate;

mod error;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default scalar type for experiments and the command line interface.
pub type Real = f64;
