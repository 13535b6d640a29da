//! Low-observability distribution-system state estimation by regularized
//! matrix completion, solved with a decentralized proximal ADMM.
//!
//! The crate is organized bottom-up:
//!
//! - [`gridmodel`]: admittance model, ingestion, synthetic feeders, exact flow.
//! - [`linflow`]: fixed-point linear load-flow model, area truncation and the
//!   per-area linear maps used by the estimator.
//! - [`datamatrix`]: the 5T×|P| measurement matrix, observation masks, noise.
//! - [`completion`]: factored objective, proximal ADMM and baselines.
//! - [`certificate`]: global-optimality certificate for converged factors.
//! - [`simnet`]: deterministic bulk-synchronous message bus.
//! - [`metrics`]: MAPE/MAE/RMSE and confidence intervals.
//! - [`experiment`]: end-to-end experiment runner shared by the CLI and the
//!   Python bindings.

pub mod certificate;
pub mod completion;
pub mod datamatrix;
pub mod error;
pub mod experiment;
pub mod gridmodel;
pub mod linflow;
pub mod metrics;
pub mod simnet;
mod svd;

pub use error::{Error, Result};
