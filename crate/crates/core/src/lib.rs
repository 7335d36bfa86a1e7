//! Degradation-aware face image quality assessment.
//!
//! * [`degradations`]: seeded synthetic degradations, Set S / Set R construction.
//! * [`dsl`]: degradation encoder, dual-set and baseline contrastive losses, training.
//! * [`landmarks`]: landmark-identifier sinusoidal encoding and patch bookkeeping.
//! * [`gfiqa`]: the landmark-guided, degradation-conditioned quality regressor.
//! * [`metrics`]: PLCC, SRCC, average precision and the retrieval experiment.
//! * [`data_io`]: manifests, annotation aggregation, toy data, checkpoints, exports.

pub mod data_io;
pub mod degradations;
pub mod dsl;
pub mod error;
pub mod face;
pub mod gfiqa;
pub mod image;
pub mod landmarks;
pub mod metrics;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
