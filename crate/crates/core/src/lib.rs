//! Physical-layer GPS spoofing detection from correlator fingerprints.
//!
//! The pipeline runs from baseband IQ through acquisition and early/prompt/late
//! tracking, six-dimensional high/low correlator features, a multivariate
//! normal model of the genuine population, and an equal-error-rate threshold
//! used for streaming authentic/malicious decisions.

pub mod detector;
pub mod error;
pub mod features;
pub mod io;
pub mod mvn;
pub mod pipeline;
pub mod prn;
pub mod receiver;
pub mod scenario;
pub mod seed;
pub mod sim;

pub use error::{Error, Result};
