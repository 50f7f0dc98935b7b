//! Joint offloading and beamforming for integrated sensing, communication
//! and computation across terminals, edge servers and a cloud.
//!
//! Everything numeric is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the aliases below fix the common double-precision instantiations.

pub mod beamform;
pub mod driver;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod offload;
pub mod scalar;
pub mod scenario;

pub use error::{Error, Result};

pub type Scenario64 = scenario::Scenario<f64>;
pub type Scenario32 = scenario::Scenario<f32>;
pub type BeamformerSet64 = metrics::BeamformerSet<f64>;
pub type BeamformerSet32 = metrics::BeamformerSet<f32>;
pub type SolutionRecord64 = driver::SolutionRecord<f64>;
pub type SolutionRecord32 = driver::SolutionRecord<f32>;
