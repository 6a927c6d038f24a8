//! Socially-aware robot navigation with language guidance.
//!
//! A robot moves through an ORCA crowd while two planners propose velocities:
//! a language model prompted with a textual rendering of the scene, and a
//! spatio-temporal transformer policy (or its deterministic fallback). A
//! graph-of-thoughts evaluator scores both proposals and the executed action is
//! their weighted blend. User utterances become [`guidance::GlobalGuidance`],
//! which can be replanned mid-episode.
//!
//! Numeric kernels (geometry, the velocity-obstacle LP, attention) are generic
//! over [`Real`]; the aliases below fix them to `f64` for the simulator.

pub mod episode;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod guidance;
pub mod lfm;
pub mod llm;
pub mod lnm;
pub mod rlnm;
pub mod scalar;
pub mod sim;
pub mod types;

pub use error::{Error, Result};
pub use scalar::Real;

/// World-frame 2-vector in meters or m/s.
pub type Vec2 = geometry::Vector2<f64>;
pub type Matrix = rlnm::tensor::Matrix<f64>;
pub type Matrix32 = rlnm::tensor::Matrix<f32>;
pub type PolicyWeights = rlnm::network::PolicyWeights<f64>;
pub type PolicyWeights32 = rlnm::network::PolicyWeights<f32>;
