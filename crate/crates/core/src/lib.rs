//! Cell-free massive MIMO with hybrid analog/digital access points.
//!
//! The pipeline per network drop is: geometry and large-scale fading
//! ([`scenario`], [`channel`]) -> analog beamformer design ([`hybrid`]) ->
//! pilot assignment ([`pilots`]) -> MMSE estimation ([`estimation`]) ->
//! exact Monte Carlo link evaluation ([`link`]) and its deterministic
//! equivalents ([`rmt`]). [`bounds`] holds the large-array MRC gap bounds and
//! [`experiment`] runs seeded campaigns over many drops.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the aliases at
//! the crate root fix the common `f64` case.

pub mod bounds;
pub mod channel;
pub mod error;
pub mod estimation;
pub mod experiment;
pub mod hybrid;
pub mod linalg;
pub mod link;
pub mod pilots;
pub mod rmt;
pub mod rng;
pub mod scalar;
pub mod scenario;

pub use error::{Error, Result};
pub use scalar::Real;
pub use scenario::{Scenario, ServiceMap, Topology};

pub type CorrelationSet = channel::CorrelationSet<f64>;
pub type CorrelationSet32 = channel::CorrelationSet<f32>;
pub type HybridDesign = hybrid::HybridDesign<f64>;
pub type HybridDesign32 = hybrid::HybridDesign<f32>;
pub type EstimationStats = estimation::EstimationStats<f64>;
pub type EstimationStats32 = estimation::EstimationStats<f32>;
pub type DlAsymptotic = rmt::DlAsymptotic<f64>;
pub type AssignmentTrace = pilots::AssignmentTrace<f64>;
pub type GapBounds = bounds::GapBounds<f64>;
pub type CMat = scalar::CMat<f64>;
pub type CVec = scalar::CVec<f64>;
