//! Downlink power allocation for multi-cell Massive MIMO networks.
//!
//! The crate simulates a multi-cell network with correlated Rayleigh fading,
//! MMSE channel estimation under pilot contamination, and MR / M-MMSE
//! precoding. On top of the hardening-bound spectral-efficiency model it
//! provides two exact downlink power-control solvers (max-min fairness and
//! max-product SINR) and a small from-scratch feedforward network that learns
//! the map from UE positions to optimal powers, so that allocation can be
//! done with a handful of matrix-vector products instead of an optimization
//! run.
//!
//! Modules follow the processing chain:
//!
//! - [`geometry`]: network layout, UE drops, pathloss, spatial correlation
//! - [`channel`]: correlated Rayleigh channels and multi-cell MMSE estimates
//! - [`precoding`]: MR and M-MMSE combining, duality-based precoders
//! - [`se`]: Monte-Carlo signal/interference gains, SINR and SE evaluation
//! - [`power`]: max-min (bisection) and max-prod (log-domain barrier) solvers
//! - [`nn`]: dense network, backprop, Adam, relative-MSE training
//! - [`pipeline`]: dataset generation, training orchestration, CDF reports

pub mod channel;
pub mod error;
pub mod geometry;
pub mod nn;
pub mod pipeline;
pub mod power;
pub mod precoding;
pub mod se;

pub use error::Error;

/// Complex scalar used throughout the simulator.
pub type C64 = nalgebra::Complex<f64>;

/// Crate result type.
pub type Result<T> = std::result::Result<T, Error>;
