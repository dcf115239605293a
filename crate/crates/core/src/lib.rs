//! Dynamic state estimation for coupled gas and electric networks.
//!
//! The gas network is a linearized, implicitly discretized pipeline model;
//! the electric grid is an AC network observed through linear (rectangular)
//! voltage and current meters. Both are stacked into one linear state-space
//! model, coupled through gas-turbine units, and tracked with a Kalman
//! filter whose control input comes from Holt's two-parameter smoothing.

pub mod coupling;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod gas;
pub mod matpower;
pub mod model;
pub mod pipeline;
pub mod power;
pub mod scenario;

pub use error::{Error, Result};
pub use model::{load_model, IgesModel};
