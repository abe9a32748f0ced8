//! spinlab-core: density-matrix spin dynamics for 1..=4 qubits.
//!
//! Everything is generic over the real scalar (`Real`, satisfied by f32 and
//! f64); the aliases below pin the common f64 instantiations.

pub mod decoherence;
pub mod dmf;
pub mod error;
pub mod gates;
pub mod grape;
pub mod numerics;
pub mod operator;
pub mod real;
pub mod rng;
pub mod selftest;
pub mod state;
pub mod tomography;

pub use error::{Error, Result};
pub use real::{Cx, Real};

pub type Op64 = operator::Operator<f64>;
pub type Op32 = operator::Operator<f32>;
pub type Density64 = state::DensityMatrix<f64>;
pub type Bloch64 = state::BlochVector<f64>;
pub type Pulse64 = grape::ControlPulse<f64>;
pub type DriveParams64 = dmf::DriveParams<f64>;
pub type KickSchedule64 = decoherence::KickSchedule<f64>;
pub type Chi64 = tomography::ChiMatrix<f64>;
