//! Voltage-stability boundary analysis for power-system DAE models.
//!
//! The crate covers the network and device equations, the eigenvalue-based
//! regularization of the DAE, singular-surface indicators, the controlling
//! pseudo-saddle solver, the local stable-manifold margin `C_V`, and a
//! time-domain simulator with critical-clearing-time search.
//!
//! The numerical core is generic over [`Real`]; the aliases below fix the
//! production scalar type.

pub mod anchor_solver;
pub mod config;
pub mod device_dynamics;
pub mod error;
pub mod fixture;
pub mod grid_model;
pub mod manifold_margin;
pub mod model;
pub mod powerflow;
pub mod regularizer;
pub mod scalar;
pub mod simulator;
pub mod singularity;

pub use config::Thresholds;
pub use error::{Error, ErrorFamily, Result};
pub use scalar::Real;

/// Default scalar type.
pub type Scalar = f64;

pub type PowerNetwork = grid_model::PowerNetwork<Scalar>;
pub type DeviceSet = device_dynamics::DeviceSet<Scalar>;
pub type Eigenstructure = regularizer::Eigenstructure<Scalar>;
pub type Scenario = simulator::Scenario<Scalar>;
pub type Trajectory = simulator::Trajectory<Scalar>;
pub type PseudoSaddle = anchor_solver::PseudoSaddle<Scalar>;
pub type ManifoldModel = manifold_margin::ManifoldModel<Scalar>;

/// Single-precision variants for quick sweeps.
pub mod f32 {
    pub type PowerNetwork = crate::grid_model::PowerNetwork<f32>;
    pub type DeviceSet = crate::device_dynamics::DeviceSet<f32>;
    pub type Eigenstructure = crate::regularizer::Eigenstructure<f32>;
}
