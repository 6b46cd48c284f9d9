//! Kernel-EDMD surrogates of control-affine dynamical systems and
//! surrogate-based model predictive control.
//!
//! The pipeline: scatter virtual observation points over the domain
//! ([`systems::chebyshev_grid`]), collect data triplets near each point
//! ([`systems::generate_cluster_data`]), identify local drift/input maps by
//! least squares and interpolate them with compactly supported Wendland
//! kernels ([`surrogate::fit_control_surrogate`]), then close the loop with
//! a receding-horizon controller that optimizes over the surrogate while the
//! true plant evolves ([`mpc::mpc_closed_loop`]). The [`analysis`] module
//! quantifies when that loop is practically stabilizing.

pub mod analysis;
pub mod bounds;
pub mod error;
mod io;
pub mod kernel;
pub mod koopman;
pub mod model;
pub mod mpc;
pub mod surrogate;
pub mod systems;

pub use nalgebra;

pub use bounds::AxisBox;
pub use error::{Error, Result};
pub use kernel::{ClusterSet, KernelMatrixFactor, WendlandKernel};
pub use model::PredictionModel;
pub use surrogate::{ClusterDataset, ControlSurrogate};
pub use systems::ControlAffinePlant;
