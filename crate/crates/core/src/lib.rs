//! Iteratively regularized Gauss-Newton inversion of nonlinear ill-posed
//! operator equations, applied to nonparametric regression with an
//! endogenous regressor and an independent binary instrument.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod irgnm;
pub mod iv;
pub mod kde;
pub mod penalty;
pub mod pipeline;
pub mod sim;

pub use error::{Error, Result};
pub use grid::{codomain_norm, cumtrapz, inner_product, interp_eval, make_grid, CodomainElem, Grid1D, GridFn};
pub use irgnm::{irgnm_run, ForwardModel, IrgnmConfig, IterateTrace, Linearization, StopReason, StoppingRule};
pub use penalty::{Penalty, SubgradientElem};
pub use config::RunConfig;
pub use diagnostics::{assemble_jacobian, gamma_bound, rate_experiment, singular_values, JacobianMatrix};
pub use iv::{BinaryIVOperator, JointDensityGrid, OperatorForm, QuantileIVOperator};
pub use kde::{kde_fit, KdeConfig};
pub use pipeline::{McReport, McRow};
pub use sim::{Sample, SimDesign};
