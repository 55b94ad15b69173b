//! Linear-quadratic mean-field Stackelberg games with a major leader and
//! `N` minor followers: open-loop and feedback Riccati solutions,
//! Euler–Maruyama simulation of the decentralized strategies, realized and
//! limiting costs, and sweeps over the leader's tracking weight.

pub mod config;
pub mod costs;
pub mod error;
pub mod feedback;
pub mod format;
pub mod matgrid;
pub mod model;
pub mod openloop;
pub mod simulate;
pub mod stats;

pub use config::{parse_config, to_config_string, RunConfig};
pub use error::{Error, Result};
pub use matgrid::{BrownianBundle, Mat, MatrixPath, TimeGrid};
pub use model::{validate_assumptions, AssumptionReport, ModelParams};
