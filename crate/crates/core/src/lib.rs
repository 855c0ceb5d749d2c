//! Forecast aggregation with linear extremization.
//!
//! The crate is organised around a small number of pieces:
//!
//! * [`pif`]: the Gaussian partial-information simulator and its closed-form
//!   revealed aggregator.
//! * [`qp`]: a dense primal active-set solver for the bound- and
//!   sum-constrained quadratic programs used to fit aggregators.
//! * [`aggregators`]: equal average, median, simplex-weighted average and the
//!   extremized weighted average `alpha * (w'x - mu0) + mu0`.
//! * [`evaluation`]: quadratic loss, its reliability / resolution /
//!   uncertainty decomposition, and equal-count reliability diagrams.
//! * [`regression`]: least-squares forecasters for the concrete case study.
//! * [`experiment`]: end-to-end runners behind the `extremize` CLI.

pub mod aggregators;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod panel;
pub mod pif;
pub mod qp;
pub mod regression;
pub mod rng;

pub use error::{Error, Result};
pub use panel::ForecastPanel;
