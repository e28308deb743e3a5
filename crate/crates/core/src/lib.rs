//! Risk-averse PDE-constrained control with almost-sure state constraints,
//! solved along a Moreau-Yosida penalty path.
//!
//! A one-dimensional elliptic state equation with random conductivity is
//! controlled to track a target. The tracking cost is aggregated across a
//! finite scenario set by a risk measure, and the state constraint is
//! relaxed by a quadratic penalty with parameter `gamma`. [`path::run_path`]
//! solves the relaxed problem for increasing `gamma` and records the
//! residuals and multiplier diagnostics along the way.
//!
//! Start from [`config::RunConfig`]:
//!
//! ```
//! use riskpath::config::RunConfig;
//! use riskpath::solver::{minimize, SolveOptions};
//!
//! # fn main() -> Result<(), riskpath::Error> {
//! let mut cfg = RunConfig::default_fixture();
//! cfg.problem.n_interior = 31;
//! cfg.scenarios.n_scenarios = 4;
//! let data = cfg.build_problem()?;
//! let res = minimize(&data, 1e2, &SolveOptions::default(), None)?;
//! assert!(res.converged);
//! # Ok(())
//! # }
//! ```
//!
//! The guide in `book/` walks through each module.

pub mod commands;
pub mod cone;
pub mod config;
pub mod error;
pub mod grid;
pub mod kkt;
pub mod objective;
pub mod path;
pub mod report;
pub mod risk;
pub mod scenario;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};

// The guide chapters are compiled as doctests so their snippets stay in step
// with the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/discretization.md")]
    mod discretization {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
    #[doc = include_str!("../../../book/src/constraints.md")]
    mod constraints {}
    #[doc = include_str!("../../../book/src/risk.md")]
    mod risk {}
    #[doc = include_str!("../../../book/src/objective.md")]
    mod objective {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/kkt.md")]
    mod kkt {}
    #[doc = include_str!("../../../book/src/path.md")]
    mod path {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
