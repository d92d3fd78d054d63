//! Optimal timing to sell a stock or European option whose log-price follows
//! a randomized Brownian bridge.
//!
//! * [`priors`]: beliefs about the terminal log-return and the filtered drift.
//! * [`dynamics`]: Euler–Maruyama path simulation of the filtered SDE.
//! * [`payoffs`]: rewards, Black–Scholes prices and drive functions.
//! * [`solver`]: Crank–Nicolson / projected SOR solution of the stopping problem.
//! * [`oracle`]: independent brute-force checks (quadrature, explicit scheme,
//!   Monte Carlo) used by the test suites and the `verify` command.

pub mod dynamics;
pub mod exec;
pub mod oracle;
pub mod payoffs;
pub mod priors;
pub mod solver;
pub mod special;

pub use exec::Execution;
pub use priors::{drift, posterior_density, posterior_mean, prior_moments, MarketParams, Moments, Prior, PriorError};
pub use payoffs::{drive, reward, PayoffError, RewardSpec};
pub use dynamics::{simulate_paths, simulate_paths_with, PathBatch, SimConfig, SimError};
pub use solver::{extract_regions, solve_vi, solve_vi_with, Formulation, GridSpec, Regions, SolveError, Solution};
