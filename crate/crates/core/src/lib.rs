//! Optimal trade-trigger thresholds for a trader with a hard position cap and
//! linear transaction costs, following a discrete mean-reverting predictor.
//!
//! The crate answers one question several independent ways: at what predictor
//! level `q_star` should a capped trader flip to the maximum allowed position?
//!
//! * [`analytic`] — closed forms: the continuum threshold solving
//!   `F(x) = gamma * epsilon^{3/2} / beta`, its limiting regimes, and the
//!   first-passage functions they are built from.
//! * [`bellman`] — dynamic programming: a finite-horizon backward induction
//!   over a position/predictor grid, and the stationary self-consistent
//!   equation for the marginal value of a unit of position.
//! * [`backtest`] — simulation: threshold and band strategies on simulated
//!   predictor paths, brute-force threshold search, and first-passage
//!   Monte Carlo.
//! * [`sde`] — the predictor process itself plus deterministic, counter-based
//!   Gaussian noise so every simulation is reproducible.
//! * [`special`] — the Dawson-function family the closed forms need, with a
//!   bracketed root finder and quadrature helpers.
//! * [`checks`] — the self-contained invariant battery behind `qstar verify`.

pub mod analytic;
pub mod backtest;
pub mod bellman;
pub mod checks;
mod error;
pub mod sde;
pub mod special;

pub use analytic::{CostModel, Method, Regime, ThresholdEstimate, ThresholdLimits};
pub use backtest::{BacktestReport, FirstPassageStats, Objective, SearchConfig, StrategyRow};
pub use bellman::{BellmanSolution, GridFunction, GridSpec, Quadrature, SelfConsistentSolution};
pub use error::{Error, Result};
pub use sde::{OuParams, PathSample, StartState};
pub use special::Tolerances;
