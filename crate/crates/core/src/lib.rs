//! Market making when the mid-price carries a mean-reverting fad and order
//! flow comes from both informed and uninformed traders.
//!
//! The crate is organised around the pieces of the model:
//!
//! - [`model`]: parameters, arrival intensities, payoff and the calibration of
//!   the informed baseline intensity.
//! - [`solvers`]: the quadratic-in-inventory approximation of the value
//!   function (Riccati coefficient `A` plus the linear ODEs for `B` and `C`)
//!   and the resulting quotes for the full-information, partial-information
//!   and fad-blind strategies.
//! - [`filters`]: Kalman-Bucy filter of the fad from prices, a bootstrap
//!   particle filter used as an oracle, and the Markov-chain arrival filter.
//! - [`hjb_fd`]: finite-difference solver of the full nonlinear HJB equation.
//! - [`sim`]: path simulation and common-random-number Monte Carlo.
//! - [`experiments`]: configuration-driven runs that write CSV tables.
//!
//! Runnable walkthroughs live in the crate's `examples/` directory.

pub mod error;
pub mod experiments;
pub mod filters;
pub mod hjb_fd;
pub mod model;
pub mod numerics;
pub mod sim;
pub mod solvers;

pub use error::{Error, Result};
pub use model::{Mark, MarketState, ModelParams, Quote};
