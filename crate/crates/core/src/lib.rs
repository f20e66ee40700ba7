//! Monte-Carlo verification toolkit for infinite-horizon utility
//! maximization from inter-temporal wealth.
//!
//! An agent with CRRA preferences consumes the running value of a wealth
//! process weighted by a finite measure kappa on `[0, inf)`:
//!
//! ```text
//!     u(x) = sup_X  E [ int_0^inf U(X_t) dkappa_t ],   X_0 = x,
//! ```
//!
//! and the dual problem optimizes over wealth-path deflators
//! `Y = beta R`, `R = exp(-int beta dkappa) S`, where S is a supermartingale
//! deflator and beta >= 0 an auxiliary control:
//!
//! ```text
//!     v(y) = inf_{beta, S}  E [ int_0^inf V(Y_t) dkappa_t ],   S_0 = y.
//! ```
//!
//! The crate simulates markets (geometric Brownian motion and the Bessel(3)
//! strict-local-martingale example), builds the deflated processes, and
//! checks the duality relations by Monte Carlo: the budget constraint
//! `E[int X Y dkappa] <= xy`, weak duality `v(y) >= u(x) - xy`, and the
//! martingale property of `M = XR + int X Y dkappa` at candidate optima.
//! Closed-form values for the Black-Scholes market provide exact oracles.

pub mod closed_form;
pub mod deflator;
pub mod discount;
pub mod dual_opt;
pub mod error;
pub mod grid;
pub mod market;
pub mod pipeline;
pub mod preference;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
