//! Two-settlement stochastic electricity market with asymmetric beliefs.
//!
//! A producer and a consumer contract energy day-ahead and adjust in real
//! time once a renewable outcome realizes. Each agent weighs the outcomes
//! with its own probability vector; a price-setter moves per-outcome prices
//! against the imbalance until the market clears.
//!
//! The crate computes that equilibrium three ways (closed-form interior
//! solve, distributed tatonnement, centralized stochastic clearing), analyses
//! local stability of the price dynamics through the spectrum of the
//! demand-excess Jacobian, and reproduces the belief-asymmetry experiments
//! as CSV data.

pub mod agents;
pub mod analysis;
pub mod beliefs;
pub mod config;
pub mod equilibrium;
pub mod error;
pub mod experiments;
pub mod market;

pub use error::{Error, Result};
pub use market::{
    BeliefSet, BoxSet, DispatchSchedule, Interval, MarketInstance, MarketParams, PriceVector,
    Violation,
};
