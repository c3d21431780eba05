//! Numerical toolkit for measuring the welfare loss of non-truthful auctions
//! at equilibrium and under no-regret play.

pub mod auction;
pub mod composition;
pub mod equilibria;
pub mod error;
pub mod harness;
pub mod learning;
pub mod prior;
pub mod rng;
pub mod smoothness;
pub mod strategy;
pub mod valuation;
pub mod welfare;

pub use error::{Error, Result};
