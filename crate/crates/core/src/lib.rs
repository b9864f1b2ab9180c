//! Bertrand-Nash equilibrium prices for multi-product firms under Logit demand.
//!
//! Prices are found as zeros of the markup field `phi(p) = p - c - zeta(p)`,
//! certified by second-order checks, and cross-examined by the oracles in
//! [`verify`].

pub mod config;
pub mod demand;
pub mod error;
pub mod market;
pub mod solver;
pub mod utility;
pub mod verify;

pub use error::{Error, Inadmissible, Result};
pub use market::{CostModel, Hypotheses, Market, Product};
pub use solver::{EquilibriumResult, Method, SolveOptions};
pub use utility::{Condition, Family, UtilitySpec};
