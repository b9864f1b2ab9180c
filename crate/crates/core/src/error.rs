use thiserror::Error;

use crate::utility::Condition;

pub type Result<T> = std::result::Result<T, Error>;

/// Why a market cannot be handed to the equilibrium solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Inadmissible {
    #[error("the outside good has utility -inf; infinite prices are always an equilibrium")]
    NoOutsideGood,
    #[error("product {product}: utility does not satisfy '{condition}'")]
    Condition { product: String, condition: Condition },
    #[error("product {product}: utility does not satisfy '{condition}'; profits grow without bound in its price")]
    Divergent { product: String, condition: Condition },
    #[error("products mix constant and convex cost models")]
    MixedCostKinds,
    #[error("purchasing power limit {sigma_cap} does not exceed the largest marginal cost {max_cost}")]
    CapBelowCost { sigma_cap: f64, max_cost: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{what} = {value} is outside the admissible domain")]
    Domain { what: &'static str, value: f64 },
    #[error("choice probabilities are undefined: every alternative has utility -inf")]
    UndefinedDistribution,
    #[error("utility fails '{0}'")]
    ConditionFailed(Condition),
    #[error("no root found for target {target} before the bracket limit")]
    NoRoot { target: f64 },
    #[error("inadmissible market: {0}")]
    Inadmissible(Inadmissible),
    #[error("prices are not stationary for firm {firm} (max |gradient| = {max_gradient:e})")]
    NotStationary { firm: String, max_gradient: f64 },
    #[error("{method} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        method: String,
        iterations: usize,
        residual: f64,
    },
    #[error("solution failed certification: {0}")]
    NotCertified(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("check refused: {0}")]
    Refused(String),
    #[error("internal inconsistency: {0}")]
    Inconsistent(String),
}

// Not `#[from]`: that would also report the inner error as the source and
// repeat its message in error chains.
impl From<Inadmissible> for Error {
    fn from(e: Inadmissible) -> Self {
        Error::Inadmissible(e)
    }
}
