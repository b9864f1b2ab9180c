//! Market data model, expected profits, and their analytic derivatives.

use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::demand::{self, Scope};
use crate::error::{Error, Inadmissible, Result};
use crate::utility::{check_conditions, Condition, UtilitySpec};

/// Max-norm bound on a firm's own-price gradient for prices to count as stationary.
pub const STATIONARITY_TOL: f64 = 1e-7;

/// Per-unit cost of a product as a function of its choice probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostModel {
    Constant { unit_cost: f64 },
    /// Normalized total cost `C(P) = c0 P + c1 P^2 / 2`, marginal cost `c0 + c1 P`.
    ConvexQuadratic { c0: f64, c1: f64 },
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        match *self {
            CostModel::Constant { unit_cost } if !ok(unit_cost) => Err(Error::InvalidParameter(
                format!("unit_cost must be finite and non-negative, got {unit_cost}"),
            )),
            CostModel::ConvexQuadratic { c1, .. } if c1 < 0.0 => Err(Error::InvalidParameter(
                format!("c1 = {c1} makes total cost concave; only convex costs are supported"),
            )),
            CostModel::ConvexQuadratic { c0, c1 } if !ok(c0) || !ok(c1) => Err(
                Error::InvalidParameter(format!("c0 = {c0}, c1 = {c1} must be finite and non-negative")),
            ),
            _ => Ok(()),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, CostModel::Constant { .. })
    }

    /// Marginal (unit) cost at share `share`.
    pub fn marginal(&self, share: f64) -> f64 {
        match *self {
            CostModel::Constant { unit_cost } => unit_cost,
            CostModel::ConvexQuadratic { c0, c1 } => c0 + c1 * share,
        }
    }

    /// Normalized total cost at share `share`.
    pub fn total(&self, share: f64) -> f64 {
        match *self {
            CostModel::Constant { unit_cost } => unit_cost * share,
            CostModel::ConvexQuadratic { c0, c1 } => c0 * share + 0.5 * c1 * share * share,
        }
    }

    /// Second derivative of total cost in share.
    pub fn curvature(&self) -> f64 {
        match *self {
            CostModel::Constant { .. } => 0.0,
            CostModel::ConvexQuadratic { c1, .. } => c1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Product {
    pub id: String,
    pub firm: String,
    pub value: f64,
    pub utility: UtilitySpec,
    pub cost: CostModel,
}

/// Which of the structural corollaries' hypotheses the modeller asserts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct Hypotheses {
    pub separable: bool,
    pub concave_in_price: bool,
    pub value_costs: bool,
    pub unique_value: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Market {
    products: Vec<Product>,
    theta: f64,
    sigma_cap: f64,
    firms: Vec<String>,
    firm_of: Vec<usize>,
    members: Vec<Vec<usize>>,
    hypotheses: Hypotheses,
    twins: Vec<(usize, usize)>,
}

impl Market {
    /// Firms are indexed in order of first appearance among `products`.
    pub fn new(products: Vec<Product>, theta: f64) -> Result<Self> {
        if products.is_empty() {
            return Err(Error::InvalidParameter("a market needs at least one product".into()));
        }
        if theta.is_nan() || theta == f64::INFINITY {
            return Err(Error::InvalidParameter(format!("theta = {theta} is not admissible")));
        }
        let sigma_cap = products[0].utility.sigma_cap();
        let mut seen = HashMap::new();
        let mut firms: Vec<String> = Vec::new();
        let mut firm_of = Vec::with_capacity(products.len());
        let mut members: Vec<Vec<usize>> = Vec::new();
        for (j, prod) in products.iter().enumerate() {
            if prod.id.is_empty() || prod.firm.is_empty() {
                return Err(Error::InvalidParameter(format!(
                    "product {j}: id and firm must be nonempty"
                )));
            }
            if seen.insert(prod.id.clone(), j).is_some() {
                return Err(Error::InvalidParameter(format!("duplicate product id {}", prod.id)));
            }
            if !prod.value.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "product {}: value must be finite",
                    prod.id
                )));
            }
            if prod.utility.sigma_cap() != sigma_cap {
                return Err(Error::InvalidParameter(format!(
                    "product {}: every product must share one purchasing power limit",
                    prod.id
                )));
            }
            prod.cost.validate()?;
            let f = match firms.iter().position(|name| *name == prod.firm) {
                Some(f) => f,
                None => {
                    firms.push(prod.firm.clone());
                    members.push(Vec::new());
                    firms.len() - 1
                }
            };
            firm_of.push(f);
            members[f].push(j);
        }
        Ok(Self {
            products,
            theta,
            sigma_cap,
            firms,
            firm_of,
            members,
            hypotheses: Hypotheses::default(),
            twins: Vec::new(),
        })
    }

    pub fn with_hypotheses(mut self, hypotheses: Hypotheses) -> Self {
        self.hypotheses = hypotheses;
        self
    }

    /// Declares pairs of identical products sold by different firms.
    pub fn with_twins(mut self, twins: &[(String, String)]) -> Result<Self> {
        let mut out = Vec::with_capacity(twins.len());
        for (a, b) in twins {
            let j = self.product_index(a)?;
            let k = self.product_index(b)?;
            if j == k {
                return Err(Error::InvalidParameter(format!("twin pair ({a}, {b}) repeats a product")));
            }
            out.push((j, k));
        }
        self.twins = out;
        Ok(self)
    }

    pub fn products(&self) -> &[Product] {
        &self.products
    }

    pub fn product(&self, j: usize) -> &Product {
        &self.products[j]
    }

    pub fn len(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn sigma_cap(&self) -> f64 {
        self.sigma_cap
    }

    pub fn has_finite_cap(&self) -> bool {
        self.sigma_cap.is_finite()
    }

    pub fn firms(&self) -> &[String] {
        &self.firms
    }

    pub fn num_firms(&self) -> usize {
        self.firms.len()
    }

    pub fn firm_of(&self, j: usize) -> usize {
        self.firm_of[j]
    }

    pub fn members(&self, f: usize) -> &[usize] {
        &self.members[f]
    }

    pub fn hypotheses(&self) -> Hypotheses {
        self.hypotheses
    }

    pub fn twins(&self) -> &[(usize, usize)] {
        &self.twins
    }

    pub fn product_index(&self, id: &str) -> Result<usize> {
        self.products
            .iter()
            .position(|p| p.id == id)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown product {id}")))
    }

    pub fn firm_index(&self, name: &str) -> Result<usize> {
        self.firms
            .iter()
            .position(|f| f == name)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown firm {name}")))
    }

    pub fn all_constant_costs(&self) -> bool {
        self.products.iter().all(|p| p.cost.is_constant())
    }

    /// Whether `p_j` sits at (or beyond) the purchasing power limit.
    pub fn at_cap(&self, p: f64) -> bool {
        p >= self.sigma_cap
    }

    /// Checks everything the equilibrium solvers rely on.
    pub fn admissibility(&self) -> std::result::Result<(), Inadmissible> {
        if self.theta == f64::NEG_INFINITY {
            return Err(Inadmissible::NoOutsideGood);
        }
        for prod in &self.products {
            let report = check_conditions(&prod.utility);
            if !report.edsq {
                let product = prod.id.clone();
                let condition = Condition::Edsq;
                return Err(if report.elb {
                    Inadmissible::Condition { product, condition }
                } else {
                    Inadmissible::Divergent { product, condition }
                });
            }
            if !report.sqsd {
                return Err(Inadmissible::Condition {
                    product: prod.id.clone(),
                    condition: Condition::Sqsd,
                });
            }
        }
        let constant = self.products[0].cost.is_constant();
        if self.products.iter().any(|p| p.cost.is_constant() != constant) {
            return Err(Inadmissible::MixedCostKinds);
        }
        if self.has_finite_cap() {
            let max_cost = self
                .products
                .iter()
                .map(|p| p.cost.marginal(0.0))
                .fold(0.0, f64::max);
            if max_cost >= self.sigma_cap {
                return Err(Inadmissible::CapBelowCost {
                    sigma_cap: self.sigma_cap,
                    max_cost,
                });
            }
        }
        Ok(())
    }

    pub(crate) fn check_prices(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} prices, got {}",
                self.len(),
                p.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FirmProfit {
    pub per_firm: Vec<f64>,
}

impl FirmProfit {
    pub fn total(&self) -> f64 {
        self.per_firm.iter().sum()
    }
}

/// Population-normalized expected gross profit of every firm.
pub fn profit(market: &Market, p: &[f64]) -> Result<FirmProfit> {
    let probs = demand::choice_probabilities(market, p)?;
    let mut per_firm = vec![0.0; market.num_firms()];
    for (j, prod) in market.products().iter().enumerate() {
        let share = probs.product_shares[j];
        if share > 0.0 {
            per_firm[market.firm_of(j)] += share * p[j] - prod.cost.total(share);
        }
    }
    Ok(FirmProfit { per_firm })
}

/// `sum_j P_j (p_j - c_j(P_j))` per firm: the profit-like term in the
/// fixed-point maps. Equals the profit when costs are constant.
pub fn markup_mass(market: &Market, p: &[f64], shares: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; market.num_firms()];
    for (j, prod) in market.products().iter().enumerate() {
        let share = shares[j];
        if share > 0.0 {
            out[market.firm_of(j)] += share * (p[j] - prod.cost.marginal(share));
        }
    }
    out
}

/// `D_l pi_f` for every price `l`, including other firms' prices.
pub fn firm_profit_gradient(market: &Market, p: &[f64], f: usize) -> Result<Vec<f64>> {
    let probs = demand::choice_probabilities(market, p)?;
    let lam = demand::lambda_from_shares(market, p, &probs.product_shares)?;
    Ok(firm_gradient_from(market, p, &probs.product_shares, &lam, f))
}

pub(crate) fn firm_gradient_from(
    market: &Market,
    p: &[f64],
    shares: &[f64],
    lam: &[f64],
    f: usize,
) -> Vec<f64> {
    // sum_j (delta_jl - P_j) lam_l m_j + [l in f] P_l
    let members = market.members(f);
    let weighted: f64 = members
        .iter()
        .map(|&j| shares[j] * (p[j] - market.product(j).cost.marginal(shares[j])))
        .sum();
    (0..market.len())
        .map(|l| {
            let own = if market.firm_of(l) == f {
                let m_l = p[l] - market.product(l).cost.marginal(shares[l]);
                lam[l] * m_l + shares[l]
            } else {
                0.0
            };
            own - lam[l] * weighted
        })
        .collect()
}

/// Combined gradient: component `k` is `D_k pi_{f(k)}`; zero at the cap.
pub fn profit_gradient(market: &Market, p: &[f64]) -> Result<Vec<f64>> {
    let probs = demand::choice_probabilities(market, p)?;
    let lam = demand::lambda_from_shares(market, p, &probs.product_shares)?;
    let per_firm: Vec<Vec<f64>> = (0..market.num_firms())
        .map(|f| firm_gradient_from(market, p, &probs.product_shares, &lam, f))
        .collect();
    Ok((0..market.len())
        .map(|k| per_firm[market.firm_of(k)][k])
        .collect())
}

/// Hessian of a firm's profit in its own interior prices, valid at stationary prices.
#[derive(Debug, Clone, PartialEq)]
pub struct FirmHessian {
    /// Product indices of the rows/columns, in the firm's order.
    pub products: Vec<usize>,
    pub matrix: DMatrix<f64>,
}

impl FirmHessian {
    pub fn eigenvalues(&self) -> Vec<f64> {
        if self.products.is_empty() {
            return Vec::new();
        }
        let mut ev: Vec<f64> = SymmetricEigen::new(self.matrix.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues().last().copied().unwrap_or(f64::NEG_INFINITY)
    }
}

/// `Lambda (I - Omega) - Lambda H Lambda`; `H` vanishes for constant costs.
pub fn hessian_at_stationary(market: &Market, f: usize, p: &[f64]) -> Result<FirmHessian> {
    market.check_prices(p)?;
    let grad = profit_gradient(market, p)?;
    let max_gradient = market
        .members(f)
        .iter()
        .map(|&k| grad[k].abs())
        .fold(0.0, f64::max);
    if max_gradient > STATIONARITY_TOL {
        return Err(Error::NotStationary {
            firm: market.firms()[f].clone(),
            max_gradient,
        });
    }
    let probs = demand::choice_probabilities(market, p)?;
    let shares = &probs.product_shares;
    let lam = demand::lambda_from_shares(market, p, shares)?;
    let idx: Vec<usize> = market
        .members(f)
        .iter()
        .copied()
        .filter(|&k| !market.at_cap(p[k]))
        .collect();
    let n = idx.len();
    let c1 = |k: usize| market.product(k).cost.curvature();
    let tail: f64 = idx.iter().map(|&j| c1(j) * shares[j] * shares[j]).sum();
    let mut matrix = DMatrix::zeros(n, n);
    for (a, &k) in idx.iter().enumerate() {
        let omega = market.product(k).utility.omega(p[k])?;
        for (b, &l) in idx.iter().enumerate() {
            let delta = if a == b { 1.0 } else { 0.0 };
            let h = c1(k) * delta - c1(k) * shares[k] - c1(l) * shares[l] + tail;
            matrix[(a, b)] = delta * lam[k] * (1.0 - omega) - lam[k] * h * lam[l];
        }
    }
    Ok(FirmHessian { products: idx, matrix })
}

/// `D_l D_k pi_f` for `k, l` in any firm, assembled from second share derivatives.
pub fn profit_cross_partial(market: &Market, p: &[f64], f: usize, k: usize, l: usize) -> Result<f64> {
    if !market.all_constant_costs() {
        return Err(Error::Unsupported(
            "profit cross-partials are assembled for constant costs only".into(),
        ));
    }
    let jac = demand::jacobian(market, p, Scope::Full)?;
    let mut total = 0.0;
    for &j in market.members(f) {
        let m = p[j] - market.product(j).cost.marginal(0.0);
        total += demand::second_derivative(market, p, j, k, l)? * m;
    }
    // D_l of P_k [k in f] and D_k of P_l [l in f]
    if market.firm_of(k) == f {
        total += jac[(k, l)];
    }
    if market.firm_of(l) == f {
        total += jac[(l, k)];
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::utility::UtilitySpec;
    use approx::assert_relative_eq;

    fn product(id: &str, firm: &str, value: f64, utility: UtilitySpec, cost: f64) -> Product {
        Product {
            id: id.into(),
            firm: firm.into(),
            value,
            utility,
            cost: CostModel::Constant { unit_cost: cost },
        }
    }

    fn monopoly() -> Market {
        let u = UtilitySpec::linear(1.0).unwrap();
        Market::new(vec![product("a", "f", 0.0, u, 0.0)], 0.0).unwrap()
    }

    #[test]
    fn market_validation() {
        let u = UtilitySpec::linear(1.0).unwrap();
        let dup = vec![product("a", "f", 0.0, u, 0.0), product("a", "g", 0.0, u, 0.0)];
        assert!(Market::new(dup, 0.0).is_err());
        let lri = UtilitySpec::log_remaining_income(2.0, 5.0).unwrap();
        let mixed = vec![product("a", "f", 0.0, u, 0.0), product("b", "g", 0.0, lri, 0.0)];
        assert!(Market::new(mixed, 0.0).is_err());
        let concave = Product {
            cost: CostModel::ConvexQuadratic { c0: 1.0, c1: -1.0 },
            ..product("a", "f", 0.0, u, 0.0)
        };
        assert!(Market::new(vec![concave], 0.0).is_err());
    }

    #[test]
    fn admissibility_names_the_failed_condition() {
        let u = UtilitySpec::log_price(0.5).unwrap();
        let m = Market::new(vec![product("a", "f", 0.0, u, 1.0)], 0.0).unwrap();
        match m.admissibility() {
            Err(Inadmissible::Divergent { condition, .. }) => assert_eq!(condition, Condition::Edsq),
            other => panic!("{other:?}"),
        }
        let m = Market::new(
            vec![product("a", "f", 0.0, UtilitySpec::linear(1.0).unwrap(), 0.0)],
            f64::NEG_INFINITY,
        )
        .unwrap();
        assert_eq!(m.admissibility(), Err(Inadmissible::NoOutsideGood));
    }

    #[test]
    fn profit_examples() {
        let m = monopoly();
        let e = (-1.0f64).exp();
        assert_relative_eq!(profit(&m, &[1.0]).unwrap().per_firm[0], e / (1.0 + e), epsilon = 1e-15);
        // gradient = lambda * (p - zeta), zeta = pi + 1
        let g = profit_gradient(&m, &[1.0]).unwrap()[0];
        let share = e / (1.0 + e);
        assert_relative_eq!(g, -share * (1.0 - (share + 1.0)), epsilon = 1e-15);
        assert!((g - 0.0723).abs() < 1e-4);
    }

    #[test]
    fn profit_vanishes_at_cap() {
        let u = UtilitySpec::log_remaining_income(2.0, 5.0).unwrap();
        let m = Market::new(
            vec![product("a", "f", 1.0, u, 1.0), product("b", "f", 0.5, u, 2.0)],
            0.0,
        )
        .unwrap();
        assert_eq!(profit(&m, &[5.0, 5.0]).unwrap().per_firm[0], 0.0);
        assert_eq!(profit_gradient(&m, &[5.0, 3.0]).unwrap()[0], 0.0);
    }

    #[test]
    fn symmetric_firm_profit_doubles() {
        let u = UtilitySpec::linear(1.0).unwrap();
        let m = Market::new(
            vec![product("a", "f", 0.3, u, 0.5), product("b", "f", 0.3, u, 0.5)],
            0.0,
        )
        .unwrap();
        let probs = demand::choice_probabilities(&m, &[2.0, 2.0]).unwrap();
        let single = probs.product_shares[0] * 1.5;
        assert_relative_eq!(profit(&m, &[2.0, 2.0]).unwrap().per_firm[0], 2.0 * single, epsilon = 1e-15);
    }

    #[test]
    fn hessian_refuses_non_stationary_prices() {
        assert!(matches!(
            hessian_at_stationary(&monopoly(), 0, &[1.0]),
            Err(Error::NotStationary { .. })
        ));
    }
}
