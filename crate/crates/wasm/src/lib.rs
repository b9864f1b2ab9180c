//! Browser bindings for the static demo page in `www/`.
//!
//! Each export takes and returns JSON text. The `*_json` functions hold the
//! logic and are what the native tests exercise; the exported wrappers only
//! turn error strings into JavaScript exceptions.

use bertrand_logit::config::MarketConfig;
use bertrand_logit::market::profit;
use bertrand_logit::solver::{best_response, solve_equilibrium};
use bertrand_logit::{demand, CostModel, Market, Product, SolveOptions, UtilitySpec};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

type Outcome = Result<String, String>;

fn market_from(config: &str) -> Result<Market, String> {
    let cfg = MarketConfig::from_json(config).map_err(|e| format!("config: {e}"))?;
    cfg.to_market().map_err(|e| e.to_string())
}

fn to_json<T: Serialize>(value: &T) -> Outcome {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct ProductOut {
    id: String,
    firm: String,
    price: f64,
    share: f64,
    markup: f64,
}

#[derive(Serialize)]
struct SolveOut {
    method: String,
    iterations: usize,
    residual: f64,
    outside_share: f64,
    products: Vec<ProductOut>,
    firms: Vec<String>,
    profits: Vec<f64>,
    boundary_products: Vec<String>,
}

/// Equilibrium of a market config (same schema as the command-line tool).
pub fn solve_market_json(config: &str) -> Outcome {
    let m = market_from(config)?;
    let r = solve_equilibrium(&m, &SolveOptions::default()).map_err(|e| e.to_string())?;
    let products = (0..m.len())
        .map(|j| {
            let prod = m.product(j);
            ProductOut {
                id: prod.id.clone(),
                firm: prod.firm.clone(),
                price: r.prices[j],
                share: r.shares[j],
                markup: r.prices[j] - prod.cost.marginal(r.shares[j]),
            }
        })
        .collect();
    to_json(&SolveOut {
        method: r.method.to_string(),
        iterations: r.iterations,
        residual: r.residual,
        outside_share: r.outside_share,
        products,
        firms: m.firms().to_vec(),
        profits: r.profits,
        boundary_products: r.boundary_products,
    })
}

#[derive(Serialize)]
struct CurveOut {
    product: String,
    firm: String,
    prices: Vec<f64>,
    shares: Vec<f64>,
    profits: Vec<f64>,
    equilibrium_price: f64,
}

/// Share and owner profit as one product's price sweeps `[lo, hi]`, every
/// other price held at the equilibrium.
pub fn share_curve_json(config: &str, product: &str, lo: f64, hi: f64, n: usize) -> Outcome {
    let m = market_from(config)?;
    let j = m.product_index(product).map_err(|e| e.to_string())?;
    if n < 2 || !(lo > 0.0 && hi > lo) {
        return Err(format!("need 0 < lo < hi and n >= 2 (got [{lo}, {hi}], n = {n})"));
    }
    let eq = solve_equilibrium(&m, &SolveOptions::default()).map_err(|e| e.to_string())?;
    let f = m.firm_of(j);
    let hi = if m.has_finite_cap() { hi.min(m.sigma_cap()) } else { hi };
    let mut out = CurveOut {
        product: product.into(),
        firm: m.product(j).firm.clone(),
        prices: Vec::with_capacity(n),
        shares: Vec::with_capacity(n),
        profits: Vec::with_capacity(n),
        equilibrium_price: eq.prices[j],
    };
    let mut p = eq.prices.clone();
    for i in 0..n {
        p[j] = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        let shares = demand::choice_probabilities(&m, &p).map_err(|e| e.to_string())?;
        out.prices.push(p[j]);
        out.shares.push(shares.product_shares[j]);
        out.profits.push(profit(&m, &p).map_err(|e| e.to_string())?.per_firm[f]);
    }
    to_json(&out)
}

/// Two single-product firms with linear utility.
#[derive(Debug, Deserialize)]
pub struct DuopolyParams {
    pub alpha: f64,
    pub values: [f64; 2],
    pub costs: [f64; 2],
    #[serde(default)]
    pub theta: f64,
}

impl DuopolyParams {
    fn market(&self) -> Result<Market, String> {
        let u = UtilitySpec::linear(self.alpha).map_err(|e| e.to_string())?;
        let products = (0..2)
            .map(|i| Product {
                id: ["a", "b"][i].into(),
                firm: ["A", "B"][i].into(),
                value: self.values[i],
                utility: u,
                cost: CostModel::Constant { unit_cost: self.costs[i] },
            })
            .collect();
        Market::new(products, self.theta).map_err(|e| e.to_string())
    }
}

#[derive(Serialize)]
struct DuopolyOut {
    /// Rival prices at which each response is evaluated.
    grid: Vec<f64>,
    /// Firm A's best price against each rival price on the grid.
    response_a: Vec<f64>,
    response_b: Vec<f64>,
    equilibrium: [f64; 2],
    profits: [f64; 2],
}

/// Best-response curves of a linear-utility duopoly on `[lo, hi]` and their crossing.
pub fn duopoly_json(params: &str, lo: f64, hi: f64, n: usize) -> Outcome {
    let params: DuopolyParams = serde_json::from_str(params).map_err(|e| format!("parameters: {e}"))?;
    let m = params.market()?;
    if n < 2 || !(lo > 0.0 && hi > lo) {
        return Err(format!("need 0 < lo < hi and n >= 2 (got [{lo}, {hi}], n = {n})"));
    }
    let opts = SolveOptions::default();
    let grid: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let mut response_a = Vec::with_capacity(n);
    let mut response_b = Vec::with_capacity(n);
    for &rival in &grid {
        let a = best_response(&m, 0, &[rival, rival], &opts).map_err(|e| e.to_string())?;
        let b = best_response(&m, 1, &[rival, rival], &opts).map_err(|e| e.to_string())?;
        response_a.push(a[0]);
        response_b.push(b[1]);
    }
    let eq = solve_equilibrium(&m, &opts).map_err(|e| e.to_string())?;
    to_json(&DuopolyOut {
        grid,
        response_a,
        response_b,
        equilibrium: [eq.prices[0], eq.prices[1]],
        profits: [eq.profits[0], eq.profits[1]],
    })
}

#[wasm_bindgen]
pub fn solve_market(config: &str) -> Result<String, JsError> {
    solve_market_json(config).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn share_curve(config: &str, product: &str, lo: f64, hi: f64, n: usize) -> Result<String, JsError> {
    share_curve_json(config, product, lo, hi, n).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn duopoly(params: &str, lo: f64, hi: f64, n: usize) -> Result<String, JsError> {
    duopoly_json(params, lo, hi, n).map_err(|e| JsError::new(&e))
}
