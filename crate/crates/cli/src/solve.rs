use std::path::PathBuf;

use anyhow::Result;
use bertrand_logit::solver::solve_equilibrium;
use bertrand_logit::{EquilibriumResult, Market, Method, SolveOptions};
use clap::Args;
use serde::Serialize;

use crate::io::{self, num};

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Market config (JSON).
    pub config: PathBuf,
    /// zeta_iteration, eta_iteration, newton_on_phi or profit_space.
    #[arg(long, default_value = "newton_on_phi")]
    pub method: Method,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1.0)]
    pub damping: f64,
    /// Output prefix: writes PREFIX.json and PREFIX.csv. Without it the JSON goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl SolveArgs {
    pub fn options(&self) -> SolveOptions {
        SolveOptions {
            method: self.method,
            max_iter: self.max_iter,
            tol: self.tol,
            damping: self.damping,
            ..SolveOptions::default()
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ProductRow {
    pub id: String,
    pub firm: String,
    pub price: f64,
    pub share: f64,
    pub marginal_cost: f64,
    pub markup: f64,
}

#[derive(Debug, Serialize)]
pub struct FirmProfit {
    pub firm: String,
    pub profit: f64,
}

#[derive(Debug, Serialize)]
pub struct SolveReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub method: Method,
    pub certified: bool,
    pub residual: f64,
    pub iterations: usize,
    pub outside_share: f64,
    pub prices: Vec<f64>,
    pub profits: Vec<FirmProfit>,
    pub boundary_products: Vec<String>,
    pub products: Vec<ProductRow>,
}

impl SolveReport {
    pub fn new(market: &Market, r: EquilibriumResult) -> Self {
        let products = (0..market.len())
            .map(|j| {
                let prod = market.product(j);
                let mc = prod.cost.marginal(r.shares[j]);
                ProductRow {
                    id: prod.id.clone(),
                    firm: prod.firm.clone(),
                    price: r.prices[j],
                    share: r.shares[j],
                    marginal_cost: mc,
                    markup: r.prices[j] - mc,
                }
            })
            .collect();
        let profits = market
            .firms()
            .iter()
            .zip(&r.profits)
            .map(|(firm, &profit)| FirmProfit {
                firm: firm.clone(),
                profit,
            })
            .collect();
        Self {
            schema_version: bertrand_logit::config::SCHEMA_VERSION,
            command: "solve",
            method: r.method,
            certified: r.certified,
            residual: r.residual,
            iterations: r.iterations,
            outside_share: r.outside_share,
            prices: r.prices,
            profits,
            boundary_products: r.boundary_products,
            products,
        }
    }

    pub fn csv(&self) -> String {
        let mut out = io::csv_row(
            &["product", "firm", "price", "share", "marginal_cost", "markup"].map(String::from),
        );
        for row in &self.products {
            out.push_str(&io::csv_row(&[
                row.id.clone(),
                row.firm.clone(),
                num(row.price),
                num(row.share),
                num(row.marginal_cost),
                num(row.markup),
            ]));
        }
        out
    }
}

pub fn run(args: &SolveArgs) -> Result<i32> {
    let market = io::load_market(&args.config)?;
    let result = solve_equilibrium(&market, &args.options())?;
    let report = SolveReport::new(&market, result);
    match &args.out {
        Some(prefix) => {
            io::atomic_write(&prefix.with_extension("json"), &io::to_json(&report))?;
            io::atomic_write(&prefix.with_extension("csv"), &report.csv())?;
        }
        None => io::emit(None, &io::to_json(&report))?,
    }
    Ok(0)
}
