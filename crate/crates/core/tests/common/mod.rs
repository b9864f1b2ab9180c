#![allow(dead_code)]

use bertrand_logit::{CostModel, Hypotheses, Market, Product, UtilitySpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn product(id: &str, firm: &str, value: f64, utility: UtilitySpec, cost: CostModel) -> Product {
    Product {
        id: id.into(),
        firm: firm.into(),
        value,
        utility,
        cost,
    }
}

pub fn constant(c: f64) -> CostModel {
    CostModel::Constant { unit_cost: c }
}

pub fn separable() -> Hypotheses {
    Hypotheses {
        separable: true,
        ..Hypotheses::default()
    }
}

/// A utility from one of the families admissible without a price limit.
fn random_utility(rng: &mut ChaCha8Rng) -> UtilitySpec {
    match rng.gen_range(0..4) {
        0 => UtilitySpec::linear(rng.gen_range(0.5..2.0)),
        1 => UtilitySpec::cobb_douglas(rng.gen_range(0.5..2.0), rng.gen_range(1.0..2.5)),
        2 => UtilitySpec::log_price(rng.gen_range(1.5..4.0)),
        _ => UtilitySpec::quadratic(rng.gen_range(0.2..1.0)),
    }
    .unwrap()
}

/// Firms with `sizes[f]` products each, mixed families; costs are either all
/// constant or all convex, since the two kinds may not share a market.
fn build(rng: &mut ChaCha8Rng, sizes: &[usize], allow_convex: bool) -> Market {
    let convex = allow_convex && rng.gen_bool(0.4);
    let mut products = Vec::new();
    for (f, &size) in sizes.iter().enumerate() {
        for i in 0..size {
            let cost = if convex {
                CostModel::ConvexQuadratic {
                    c0: rng.gen_range(0.2..2.0),
                    c1: rng.gen_range(0.0..1.0),
                }
            } else {
                constant(rng.gen_range(0.2..2.0))
            };
            products.push(product(
                &format!("f{f}p{i}"),
                &format!("f{f}"),
                rng.gen_range(-1.0..1.0),
                random_utility(rng),
                cost,
            ));
        }
    }
    Market::new(products, rng.gen_range(-1.0..1.0)).unwrap()
}

/// Log-remaining-income market with a generous purchasing-power limit.
fn build_capped(rng: &mut ChaCha8Rng, sizes: &[usize]) -> Market {
    let sigma = rng.gen_range(8.0..12.0);
    let mut products = Vec::new();
    for (f, &size) in sizes.iter().enumerate() {
        for i in 0..size {
            let u = UtilitySpec::log_remaining_income(rng.gen_range(2.0..5.0), sigma).unwrap();
            products.push(product(
                &format!("f{f}p{i}"),
                &format!("f{f}"),
                rng.gen_range(-1.0..1.0),
                u,
                constant(rng.gen_range(0.2..2.0)),
            ));
        }
    }
    Market::new(products, rng.gen_range(-1.0..1.0)).unwrap()
}

/// Random admissible markets: 1–4 firms, 1–6 products, mixed families and costs.
pub fn random_markets(count: usize, seed: u64) -> Vec<Market> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let total = rng.gen_range(1..=6usize);
        let firms = rng.gen_range(1..=4usize.min(total));
        let mut sizes = vec![1; firms];
        for _ in firms..total {
            sizes[rng.gen_range(0..firms)] += 1;
        }
        let m = if rng.gen_bool(0.15) {
            build_capped(&mut rng, &sizes)
        } else {
            build(&mut rng, &sizes, true)
        };
        if m.admissibility().is_ok() {
            out.push(m);
        }
    }
    out
}

/// Twenty fixed constant-cost markets whose firms sell at most two products.
pub fn golden_markets() -> Vec<Market> {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let layouts: [&[usize]; 10] = [
        &[1],
        &[2],
        &[1, 1],
        &[2, 1],
        &[2, 2],
        &[1, 1, 1],
        &[2, 1, 1],
        &[2, 2, 1],
        &[1, 2, 2, 1],
        &[2, 2, 2, 2],
    ];
    (0..20)
        .map(|i| build(&mut rng, layouts[i % layouts.len()], false))
        .collect()
}

/// Golden markets with convex quadratic costs.
pub fn golden_convex_markets() -> Vec<Market> {
    let mut rng = ChaCha8Rng::seed_from_u64(7_001);
    let mut out = Vec::new();
    for sizes in [&[1usize, 1][..], &[2, 1], &[2, 2], &[3, 1], &[1, 1, 2]] {
        loop {
            let m = build(&mut rng, sizes, true);
            if !m.all_constant_costs() {
                out.push(m);
                break;
            }
        }
    }
    out
}

/// One product per firm, all identical except for cost: the symmetric
/// building block of the twin and control markets.
pub fn twin_duopoly(with_portfolio: bool) -> Market {
    let u = UtilitySpec::linear(1.0).unwrap();
    let mut products = vec![
        product("j", "f", 0.0, u, constant(1.0)),
        product("k", "g", 0.0, u, constant(1.0)),
    ];
    if with_portfolio {
        products.push(product("star", "f", 2.0, u, constant(0.5)));
    }
    Market::new(products, 0.0)
        .unwrap()
        .with_twins(&[("j".into(), "k".into())])
        .unwrap()
}
