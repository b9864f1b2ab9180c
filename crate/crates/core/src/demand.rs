//! Logit choice probabilities, their price derivatives, and multinomial demand draws.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::Market;

/// ChaCha stream used for demand draws. Bump when the sampling scheme changes,
/// so old fixtures fail loudly instead of drifting.
pub const SAMPLING_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbVector {
    pub outside_share: f64,
    pub product_shares: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Full,
    /// Zero every entry that couples products of different firms.
    IntraFirm,
}

/// `u_j = w_j(p_j) + v_j`; `-inf` at or above the purchasing power limit.
pub fn utilities(market: &Market, p: &[f64]) -> Result<Vec<f64>> {
    market.check_prices(p)?;
    market
        .products()
        .iter()
        .zip(p)
        .map(|(prod, &pj)| Ok(prod.utility.w(pj)? + prod.value))
        .collect()
}

pub fn choice_probabilities(market: &Market, p: &[f64]) -> Result<ProbVector> {
    let u = utilities(market, p)?;
    let theta = market.theta();
    let shift = u.iter().copied().fold(theta, f64::max);
    if shift == f64::NEG_INFINITY {
        return Err(Error::UndefinedDistribution);
    }
    let outside = (theta - shift).exp();
    let weights: Vec<f64> = u.iter().map(|&uj| (uj - shift).exp()).collect();
    let total = outside + weights.iter().sum::<f64>();
    Ok(ProbVector {
        outside_share: outside / total,
        product_shares: weights.into_iter().map(|x| x / total).collect(),
    })
}

/// `lambda_k = Dw_k(p_k) P_k`, zero for products at the purchasing power limit.
pub fn lambda_vector(market: &Market, p: &[f64]) -> Result<Vec<f64>> {
    let probs = choice_probabilities(market, p)?;
    lambda_from_shares(market, p, &probs.product_shares)
}

pub(crate) fn lambda_from_shares(market: &Market, p: &[f64], shares: &[f64]) -> Result<Vec<f64>> {
    market
        .products()
        .iter()
        .enumerate()
        .map(|(k, prod)| {
            if market.at_cap(p[k]) {
                Ok(0.0)
            } else {
                Ok(prod.utility.dw(p[k])? * shares[k])
            }
        })
        .collect()
}

/// Share Jacobian with entry `(j, k) = D_k P_j = (delta_jk - P_j) lambda_k`.
pub fn jacobian(market: &Market, p: &[f64], scope: Scope) -> Result<DMatrix<f64>> {
    let probs = choice_probabilities(market, p)?;
    let lam = lambda_from_shares(market, p, &probs.product_shares)?;
    Ok(jacobian_from(market, &probs.product_shares, &lam, scope))
}

pub(crate) fn jacobian_from(market: &Market, shares: &[f64], lam: &[f64], scope: Scope) -> DMatrix<f64> {
    let n = market.len();
    DMatrix::from_fn(n, n, |j, k| {
        if scope == Scope::IntraFirm && market.firm_of(j) != market.firm_of(k) {
            return 0.0;
        }
        let delta = if j == k { 1.0 } else { 0.0 };
        (delta - shares[j]) * lam[k]
    })
}

/// `D_l D_k P_j`. Products at the limit have identically zero share there, so
/// any term touching one of them is zero.
pub fn second_derivative(market: &Market, p: &[f64], j: usize, k: usize, l: usize) -> Result<f64> {
    let n = market.len();
    if j >= n || k >= n || l >= n {
        return Err(Error::InvalidParameter(format!("product index out of range (J = {n})")));
    }
    if [j, k, l].iter().any(|&i| market.at_cap(p[i])) {
        return Ok(0.0);
    }
    let probs = choice_probabilities(market, p)?;
    let shares = &probs.product_shares;
    let spec_k = market.product(k).utility;
    let dw_k = spec_k.dw(p[k])?;
    let lam_k = dw_k * shares[k];
    let lam_l = market.product(l).utility.dw(p[l])? * shares[l];
    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let mut out = lam_k * lam_l * (2.0 * shares[j] - d(j, k) - d(j, l));
    if k == l {
        out += (spec_k.d2w(p[k])? + dw_k * dw_k) * shares[k] * (d(j, k) - shares[j]);
    }
    Ok(out)
}

/// One multinomial draw of consumer choices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DemandSample {
    /// Per-product counts, in market order.
    pub counts: Vec<u64>,
    pub outside: u64,
    pub population: u64,
    pub seed: u64,
}

/// Draws `population` independent choices by sequential conditional binomials.
pub fn sample_demand(market: &Market, p: &[f64], population: u64, seed: u64) -> Result<DemandSample> {
    let probs = choice_probabilities(market, p)?;
    let mut rng = sampling_rng(seed);
    let counts = draw_multinomial(&mut rng, &probs.product_shares, population)?;
    let outside = population - counts.iter().sum::<u64>();
    Ok(DemandSample {
        counts,
        outside,
        population,
        seed,
    })
}

pub fn sampling_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SAMPLING_STREAM);
    rng
}

/// Product counts of one multinomial draw; the remainder chose the outside good.
pub fn draw_multinomial(rng: &mut ChaCha8Rng, shares: &[f64], population: u64) -> Result<Vec<u64>> {
    let mut remaining = population;
    let mut mass_left = 1.0;
    let mut counts = Vec::with_capacity(shares.len());
    for &share in shares {
        if remaining == 0 || share <= 0.0 {
            counts.push(0);
            mass_left -= share;
            continue;
        }
        let q = (share / mass_left).clamp(0.0, 1.0);
        let draw = Binomial::new(remaining, q)
            .map_err(|e| Error::InvalidParameter(format!("binomial({remaining}, {q}): {e}")))?
            .sample(rng);
        counts.push(draw);
        remaining -= draw;
        mass_left -= share;
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{CostModel, Product};
    use crate::utility::UtilitySpec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn linear_market(values: &[f64], firms: &[&str], alpha: f64, theta: f64) -> Market {
        let u = UtilitySpec::linear(alpha).unwrap();
        let products = values
            .iter()
            .zip(firms)
            .enumerate()
            .map(|(j, (&v, &f))| Product {
                id: format!("p{j}"),
                firm: f.into(),
                value: v,
                utility: u,
                cost: CostModel::Constant { unit_cost: 0.0 },
            })
            .collect();
        Market::new(products, theta).unwrap()
    }

    #[test]
    fn share_examples() {
        let m = linear_market(&[0.0], &["f"], 1.0, 0.0);
        let pr = choice_probabilities(&m, &[0.0]).unwrap();
        assert_eq!((pr.outside_share, pr.product_shares[0]), (0.5, 0.5));

        let m = linear_market(&[0.0, 0.0], &["f", "g"], 1.0, 0.0);
        let pr = choice_probabilities(&m, &[0.0, 0.0]).unwrap();
        assert_relative_eq!(pr.outside_share, 1.0 / 3.0, epsilon = 1e-15);

        let m = linear_market(&[3f64.ln()], &["f"], 1.0, 0.0);
        let pr = choice_probabilities(&m, &[0.0]).unwrap();
        assert_relative_eq!(pr.product_shares[0], 0.75, epsilon = 1e-15);
    }

    #[test]
    fn extreme_utilities_do_not_overflow() {
        let m = linear_market(&[800.0, -800.0], &["f", "g"], 1.0, 0.0);
        let pr = choice_probabilities(&m, &[0.0, 0.0]).unwrap();
        assert!(pr.product_shares[0] > 0.999_999);
        assert!(pr.outside_share >= 0.0);
    }

    #[test]
    fn undefined_without_outside_good() {
        let u = UtilitySpec::log_remaining_income(2.0, 3.0).unwrap();
        let m = Market::new(
            vec![Product {
                id: "a".into(),
                firm: "f".into(),
                value: 0.0,
                utility: u,
                cost: CostModel::Constant { unit_cost: 0.0 },
            }],
            f64::NEG_INFINITY,
        )
        .unwrap();
        assert_eq!(choice_probabilities(&m, &[3.0]), Err(Error::UndefinedDistribution));
        assert_eq!(choice_probabilities(&m, &[1.0]).unwrap().product_shares[0], 1.0);
    }

    #[test]
    fn lambda_examples() {
        let m = linear_market(&[2.0], &["f"], 2.0, 0.0);
        // share 0.5 at p = 1 with v = 2, alpha = 2
        assert_relative_eq!(lambda_vector(&m, &[1.0]).unwrap()[0], -1.0, epsilon = 1e-15);

        let m = linear_market(&[0.0], &["f"], 1.0, 0.0);
        let e = (-1.0f64).exp();
        assert_relative_eq!(lambda_vector(&m, &[1.0]).unwrap()[0], -e / (1.0 + e), epsilon = 1e-15);
    }

    #[test]
    fn jacobian_examples() {
        // v = p makes every utility zero
        let m = linear_market(&[1.0], &["f"], 1.0, 0.0);
        assert_relative_eq!(jacobian(&m, &[1.0], Scope::Full).unwrap()[(0, 0)], -0.25);

        let m = linear_market(&[1.0, 1.0], &["f", "g"], 1.0, 0.0);
        let full = jacobian(&m, &[1.0, 1.0], Scope::Full).unwrap();
        let intra = jacobian(&m, &[1.0, 1.0], Scope::IntraFirm).unwrap();
        assert_relative_eq!(full[(0, 1)], 1.0 / 9.0, epsilon = 1e-15);
        assert_eq!(intra[(0, 1)], 0.0);

        let m = linear_market(&[1.0, 1.0], &["f", "f"], 1.0, 0.0);
        let intra = jacobian(&m, &[1.0, 1.0], Scope::IntraFirm).unwrap();
        assert_relative_eq!(intra[(0, 0)], -2.0 / 9.0, epsilon = 1e-15);
        assert_relative_eq!(intra[(1, 0)], 1.0 / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn second_derivative_examples() {
        let m = linear_market(&[1.0], &["f"], 1.0, 0.0);
        assert!(second_derivative(&m, &[1.0], 0, 0, 0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn cap_products_have_zero_share_and_lambda() {
        let u = UtilitySpec::log_remaining_income(2.0, 4.0).unwrap();
        let prods = (0..2)
            .map(|j| Product {
                id: format!("p{j}"),
                firm: "f".into(),
                value: 0.0,
                utility: u,
                cost: CostModel::Constant { unit_cost: 0.0 },
            })
            .collect();
        let m = Market::new(prods, 0.0).unwrap();
        let p = [4.0, 2.0];
        assert_eq!(choice_probabilities(&m, &p).unwrap().product_shares[0], 0.0);
        assert_eq!(lambda_vector(&m, &p).unwrap()[0], 0.0);
        let jac = jacobian(&m, &p, Scope::Full).unwrap();
        assert_eq!(jac[(1, 0)], 0.0);
        assert_eq!(jac[(0, 1)], 0.0);
    }

    #[test]
    fn sampling_examples() {
        let m = linear_market(&[0.0, 0.0], &["f", "g"], 1.0, f64::NEG_INFINITY);
        let s = sample_demand(&m, &[1.0, 1.0], 0, 7).unwrap();
        assert_eq!(s.counts, vec![0, 0]);
        let s = sample_demand(&m, &[1.0, 1.0], 1000, 7).unwrap();
        assert_eq!(s.counts.iter().sum::<u64>() + s.outside, 1000);
        assert_eq!(s.outside, 0);
        assert_eq!(s, sample_demand(&m, &[1.0, 1.0], 1000, 7).unwrap());
    }

    #[test]
    fn large_sample_matches_shares() {
        // shares 0.25 / 0.75 with no outside good
        let m = linear_market(&[0.0, 3f64.ln()], &["f", "g"], 1.0, f64::NEG_INFINITY);
        let s = sample_demand(&m, &[1.0, 1.0], 1_000_000, 11).unwrap();
        let emp = s.counts[0] as f64 / 1e6;
        assert!((emp - 0.25).abs() < 0.002, "{emp}");
    }

    #[test]
    fn sampling_goodness_of_fit() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let m = linear_market(&[0.5, 0.0, -0.3], &["f", "f", "g"], 1.0, 0.0);
        let p = [1.0, 0.8, 1.2];
        let probs = choice_probabilities(&m, &p).unwrap();
        let mut expected = probs.product_shares.clone();
        expected.push(probs.outside_share);
        for seed in [1u64, 2, 3, 4, 5] {
            let s = sample_demand(&m, &p, 20_000, seed).unwrap();
            let mut obs: Vec<u64> = s.counts.clone();
            obs.push(s.outside);
            let stat: f64 = obs
                .iter()
                .zip(&expected)
                .map(|(&o, &e)| {
                    let e = e * 20_000.0;
                    (o as f64 - e).powi(2) / e
                })
                .sum();
            let pval = 1.0 - ChiSquared::new(3.0).unwrap().cdf(stat);
            assert!(pval > 0.001, "seed {seed}: p = {pval}");
        }
    }

    fn random_market(values: Vec<f64>, alphas: Vec<f64>, firms: Vec<usize>, theta: f64) -> Market {
        let products = values
            .iter()
            .zip(&alphas)
            .zip(&firms)
            .enumerate()
            .map(|(j, ((&v, &a), &f))| Product {
                id: format!("p{j}"),
                firm: format!("f{f}"),
                value: v,
                utility: match j % 3 {
                    0 => UtilitySpec::linear(a).unwrap(),
                    1 => UtilitySpec::quadratic(a).unwrap(),
                    _ => UtilitySpec::log_price(1.0 + a).unwrap(),
                },
                cost: CostModel::Constant { unit_cost: 0.0 },
            })
            .collect();
        Market::new(products, theta).unwrap()
    }

    prop_compose! {
        fn market_and_prices()(n in 1usize..6)(
            values in prop::collection::vec(-2.0f64..2.0, n),
            alphas in prop::collection::vec(0.2f64..2.0, n),
            firms in prop::collection::vec(0usize..3, n),
            prices in prop::collection::vec(0.2f64..4.0, n),
            theta in -2.0f64..2.0,
        ) -> (Market, Vec<f64>) {
            (random_market(values, alphas, firms, theta), prices)
        }
    }

    proptest! {
        #[test]
        fn shares_lie_on_the_simplex((m, p) in market_and_prices()) {
            let pr = choice_probabilities(&m, &p).unwrap();
            let total = pr.outside_share + pr.product_shares.iter().sum::<f64>();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(pr.outside_share > 0.0);
            prop_assert!(pr.product_shares.iter().all(|&s| s > 0.0 && s < 1.0));
        }

        #[test]
        fn jacobian_columns_balance_outside_share((m, p) in market_and_prices()) {
            let jac = jacobian(&m, &p, Scope::Full).unwrap();
            let lam = lambda_vector(&m, &p).unwrap();
            let p0 = choice_probabilities(&m, &p).unwrap().outside_share;
            for k in 0..m.len() {
                let col: f64 = (0..m.len()).map(|j| jac[(j, k)]).sum();
                // D_k P_0 = -P_0 lambda_k
                prop_assert!((col + (-p0 * lam[k])).abs() <= 1e-10);
            }
        }

        #[test]
        fn jacobian_matches_finite_differences((m, p) in market_and_prices()) {
            let jac = jacobian(&m, &p, Scope::Full).unwrap();
            let h = 1e-5;
            for k in 0..m.len() {
                let mut up = p.clone();
                up[k] += h;
                let mut dn = p.clone();
                dn[k] -= h;
                let su = choice_probabilities(&m, &up).unwrap().product_shares;
                let sd = choice_probabilities(&m, &dn).unwrap().product_shares;
                for j in 0..m.len() {
                    let fd = (su[j] - sd[j]) / (2.0 * h);
                    prop_assert!((fd - jac[(j, k)]).abs() <= 1e-6);
                }
            }
        }

        #[test]
        fn second_derivative_matches_differenced_jacobian((m, p) in market_and_prices()) {
            let h = 1e-5;
            for l in 0..m.len() {
                let mut up = p.clone();
                up[l] += h;
                let mut dn = p.clone();
                dn[l] -= h;
                let ju = jacobian(&m, &up, Scope::Full).unwrap();
                let jd = jacobian(&m, &dn, Scope::Full).unwrap();
                for j in 0..m.len() {
                    for k in 0..m.len() {
                        let fd = (ju[(j, k)] - jd[(j, k)]) / (2.0 * h);
                        let an = second_derivative(&m, &p, j, k, l).unwrap();
                        prop_assert!((fd - an).abs() <= 1e-5, "({j},{k},{l}): {an} vs {fd}");
                        let sym = second_derivative(&m, &p, j, l, k).unwrap();
                        prop_assert!((an - sym).abs() <= 1e-14);
                    }
                }
            }
        }

        #[test]
        fn shares_invariant_along_chi_without_outside_good(
            values in prop::collection::vec(-1.0f64..1.0, 3),
            prices in prop::collection::vec(0.3f64..3.0, 3),
        ) {
            let m = random_market(values, vec![0.7, 1.1, 0.9], vec![0, 1, 2], f64::NEG_INFINITY);
            let base = choice_probabilities(&m, &prices).unwrap();
            for lam in [1.0, 2.0, 10.0] {
                let q: Vec<f64> = m.products().iter().zip(&prices)
                    .map(|(prod, &pj)| crate::utility::chi(&prod.utility, pj, lam).unwrap())
                    .collect();
                let moved = choice_probabilities(&m, &q).unwrap();
                for (a, b) in base.product_shares.iter().zip(&moved.product_shares) {
                    prop_assert!((a - b).abs() <= 1e-10);
                }
            }
        }

        #[test]
        fn shares_decay_along_chi_with_outside_good((m, p) in market_and_prices()) {
            let mut prev = choice_probabilities(&m, &p).unwrap().product_shares;
            for lam in [2.0, 10.0, 100.0] {
                let q: Vec<f64> = m.products().iter().zip(&p)
                    .map(|(prod, &pj)| crate::utility::chi(&prod.utility, pj, lam).unwrap())
                    .collect();
                let s = choice_probabilities(&m, &q).unwrap().product_shares;
                for (a, b) in s.iter().zip(&prev) {
                    prop_assert!(a < b);
                }
                prev = s;
            }
        }
    }
}
