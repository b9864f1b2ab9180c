//! Independent oracles and structural checks on solved prices.

use rayon::prelude::*;
use serde::Serialize;

use crate::demand;
use crate::error::{Error, Result};
use crate::market::{self, Market, STATIONARITY_TOL};
use crate::solver::{self, SolveOptions};
use crate::utility::{check_conditions, Family};

pub const MARKUP_IDENTITY_TOL: f64 = 1e-8;
pub const EQUAL_PRICE_TOL: f64 = 1e-8;
pub const PORTFOLIO_PROFIT_TIE: f64 = 1e-9;
pub const PORTFOLIO_PRICE_TOL: f64 = 1e-7;
pub const FD_CROSS_PARTIAL_TOL: f64 = 1e-5;
pub const GRID_PROFIT_GAP: f64 = 1e-6;
const MAX_GRID_PRODUCTS: usize = 3;
const REFINE_OFFSETS: i32 = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub label: String,
    pub value: f64,
}

/// Outcome of one structural check. `passed` holds exactly when
/// `worst_residual <= tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyReport {
    pub name: String,
    pub passed: bool,
    pub tolerance: f64,
    pub worst_residual: f64,
    pub witnesses: Vec<Witness>,
    /// Skipped sub-checks and other remarks.
    pub notes: Vec<String>,
}

struct Recorder {
    report: PropertyReport,
}

impl Recorder {
    fn new(name: &str, tolerance: f64) -> Self {
        Self {
            report: PropertyReport {
                name: name.into(),
                passed: true,
                tolerance,
                worst_residual: 0.0,
                witnesses: Vec::new(),
                notes: Vec::new(),
            },
        }
    }

    fn residual(&mut self, label: String, residual: f64) {
        let r = &mut self.report;
        r.worst_residual = r.worst_residual.max(residual);
        r.passed &= residual <= r.tolerance;
        r.witnesses.push(Witness { label, value: residual });
    }

    /// A sign claim that must hold exactly; a violation is charged above the tolerance.
    fn claim(&mut self, label: String, holds: bool, margin: f64) {
        let residual = if holds {
            0.0
        } else {
            self.report.tolerance + margin.abs().max(f64::MIN_POSITIVE) + f64::EPSILON
        };
        self.report.worst_residual = self.report.worst_residual.max(residual);
        self.report.passed &= holds;
        self.report.witnesses.push(Witness { label, value: margin });
    }

    fn note(&mut self, note: String) {
        self.report.notes.push(note);
    }

    fn finish(self) -> PropertyReport {
        self.report
    }
}

fn require_stationary(market: &Market, p: &[f64], check: &str) -> Result<()> {
    let g = market::profit_gradient(market, p)?;
    let worst = g.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if worst > STATIONARITY_TOL {
        return Err(Error::Refused(format!(
            "{check} needs stationary prices; max |gradient| = {worst:e}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    /// Full price vector with the firm's prices at the grid optimum.
    pub prices: Vec<f64>,
    pub profit: f64,
    /// Spacing of the coarse grid.
    pub step: f64,
}

/// Brute-force best response: the best point of an `n^{J_f}` grid on
/// `[lo, hi]`, then one coordinate pass at a tenth of the grid step.
pub fn grid_best_response(
    market: &Market,
    f: usize,
    p: &[f64],
    lo: f64,
    hi: f64,
    n: usize,
) -> Result<GridResult> {
    market.check_prices(p)?;
    let members = market.members(f);
    if members.len() > MAX_GRID_PRODUCTS {
        return Err(Error::Refused(format!(
            "grid search over {} prices is too large (limit {MAX_GRID_PRODUCTS})",
            members.len()
        )));
    }
    if n < 2 || !(lo >= 0.0 && hi > lo) {
        return Err(Error::InvalidParameter(format!("grid [{lo}, {hi}] with {n} points")));
    }
    let step = (hi - lo) / (n - 1) as f64;
    let dims = members.len();
    let cells = n.pow(dims as u32);
    let eval = |q: &[f64]| -> f64 {
        market::profit(market, q).map_or(f64::NEG_INFINITY, |pr| pr.per_firm[f])
    };
    let point = |idx: usize| -> Vec<f64> {
        let mut q = p.to_vec();
        let mut rest = idx;
        // most significant digit first, so index order is lexicographic
        for d in (0..dims).rev() {
            q[members[d]] = lo + (rest % n) as f64 * step;
            rest /= n;
        }
        q
    };
    let (best_idx, _) = (0..cells)
        .into_par_iter()
        .map(|idx| (idx, eval(&point(idx))))
        .reduce(
            || (usize::MAX, f64::NEG_INFINITY),
            |a, b| {
                if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
                    b
                } else {
                    a
                }
            },
        );
    let mut q = point(best_idx);
    let mut best = eval(&q);
    let fine = step / 10.0;
    for &k in members {
        let centre = q[k];
        for off in -REFINE_OFFSETS..=REFINE_OFFSETS {
            let x = centre + off as f64 * fine;
            if x < lo || x > hi {
                continue;
            }
            let mut trial = q.clone();
            trial[k] = x;
            let v = eval(&trial);
            if v > best {
                best = v;
                q = trial;
            }
        }
    }
    Ok(GridResult {
        prices: q,
        profit: best,
        step,
    })
}

/// Compares a solver best response with a grid optimum: the grid may not beat
/// the solver by more than [`GRID_PROFIT_GAP`], and the solver may not beat
/// the grid by more than the profit variation across one grid cell.
pub fn oracle_sandwich(market: &Market, f: usize, solved: &[f64], grid: &GridResult) -> Result<PropertyReport> {
    let solver_profit = market::profit(market, solved)?.per_firm[f];
    let mut rec = Recorder::new("oracle_sandwich", GRID_PROFIT_GAP);
    rec.residual(
        "grid profit above solver profit".into(),
        (grid.profit - solver_profit).max(0.0),
    );
    let mut variation: f64 = 0.0;
    for &k in market.members(f) {
        for sign in [-1.0, 1.0] {
            let mut q = grid.prices.clone();
            q[k] = (q[k] + sign * grid.step).max(0.0);
            let v = market::profit(market, &q)?.per_firm[f];
            variation = variation.max((v - grid.profit).abs());
        }
    }
    let excess = (solver_profit - grid.profit).max(0.0);
    rec.claim(
        format!("solver profit above grid profit (cell variation {variation:e})"),
        excess <= variation.max(GRID_PROFIT_GAP),
        excess,
    );
    for &k in market.members(f) {
        rec.claim(
            format!("{} within two grid steps", market.product(k).id),
            (solved[k] - grid.prices[k]).abs() <= 2.0 * grid.step,
            solved[k] - grid.prices[k],
        );
    }
    Ok(rec.finish())
}

/// Central differences of each product's own-firm profit, laid out like
/// [`market::profit_gradient`].
pub fn finite_diff_gradient(market: &Market, p: &[f64], h: f64) -> Result<Vec<f64>> {
    market.check_prices(p)?;
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("step h = {h} must be positive")));
    }
    let sigma = market.sigma_cap();
    (0..market.len())
        .map(|k| {
            let f = market.firm_of(k);
            let mut step = h;
            for _ in 0..30 {
                if p[k] - step > 0.0 && p[k] + step < sigma {
                    let mut up = p.to_vec();
                    up[k] += step;
                    let mut dn = p.to_vec();
                    dn[k] -= step;
                    let fu = market::profit(market, &up)?.per_firm[f];
                    let fd = market::profit(market, &dn)?.per_firm[f];
                    return Ok((fu - fd) / (2.0 * step));
                }
                step *= 0.5;
            }
            Err(Error::Domain {
                what: "finite-difference price",
                value: p[k],
            })
        })
        .collect()
}

fn interior(market: &Market, p: &[f64], j: usize) -> bool {
    !market.at_cap(p[j])
}

/// Markup differences between interior products: within a firm they depend
/// only on the two products' own slopes; across firms the markup masses enter.
pub fn check_markup_identity(market: &Market, p: &[f64]) -> Result<PropertyReport> {
    require_stationary(market, p, "markup identity")?;
    let shares = demand::choice_probabilities(market, p)?.product_shares;
    let mass = market::markup_mass(market, p, &shares);
    let n = market.len();
    let markup = |j: usize| p[j] - market.product(j).cost.marginal(shares[j]);
    let inv = |j: usize| market.product(j).utility.dw(p[j]).map(|d| 1.0 / d);
    let mut rec = Recorder::new("markup_identity", MARKUP_IDENTITY_TOL);
    for j in 0..n {
        for k in (j + 1)..n {
            if !interior(market, p, j) || !interior(market, p, k) {
                continue;
            }
            let (f, g) = (market.firm_of(j), market.firm_of(k));
            let lhs = markup(j) - markup(k);
            let rhs = (mass[f] - inv(j)?) - (mass[g] - inv(k)?);
            let kind = if f == g { "same firm" } else { "cross firm" };
            rec.residual(
                format!("{} - {} ({kind})", market.product(j).id, market.product(k).id),
                (lhs - rhs).abs(),
            );
        }
    }
    Ok(rec.finish())
}

/// Sign patterns of markups and prices within firms, each sub-check run only
/// under the hypotheses it needs.
pub fn check_monotone_structure(market: &Market, p: &[f64]) -> Result<PropertyReport> {
    require_stationary(market, p, "monotone structure")?;
    let hyp = market.hypotheses();
    let shares = demand::choice_probabilities(market, p)?.product_shares;
    let constant = market.all_constant_costs();
    let mut rec = Recorder::new("monotone_structure", EQUAL_PRICE_TOL);
    if !(hyp.concave_in_price && hyp.separable) {
        rec.note("cost_markup_concave skipped: needs concave_in_price and separable".into());
    }
    if !(hyp.value_costs && (hyp.separable || hyp.unique_value) && constant) {
        rec.note(
            "value_price skipped: needs value_costs, separable or unique_value, and constant costs"
                .into(),
        );
    }
    if !hyp.separable {
        rec.note("cost_markup_direction skipped: needs separable".into());
    }
    if !constant {
        rec.note("equal_prices skipped: needs constant costs".into());
    }
    for f in 0..market.num_firms() {
        let members: Vec<usize> = market
            .members(f)
            .iter()
            .copied()
            .filter(|&j| interior(market, p, j))
            .collect();
        for (a, &j) in members.iter().enumerate() {
            for &k in &members[a + 1..] {
                let (pj, pk) = (market.product(j), market.product(k));
                let same_w = pj.utility == pk.utility;
                let sqsd = check_conditions(&pj.utility).sqsd && check_conditions(&pk.utility).sqsd;
                let cj = pj.cost.marginal(shares[j]);
                let ck = pk.cost.marginal(shares[k]);
                let (mj, mk) = (p[j] - cj, p[k] - ck);
                let pair = format!("{} vs {}", pj.id, pk.id);
                // order the pair so that `hi` has the larger cost
                let (hi, m_hi, m_lo) = if cj >= ck { (j, mj, mk) } else { (k, mk, mj) };

                if hyp.concave_in_price && hyp.separable && cj != ck {
                    if same_w {
                        rec.claim(
                            format!("cost_markup_concave {pair}: higher cost, lower markup"),
                            m_hi < m_lo,
                            m_hi - m_lo,
                        );
                    } else {
                        rec.note(format!("cost_markup_concave {pair} skipped: utilities differ"));
                    }
                }

                if hyp.separable && constant && cj != ck {
                    if same_w && sqsd {
                        let omega = market.product(hi).utility.omega(p[hi])?;
                        let diff = m_hi - m_lo;
                        let label = format!("cost_markup_direction {pair} (omega {omega:+.3e})");
                        if omega == 0.0 {
                            rec.residual(label, diff.abs());
                        } else {
                            rec.claim(label, diff != 0.0 && diff.signum() == omega.signum(), diff);
                        }
                    } else {
                        rec.note(format!(
                            "cost_markup_direction {pair} skipped: utilities differ or fail sqsd"
                        ));
                    }
                }

                if hyp.value_costs && (hyp.separable || hyp.unique_value) && constant && sqsd {
                    let (vj, vk) = (pj.value, pk.value);
                    if vj != vk {
                        let (vh, vl) = if vj > vk { (j, k) } else { (k, j) };
                        let cost = |i: usize| market.product(i).cost.marginal(0.0);
                        if cost(vh) > cost(vl) && (hyp.unique_value || same_w) {
                            rec.claim(
                                format!("value_price {pair}: higher value, higher price"),
                                p[vh] > p[vl],
                                p[vh] - p[vl],
                            );
                        } else {
                            rec.note(format!(
                                "value_price {pair} skipped: data contradict the stated hypotheses"
                            ));
                        }
                    }
                }

                if constant && cj == ck && same_w && sqsd {
                    rec.residual(format!("equal_prices {pair}"), (p[j] - p[k]).abs());
                }
            }
        }
    }
    Ok(rec.finish())
}

/// Identical products sold by different firms are priced in the same order
/// as their owners' profits.
pub fn check_portfolio_effect(market: &Market, p: &[f64]) -> Result<PropertyReport> {
    if market.twins().is_empty() {
        return Err(Error::Refused("portfolio effect needs a declared twin pair".into()));
    }
    if !market.all_constant_costs() {
        return Err(Error::Refused("portfolio effect needs constant unit costs".into()));
    }
    require_stationary(market, p, "portfolio effect")?;
    let profits = market::profit(market, p)?.per_firm;
    let mut rec = Recorder::new("portfolio_effect", PORTFOLIO_PRICE_TOL);
    for &(j, k) in market.twins() {
        let (a, b) = (market.product(j), market.product(k));
        if a.value != b.value || a.utility != b.utility || a.cost != b.cost {
            return Err(Error::Refused(format!(
                "{} and {} are not identical products",
                a.id, b.id
            )));
        }
        let (f, g) = (market.firm_of(j), market.firm_of(k));
        if f == g {
            return Err(Error::Refused(format!("{} and {} share a firm", a.id, b.id)));
        }
        let dpi = profits[f] - profits[g];
        let dp = p[j] - p[k];
        let pair = format!("{} ({}) vs {} ({})", a.id, a.firm, b.id, b.firm);
        if dpi.abs() <= PORTFOLIO_PROFIT_TIE {
            rec.residual(format!("{pair}: tied profits, price gap"), dp.abs());
        } else {
            rec.claim(
                format!("{pair}: profit gap {dpi:+.6e}, price gap"),
                dp != 0.0 && dp.signum() == dpi.signum(),
                dp,
            );
        }
    }
    Ok(rec.finish())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossPartial {
    pub k: String,
    pub l: String,
    /// Assembled from second share derivatives.
    pub analytic: f64,
    /// `-lambda_k lambda_l (phi_k + phi_l)`.
    pub closed_form: f64,
    pub finite_difference: f64,
    pub log_analytic: f64,
    pub log_finite_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupermodularityWitness {
    pub prices: Vec<f64>,
    pub distance: f64,
    pub partials: Vec<CrossPartial>,
    pub all_negative: bool,
    /// Largest gap between analytic and finite-difference cross-partials.
    pub max_fd_error: f64,
}

/// A point arbitrarily close to a firm's best response where every
/// intra-firm cross-partial of profit and of log-profit is negative.
///
/// Raising all of the firm's prices by the same small amount makes every
/// `phi_k` positive, and `D_l D_k pi = -lambda_k lambda_l (phi_k + phi_l)`.
pub fn supermodularity_witness(
    market: &Market,
    f: usize,
    p_star: &[f64],
    radius: f64,
) -> Result<SupermodularityWitness> {
    market.check_prices(p_star)?;
    let members = market.members(f).to_vec();
    if members.len() < 2 {
        return Err(Error::Refused("the witness needs a multi-product firm".into()));
    }
    if !market.all_constant_costs() {
        return Err(Error::Refused("the witness needs constant unit costs".into()));
    }
    if members.iter().any(|&j| !check_conditions(&market.product(j).utility).sqsd) {
        return Err(Error::Refused("the witness needs sub-quadratic second derivatives".into()));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!("radius {radius} must be positive")));
    }
    let grad = market::profit_gradient(market, p_star)?;
    let worst = members.iter().map(|&k| grad[k].abs()).fold(0.0, f64::max);
    if worst > STATIONARITY_TOL {
        return Err(Error::Refused(format!(
            "prices are not a best response (max |gradient| {worst:e})"
        )));
    }
    let delta = radius / (2.0 * (members.len() as f64).sqrt());
    let mut q = p_star.to_vec();
    for &k in &members {
        q[k] += delta;
    }
    let distance = delta * (members.len() as f64).sqrt();

    let pi = market::profit(market, &q)?.per_firm[f];
    let g = market::profit_gradient(market, &q)?;
    let lam = demand::lambda_vector(market, &q)?;
    let field = solver::phi(market, &q)?;
    // step balances truncation (h^2) against cancellation (eps / h^2)
    let h = 1e-3;
    let profit_at = |dk: f64, dl: f64, k: usize, l: usize| -> Result<f64> {
        let mut x = q.clone();
        x[k] += dk;
        x[l] += dl;
        Ok(market::profit(market, &x)?.per_firm[f])
    };
    let mut partials = Vec::new();
    let mut all_negative = true;
    let mut max_fd_error: f64 = 0.0;
    for (a, &k) in members.iter().enumerate() {
        for &l in &members[a + 1..] {
            let analytic = market::profit_cross_partial(market, &q, f, k, l)?;
            let closed_form = -lam[k] * lam[l] * (field[k] + field[l]);
            let log_analytic = (analytic * pi - g[k] * g[l]) / (pi * pi);
            let pp = profit_at(h, h, k, l)?;
            let pm = profit_at(h, -h, k, l)?;
            let mp = profit_at(-h, h, k, l)?;
            let mm = profit_at(-h, -h, k, l)?;
            let finite_difference = (pp - pm - mp + mm) / (4.0 * h * h);
            let log_finite_difference = (pp.ln() - pm.ln() - mp.ln() + mm.ln()) / (4.0 * h * h);
            all_negative &= analytic < 0.0 && log_analytic < 0.0;
            max_fd_error = max_fd_error
                .max((analytic - finite_difference).abs())
                .max((log_analytic - log_finite_difference).abs())
                .max((analytic - closed_form).abs());
            partials.push(CrossPartial {
                k: market.product(k).id.clone(),
                l: market.product(l).id.clone(),
                analytic,
                closed_form,
                finite_difference,
                log_analytic,
                log_finite_difference,
            });
        }
    }
    Ok(SupermodularityWitness {
        prices: q,
        distance,
        partials,
        all_negative,
        max_fd_error,
    })
}

/// Price ladder used by [`divergence_probe`].
pub const DIVERGENCE_LADDER: [f64; 6] = [1e1, 1e2, 1e3, 1e4, 1e5, 1e6];

/// Confirms profits grow without a finite maximizer in one product's price
/// when its utility is not eventually log bounded. Other prices sit at cost plus one.
pub fn divergence_probe(market: &Market, f: usize, j: usize) -> Result<PropertyReport> {
    if j >= market.len() || market.firm_of(j) != f {
        return Err(Error::InvalidParameter(format!("product {j} is not sold by firm {f}")));
    }
    let prod = market.product(j);
    if check_conditions(&prod.utility).elb {
        return Err(Error::Refused(format!(
            "{} has an eventually log bounded utility; profits stay bounded",
            prod.id
        )));
    }
    let mut p: Vec<f64> = (0..market.len())
        .map(|k| market.product(k).cost.marginal(0.0) + 1.0)
        .collect();
    let mut rec = Recorder::new("divergence", 0.0);
    let strict_growth = prod.utility.family() != Family::LogPrice || prod.utility.alpha() < 1.0;
    if !strict_growth {
        rec.note("alpha = 1: profit growth is checked through the price derivative".into());
    }
    let mut prev: Option<f64> = None;
    for &price in &DIVERGENCE_LADDER {
        p[j] = price;
        let profit = market::profit(market, &p)?.per_firm[f];
        let grad = market::profit_gradient(market, &p)?[j];
        rec.claim(format!("gradient at p = {price:e}"), grad > 0.0, grad);
        if let Some(before) = prev {
            rec.claim(
                format!("profit increase into p = {price:e}"),
                !strict_growth || profit > before,
                profit - before,
            );
        }
        prev = Some(profit);
    }
    Ok(rec.finish())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloFirm {
    pub firm: String,
    pub mean: f64,
    pub stderr: f64,
    pub expected: f64,
}

/// Mean realized profit per consumer over repeated multinomial draws.
pub fn monte_carlo_profit(
    market: &Market,
    p: &[f64],
    draws: usize,
    population: u64,
    seed: u64,
) -> Result<Vec<MonteCarloFirm>> {
    if !market.all_constant_costs() {
        return Err(Error::Unsupported(
            "realized profit is linear in demand only with constant unit costs".into(),
        ));
    }
    if draws < 2 || population == 0 {
        return Err(Error::InvalidParameter("need at least two draws and a positive population".into()));
    }
    let probs = demand::choice_probabilities(market, p)?;
    let expected = market::profit(market, p)?.per_firm;
    let markup: Vec<f64> = (0..market.len())
        .map(|j| p[j] - market.product(j).cost.marginal(0.0))
        .collect();
    let mut rng = demand::sampling_rng(seed);
    let nf = market.num_firms();
    let mut sum = vec![0.0; nf];
    let mut sum_sq = vec![0.0; nf];
    for _ in 0..draws {
        let counts = demand::draw_multinomial(&mut rng, &probs.product_shares, population)?;
        let mut realized = vec![0.0; nf];
        for (j, &c) in counts.iter().enumerate() {
            realized[market.firm_of(j)] += c as f64 / population as f64 * markup[j];
        }
        for f in 0..nf {
            sum[f] += realized[f];
            sum_sq[f] += realized[f] * realized[f];
        }
    }
    let n = draws as f64;
    Ok((0..nf)
        .map(|f| {
            let mean = sum[f] / n;
            let var = ((sum_sq[f] - n * mean * mean) / (n - 1.0)).max(0.0);
            MonteCarloFirm {
                firm: market.firms()[f].clone(),
                mean,
                stderr: (var / n).sqrt(),
                expected: expected[f],
            }
        })
        .collect())
}

/// Passes when every firm's sampled mean profit lies within three standard
/// errors of its expected profit.
pub fn check_monte_carlo(firms: &[MonteCarloFirm]) -> PropertyReport {
    let mut rec = Recorder::new("monte_carlo_profit", 3.0);
    for mc in firms {
        let z = if mc.stderr > 0.0 {
            (mc.mean - mc.expected).abs() / mc.stderr
        } else if mc.mean == mc.expected {
            0.0
        } else {
            f64::INFINITY
        };
        rec.residual(format!("{}: standard errors from expectation", mc.firm), z);
    }
    rec.finish()
}

/// Runs the firm's best response from several random starts and reports the
/// largest distance between any two answers.
pub fn uniqueness_probe(
    market: &Market,
    f: usize,
    p: &[f64],
    starts: usize,
    seed: u64,
    opts: &SolveOptions,
) -> Result<(Vec<Vec<f64>>, f64)> {
    use rand::Rng;
    let mut rng = demand::sampling_rng(seed);
    let base = solver::initial_prices(market)?;
    let start_points: Vec<Vec<f64>> = (0..starts)
        .map(|_| {
            base.iter()
                .enumerate()
                .map(|(j, &b)| {
                    let c = market.product(j).cost.marginal(0.0);
                    let x = c + (b - c) * rng.gen_range(0.3..3.0);
                    if market.has_finite_cap() {
                        x.min(0.5 * (c + market.sigma_cap()) + 0.49 * (market.sigma_cap() - c))
                    } else {
                        x
                    }
                })
                .collect()
        })
        .collect();
    let answers: Vec<Vec<f64>> = start_points
        .par_iter()
        .map(|s| solver::best_response_from(market, f, p, s, opts))
        .collect::<Result<_>>()?;
    let mut spread: f64 = 0.0;
    for a in &answers {
        for b in &answers {
            for &k in market.members(f) {
                spread = spread.max((a[k] - b[k]).abs());
            }
        }
    }
    Ok((answers, spread))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{CostModel, Hypotheses, Product};
    use crate::solver::solve_equilibrium;
    use crate::utility::UtilitySpec;

    fn product(id: &str, firm: &str, value: f64, utility: UtilitySpec, c: f64) -> Product {
        Product {
            id: id.into(),
            firm: firm.into(),
            value,
            utility,
            cost: CostModel::Constant { unit_cost: c },
        }
    }

    fn separable() -> Hypotheses {
        Hypotheses {
            separable: true,
            ..Hypotheses::default()
        }
    }

    #[test]
    fn grid_finds_the_monopoly_price() {
        let m = Market::new(
            vec![product("a", "f", 0.0, UtilitySpec::linear(1.0).unwrap(), 0.0)],
            0.0,
        )
        .unwrap();
        let g = grid_best_response(&m, 0, &[1.0], 0.0, 10.0, 2001).unwrap();
        assert!((g.prices[0] - 1.2785).abs() < 0.01);
    }

    #[test]
    fn grid_refuses_large_firms() {
        let u = UtilitySpec::linear(1.0).unwrap();
        let prods = (0..4).map(|j| product(&format!("p{j}"), "f", 0.0, u, 0.0)).collect();
        let m = Market::new(prods, 0.0).unwrap();
        assert!(matches!(
            grid_best_response(&m, 0, &[1.0; 4], 0.0, 5.0, 3),
            Err(Error::Refused(_))
        ));
    }

    #[test]
    fn quadratic_markups_fall_with_cost() {
        let u = UtilitySpec::quadratic(1.0).unwrap();
        let m = Market::new(
            vec![product("lo", "f", 0.5, u, 1.0), product("hi", "f", 0.5, u, 2.0)],
            0.0,
        )
        .unwrap()
        .with_hypotheses(Hypotheses {
            separable: true,
            concave_in_price: true,
            ..Hypotheses::default()
        });
        let r = solve_equilibrium(&m, &SolveOptions::default()).unwrap();
        let report = check_monotone_structure(&m, &r.prices).unwrap();
        assert!(report.passed, "{report:?}");
        assert!(r.prices[1] - 2.0 < r.prices[0] - 1.0);
        // markup gap equals (1 / 2 alpha)(1 / p_j - 1 / p_k)
        let gap = (r.prices[0] - 1.0) - (r.prices[1] - 2.0);
        assert!((gap - 0.5 * (1.0 / r.prices[0] - 1.0 / r.prices[1])).abs() < 1e-9);
        assert!(check_markup_identity(&m, &r.prices).unwrap().passed);
    }

    #[test]
    fn log_price_markups_rise_with_cost() {
        let u = UtilitySpec::log_price(2.0).unwrap();
        let m = Market::new(
            vec![product("lo", "f", 0.0, u, 1.0), product("hi", "f", 0.0, u, 1.5)],
            0.0,
        )
        .unwrap()
        .with_hypotheses(separable());
        let r = solve_equilibrium(&m, &SolveOptions::default()).unwrap();
        assert!(check_monotone_structure(&m, &r.prices).unwrap().passed);
        assert!(((r.prices[1] - r.prices[0]) - 2.0 * 0.5).abs() < 1e-9);
    }

    #[test]
    fn value_does_not_move_prices() {
        let u = UtilitySpec::linear(1.0).unwrap();
        let m = Market::new(
            vec![product("a", "f", 2.0, u, 1.0), product("b", "f", -1.0, u, 1.0)],
            0.0,
        )
        .unwrap();
        let r = solve_equilibrium(&m, &SolveOptions::default()).unwrap();
        let report = check_monotone_structure(&m, &r.prices).unwrap();
        assert!(report.passed);
        assert!(report.witnesses.iter().any(|w| w.label.starts_with("equal_prices")));
    }

    #[test]
    fn checks_refuse_non_stationary_prices() {
        let m = Market::new(
            vec![product("a", "f", 0.0, UtilitySpec::linear(1.0).unwrap(), 0.0)],
            0.0,
        )
        .unwrap();
        assert!(matches!(check_markup_identity(&m, &[3.0]), Err(Error::Refused(_))));
    }

    #[test]
    fn divergence_probe_examples() {
        for alpha in [0.5, 1.0] {
            let m = Market::new(
                vec![product("a", "f", 0.0, UtilitySpec::log_price(alpha).unwrap(), 1.0)],
                0.0,
            )
            .unwrap();
            let report = divergence_probe(&m, 0, 0).unwrap();
            assert!(report.passed, "{report:?}");
        }
        let m = Market::new(
            vec![product("a", "f", 0.0, UtilitySpec::linear(1.0).unwrap(), 1.0)],
            0.0,
        )
        .unwrap();
        assert!(matches!(divergence_probe(&m, 0, 0), Err(Error::Refused(_))));
    }

    #[test]
    fn supermodularity_fails_near_best_response() {
        let u = UtilitySpec::linear(1.0).unwrap();
        let m = Market::new(
            vec![
                product("a", "f", 1.0, u, 0.5),
                product("b", "f", 0.0, u, 1.0),
                product("c", "g", 0.5, u, 0.5),
            ],
            0.0,
        )
        .unwrap();
        let r = solve_equilibrium(&m, &SolveOptions::default()).unwrap();
        for radius in [1e-1, 1e-3] {
            let w = supermodularity_witness(&m, 0, &r.prices, radius).unwrap();
            assert!(w.all_negative);
            assert!(w.distance < radius);
            assert!(w.max_fd_error < FD_CROSS_PARTIAL_TOL, "{w:?}");
        }
        assert!(matches!(
            supermodularity_witness(&m, 1, &r.prices, 1e-3),
            Err(Error::Refused(_))
        ));
    }

    #[test]
    fn portfolio_effect_orders_twin_prices() {
        let u = UtilitySpec::linear(1.0).unwrap();
        let asym = Market::new(
            vec![
                product("twin_f", "f", 0.5, u, 1.0),
                product("extra", "f", 1.5, u, 0.5),
                product("twin_g", "g", 0.5, u, 1.0),
            ],
            0.0,
        )
        .unwrap()
        .with_twins(&[("twin_f".into(), "twin_g".into())])
        .unwrap();
        let r = solve_equilibrium(&asym, &SolveOptions::default()).unwrap();
        let report = check_portfolio_effect(&asym, &r.prices).unwrap();
        assert!(report.passed, "{report:?}");
        assert!(r.prices[0] > r.prices[2]);
    }

    #[test]
    fn monte_carlo_matches_expected_profit() {
        let u = UtilitySpec::linear(1.0).unwrap();
        let m = Market::new(
            vec![product("a", "f", 1.0, u, 0.5), product("b", "g", 0.0, u, 0.2)],
            0.0,
        )
        .unwrap();
        let p = [1.8, 1.4];
        let mc = monte_carlo_profit(&m, &p, 20_000, 1000, 42).unwrap();
        assert!(check_monte_carlo(&mc).passed);
    }
}
