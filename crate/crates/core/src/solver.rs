//! Best responses and Bertrand-Nash equilibria via the markup fixed-point maps.
//!
//! Every method looks for zeros of `phi(p) = p - c(P(p)) - zeta(p)`, where
//! `zeta_k` is the firm's markup mass plus the local willingness to pay for
//! product `k`. With a finite purchasing power limit the field is continued
//! past the limit (see [`extended_phi`]) so Newton can work on all of
//! `[0, inf)^J`; the answer is then projected back onto `[0, sigma]^J`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::demand;
use crate::error::{Error, Inadmissible, Result};
use crate::market::{self, Market};
use crate::utility::{check_conditions, psi_inverse};

/// Prices within this distance of the limit are classified as priced out.
pub const BOUNDARY_SNAP: f64 = 1e-9;
/// Largest eigenvalue a certified firm Hessian may have.
pub const HESSIAN_MARGIN: f64 = -1e-12;
const RHO_TOL: f64 = 1e-12;
const MAX_HALVINGS: usize = 6;
const LINE_SEARCH_STEPS: usize = 30;
/// Residual at which a stalled Newton solve hands back from zeta steps.
const NEWTON_HANDOFF: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ZetaIteration,
    EtaIteration,
    NewtonOnPhi,
    ProfitSpace,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::ZetaIteration,
        Method::EtaIteration,
        Method::NewtonOnPhi,
        Method::ProfitSpace,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::ZetaIteration => "zeta_iteration",
            Method::EtaIteration => "eta_iteration",
            Method::NewtonOnPhi => "newton_on_phi",
            Method::ProfitSpace => "profit_space",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method {s}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub method: Method,
    pub max_iter: usize,
    /// Max-norm tolerance on `phi` (or its continuation when the limit is finite).
    pub tol: f64,
    /// Initial step weight of the damped iterations, in `(0, 1]`.
    pub damping: f64,
    /// Growth factor of the bracket used when inverting `psi`.
    pub price_cap_expand: f64,
    /// Use a central-difference Jacobian in Newton instead of the analytic one.
    pub fd_jacobian: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            method: Method::NewtonOnPhi,
            max_iter: 1000,
            tol: 1e-10,
            damping: 1.0,
            price_cap_expand: 2.0,
            fd_jacobian: false,
        }
    }
}

impl SolveOptions {
    pub fn with_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if !(self.price_cap_expand > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "price_cap_expand must exceed 1, got {}",
                self.price_cap_expand
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumResult {
    pub method: Method,
    pub prices: Vec<f64>,
    pub shares: Vec<f64>,
    pub outside_share: f64,
    /// Per-firm expected profit, in firm order.
    pub profits: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub boundary_products: Vec<String>,
    pub certified: bool,
}

struct State {
    shares: Vec<f64>,
    lam: Vec<f64>,
    mass: Vec<f64>,
}

fn state(market: &Market, p: &[f64]) -> Result<State> {
    if market.theta() == f64::NEG_INFINITY {
        return Err(Inadmissible::NoOutsideGood.into());
    }
    let probs = demand::choice_probabilities(market, p)?;
    let shares = probs.product_shares;
    let lam = demand::lambda_from_shares(market, p, &shares)?;
    let mass = market::markup_mass(market, p, &shares);
    Ok(State { shares, lam, mass })
}

/// `zeta_k = sum_{j in f(k)} P_j (p_j - c_j(P_j)) + 1 / |Dw_k(p_k)|`; the last
/// term is dropped for products at the limit.
pub fn zeta_map(market: &Market, p: &[f64]) -> Result<Vec<f64>> {
    let s = state(market, p)?;
    (0..market.len())
        .map(|k| {
            let wtp = market.product(k).utility.willingness_to_pay(p[k])?;
            Ok(s.mass[market.firm_of(k)] + wtp)
        })
        .collect()
}

/// Markups implied by inverting the intra-firm share Jacobian, in closed form.
pub fn eta_map(market: &Market, p: &[f64]) -> Result<Vec<f64>> {
    let s = state(market, p)?;
    let mut out = vec![0.0; market.len()];
    for f in 0..market.num_firms() {
        let members = market.members(f);
        let firm_share: f64 = members.iter().map(|&j| s.shares[j]).sum();
        if firm_share >= 1.0 {
            return Err(Error::Inconsistent(format!(
                "firm {} holds the whole market; the share Jacobian is singular",
                market.firms()[f]
            )));
        }
        let wtp: Vec<f64> = members
            .iter()
            .map(|&j| market.product(j).utility.willingness_to_pay(p[j]))
            .collect::<Result<_>>()?;
        let weighted: f64 = members.iter().zip(&wtp).map(|(&j, a)| s.shares[j] * a).sum();
        let bump = weighted / (1.0 - firm_share);
        for (&j, a) in members.iter().zip(&wtp) {
            out[j] = a + bump;
        }
    }
    Ok(out)
}

/// `phi(p) = p - c(P(p)) - zeta(p)`.
pub fn phi(market: &Market, p: &[f64]) -> Result<Vec<f64>> {
    let s = state(market, p)?;
    phi_from(market, p, &s, false)
}

/// Continuation of `phi` past the purchasing power limit, linear in `p_k`
/// with slope `1 - omega_k(sigma)`; equals `phi` on `[0, sigma]^J`.
pub fn extended_phi(market: &Market, p: &[f64]) -> Result<Vec<f64>> {
    let s = state(market, p)?;
    phi_from(market, p, &s, true)
}

fn phi_from(market: &Market, p: &[f64], s: &State, extend: bool) -> Result<Vec<f64>> {
    (0..market.len())
        .map(|k| {
            let prod = market.product(k);
            let base = p[k] - prod.cost.marginal(s.shares[k]) - s.mass[market.firm_of(k)];
            if market.at_cap(p[k]) {
                let slope = if extend { prod.utility.omega_at_cap()? } else { 0.0 };
                Ok(base - slope * (p[k] - market.sigma_cap()))
            } else {
                Ok(base + 1.0 / prod.utility.dw(p[k])?)
            }
        })
        .collect()
}

/// Analytic Jacobian of [`extended_phi`]:
/// `D_l Phi_k = delta_kl (1 - omega_k) - c1_k D_l P_k - D_l mass_{f(k)}`.
pub fn phi_jacobian(market: &Market, p: &[f64]) -> Result<DMatrix<f64>> {
    let s = state(market, p)?;
    let n = market.len();
    let dp = demand::jacobian_from(market, &s.shares, &s.lam, demand::Scope::Full);
    // D_l mass_f = [l in f] (lam_l (m_l - c1_l P_l) + P_l) - lam_l sum_{j in f} P_j (m_j - c1_j P_j)
    let adjusted: Vec<f64> = (0..n)
        .map(|j| {
            let cost = market.product(j).cost;
            p[j] - cost.marginal(s.shares[j]) - cost.curvature() * s.shares[j]
        })
        .collect();
    let firm_sum: Vec<f64> = (0..market.num_firms())
        .map(|f| market.members(f).iter().map(|&j| s.shares[j] * adjusted[j]).sum())
        .collect();
    let mut omega = Vec::with_capacity(n);
    for k in 0..n {
        let spec = market.product(k).utility;
        omega.push(if market.at_cap(p[k]) {
            spec.omega_at_cap()?
        } else {
            spec.omega(p[k])?
        });
    }
    Ok(DMatrix::from_fn(n, n, |k, l| {
        let f = market.firm_of(k);
        let own = if market.firm_of(l) == f {
            s.lam[l] * adjusted[l] + s.shares[l]
        } else {
            0.0
        };
        let d_mass = own - s.lam[l] * firm_sum[f];
        let delta = if k == l { 1.0 - omega[k] } else { 0.0 };
        delta - market.product(k).cost.curvature() * dp[(k, l)] - d_mass
    }))
}

/// Central-difference Jacobian of [`extended_phi`], for cross-checking.
pub fn phi_jacobian_fd(market: &Market, p: &[f64]) -> Result<DMatrix<f64>> {
    let n = market.len();
    let mut jac = DMatrix::zeros(n, n);
    for l in 0..n {
        let h = 1e-6 * p[l].abs().max(1.0);
        let h = h.min(0.5 * p[l]);
        let mut up = p.to_vec();
        up[l] += h;
        let mut dn = p.to_vec();
        dn[l] -= h;
        let fu = extended_phi(market, &up)?;
        let fd = extended_phi(market, &dn)?;
        for k in 0..n {
            jac[(k, l)] = (fu[k] - fd[k]) / (2.0 * h);
        }
    }
    Ok(jac)
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Solves `p = c(P(p)) + eps` by damped fixed-point iteration.
pub fn rho_solve(market: &Market, eps: &[f64]) -> Result<Vec<f64>> {
    market.check_prices(eps)?;
    if eps.iter().any(|&e| !(e >= 0.0 && e.is_finite())) {
        return Err(Error::InvalidParameter("eps must be finite and non-negative".into()));
    }
    if market.theta() == f64::NEG_INFINITY {
        return Err(Inadmissible::NoOutsideGood.into());
    }
    let target = |p: &[f64]| -> Result<Vec<f64>> {
        let shares = demand::choice_probabilities(market, p)?.product_shares;
        Ok((0..market.len())
            .map(|j| market.product(j).cost.marginal(shares[j]) + eps[j])
            .collect())
    };
    let mut p: Vec<f64> = (0..market.len())
        .map(|j| market.product(j).cost.marginal(0.0) + eps[j])
        .collect();
    let mut t = target(&p)?;
    let mut res = max_abs(p.iter().zip(&t).map(|(a, b)| a - b));
    let mut damping = 1.0;
    for _ in 0..10_000 {
        if res <= RHO_TOL {
            return Ok(p);
        }
        let trial: Vec<f64> = p.iter().zip(&t).map(|(a, b)| a + damping * (b - a)).collect();
        let t_trial = target(&trial)?;
        let r_trial = max_abs(trial.iter().zip(&t_trial).map(|(a, b)| a - b));
        if r_trial > res && damping > 1e-6 {
            damping *= 0.5;
            continue;
        }
        p = trial;
        t = t_trial;
        res = r_trial;
    }
    Err(Error::Inconsistent(format!(
        "rho iteration stalled at residual {res:e}"
    )))
}

/// Starting prices strictly above cost and below the purchasing power limit.
pub fn initial_prices(market: &Market) -> Result<Vec<f64>> {
    let sigma = market.sigma_cap();
    let below_cap = |c: f64, p: f64| if p >= sigma { 0.5 * (c + sigma) } else { p };
    if market.all_constant_costs() {
        (0..market.len())
            .map(|j| {
                let prod = market.product(j);
                let c = prod.cost.marginal(0.0);
                let probe = below_cap(c, c + 1.0);
                Ok(below_cap(c, c + prod.utility.willingness_to_pay(probe)?))
            })
            .collect()
    } else {
        let p = rho_solve(market, &vec![1.0; market.len()])?;
        Ok(p.iter()
            .enumerate()
            .map(|(j, &pj)| below_cap(market.product(j).cost.marginal(0.0), pj))
            .collect())
    }
}

/// Damped Newton on the continued field over the coordinates in `active`.
struct Newton<'a> {
    market: &'a Market,
    active: &'a [usize],
    fd: bool,
}

impl Newton<'_> {
    fn residual(&self, p: &[f64]) -> Option<(Vec<f64>, f64)> {
        // equilibrium markups are positive, so never leave p > c(0)
        if self
            .active
            .iter()
            .any(|&k| !(p[k] > self.market.product(k).cost.marginal(0.0) && p[k].is_finite()))
        {
            return None;
        }
        let full = extended_phi(self.market, p).ok()?;
        let r: Vec<f64> = self.active.iter().map(|&k| full[k]).collect();
        if r.iter().any(|x| !x.is_finite()) {
            return None;
        }
        let norm = max_abs(r.iter().copied());
        Some((r, norm))
    }

    fn step(&self, p: &[f64], r: &[f64]) -> Option<Vec<f64>> {
        let jac = if self.fd {
            phi_jacobian_fd(self.market, p).ok()?
        } else {
            phi_jacobian(self.market, p).ok()?
        };
        let n = self.active.len();
        let sub = DMatrix::from_fn(n, n, |a, b| jac[(self.active[a], self.active[b])]);
        let rhs = DVector::from_iterator(n, r.iter().map(|x| -x));
        let dx = sub.lu().solve(&rhs)?;
        dx.iter().all(|x| x.is_finite()).then(|| dx.iter().copied().collect())
    }

    fn apply(&self, p: &[f64], dir: &[f64], t: f64) -> Vec<f64> {
        let mut q = p.to_vec();
        for (a, &k) in self.active.iter().enumerate() {
            q[k] += t * dir[a];
        }
        q
    }

    /// Damped Newton with a backtracking line search. Stops early, unconverged,
    /// when no step along the Newton direction reduces the residual.
    fn newton(&self, mut p: Vec<f64>, max_iter: usize, tol: f64) -> Option<(Vec<f64>, usize, f64)> {
        let (mut r, mut res) = self.residual(&p)?;
        for iter in 0..max_iter {
            if res <= tol {
                return Some((p, iter, res));
            }
            let dx = self.step(&p, &r)?;
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..LINE_SEARCH_STEPS {
                let trial = self.apply(&p, &dx, t);
                if let Some((rt, nt)) = self.residual(&trial) {
                    if nt < (1.0 - 1e-4 * t) * res {
                        (p, r, res) = (trial, rt, nt);
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                return Some((p, iter, res));
            }
        }
        Some((p, max_iter, res))
    }

    /// Plain steps `p <- p - d phi(p)`, shrinking `d` only to stay in the domain.
    fn zeta_walk(&self, mut p: Vec<f64>, max_iter: usize, target: f64, damping: f64) -> (Vec<f64>, usize, f64) {
        let Some((mut r, mut res)) = self.residual(&p) else {
            return (p, 0, f64::INFINITY);
        };
        for iter in 0..max_iter {
            if res <= target {
                return (p, iter, res);
            }
            let mut d = damping;
            let mut next = None;
            for _ in 0..=MAX_HALVINGS {
                let trial = self.apply(&p, &r, -d);
                if let Some(found) = self.residual(&trial) {
                    next = Some((trial, found));
                    break;
                }
                d *= 0.5;
            }
            let Some((trial, (rt, nt))) = next else {
                return (p, iter, res);
            };
            (p, r, res) = (trial, rt, nt);
        }
        (p, max_iter, res)
    }

    /// Newton from `p0`; if it stalls, zeta steps from `p0` until the residual
    /// is small, then Newton again from there.
    fn run(&self, p0: Vec<f64>, opts: &SolveOptions) -> Result<(Vec<f64>, usize, f64)> {
        if self.residual(&p0).is_none() {
            return Err(Error::InvalidParameter("starting prices are outside the domain".into()));
        }
        if let Some((p, it, res)) = self.newton(p0.clone(), opts.max_iter, opts.tol) {
            if res <= opts.tol {
                return Ok((p, it, res));
            }
        }
        let (p1, walked, res1) = self.zeta_walk(p0, opts.max_iter, opts.tol.max(NEWTON_HANDOFF), opts.damping);
        if res1 <= opts.tol {
            return Ok((p1, walked, res1));
        }
        let mut res = res1;
        if let Some((p, it, r)) = self.newton(p1, opts.max_iter, opts.tol) {
            if r <= opts.tol {
                return Ok((p, walked + it, r));
            }
            res = res.min(r);
        }
        Err(Error::NonConvergence {
            method: Method::NewtonOnPhi.name().into(),
            iterations: opts.max_iter,
            residual: res,
        })
    }
}

/// Damped iteration `p <- p - d g(p)` where `g` is `phi` or `p - c - eta`;
/// convergence is always judged on `phi`.
fn markup_iteration(
    market: &Market,
    p0: Vec<f64>,
    opts: &SolveOptions,
    use_eta: bool,
) -> Result<(Vec<f64>, usize, f64)> {
    let g = |p: &[f64]| -> Result<Vec<f64>> {
        if use_eta {
            let s = demand::choice_probabilities(market, p)?.product_shares;
            let eta = eta_map(market, p)?;
            Ok((0..market.len())
                .map(|j| p[j] - market.product(j).cost.marginal(s[j]) - eta[j])
                .collect())
        } else {
            phi(market, p)
        }
    };
    let mut p = p0;
    let mut gp = g(&p)?;
    let mut gnorm = max_abs(gp.iter().copied());
    for iter in 0..opts.max_iter {
        let res = max_abs(phi(market, &p)?);
        if res <= opts.tol {
            return Ok((p, iter, res));
        }
        let mut d = opts.damping;
        let mut next = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = p.iter().zip(&gp).map(|(a, b)| a - d * b).collect();
            if trial
                .iter()
                .enumerate()
                .all(|(j, &x)| x > market.product(j).cost.marginal(0.0))
            {
                if let Ok(gt) = g(&trial) {
                    let nt = max_abs(gt.iter().copied());
                    let improves = nt < gnorm;
                    next = Some((trial, gt, nt));
                    if improves {
                        break;
                    }
                }
            }
            d *= 0.5;
        }
        let Some((trial, gt, nt)) = next else { break };
        p = trial;
        gp = gt;
        gnorm = nt;
    }
    let res = max_abs(phi(market, &p)?);
    if res <= opts.tol {
        return Ok((p, opts.max_iter, res));
    }
    let method = if use_eta { Method::EtaIteration } else { Method::ZetaIteration };
    Err(Error::NonConvergence {
        method: method.name().into(),
        iterations: opts.max_iter,
        residual: res,
    })
}

/// Prices `Psi_j(pi_{f(j)})` for a per-firm profit vector.
fn prices_from_profits(market: &Market, pi: &[f64]) -> Result<Vec<f64>> {
    (0..market.len())
        .map(|j| {
            let prod = market.product(j);
            psi_inverse(&prod.utility, prod.cost.marginal(0.0), pi[market.firm_of(j)])
        })
        .collect()
}

/// Fixed point of `pi <- pi_hat(Psi(pi))` in the `F`-dimensional profit space.
pub fn profit_space_solve(market: &Market, opts: &SolveOptions) -> Result<EquilibriumResult> {
    opts.validate()?;
    market.admissibility()?;
    if !market.all_constant_costs() {
        return Err(Error::Unsupported(
            "profit-space iteration needs constant unit costs".into(),
        ));
    }
    if market.has_finite_cap() {
        return Err(Error::Unsupported(
            "profit-space iteration does not handle a finite purchasing power limit".into(),
        ));
    }
    let mut pi = market::profit(market, &initial_prices(market)?)?.per_firm;
    let image = |pi: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let p = prices_from_profits(market, pi)?;
        let next = market::profit(market, &p)?.per_firm;
        Ok((p, next))
    };
    let (mut p, mut next) = image(&pi)?;
    let mut gap = max_abs(pi.iter().zip(&next).map(|(a, b)| a - b));
    let mut iterations = opts.max_iter;
    for iter in 0..opts.max_iter {
        if max_abs(phi(market, &p)?) <= opts.tol {
            iterations = iter;
            break;
        }
        let mut d = opts.damping;
        let mut candidate = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = pi.iter().zip(&next).map(|(a, b)| a + d * (b - a)).collect();
            let (tp, tn) = image(&trial)?;
            let tg = max_abs(trial.iter().zip(&tn).map(|(a, b)| a - b));
            let improves = tg < gap;
            candidate = Some((trial, tp, tn, tg));
            if improves {
                break;
            }
            d *= 0.5;
        }
        let (trial, tp, tn, tg) = candidate.expect("at least one trial");
        pi = trial;
        p = tp;
        next = tn;
        gap = tg;
    }
    let residual = max_abs(phi(market, &p)?);
    if residual > opts.tol {
        return Err(Error::NonConvergence {
            method: Method::ProfitSpace.name().into(),
            iterations: opts.max_iter,
            residual,
        });
    }
    finish(market, p, iterations, Method::ProfitSpace, opts.tol)
}

/// Post-solve checks shared by every method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub residual: f64,
    /// Largest Hessian eigenvalue per firm.
    pub max_eigenvalues: Vec<f64>,
    pub positive_markups: bool,
    pub certified: bool,
}

/// Checks stationarity, second-order sufficiency and positive markups at `p`.
pub fn certify(market: &Market, p: &[f64], tol: f64) -> Result<Certificate> {
    // complementarity residual: |phi| inside, positive part at the limit
    let field = phi(market, p)?;
    let residual = (0..market.len())
        .map(|j| if market.at_cap(p[j]) { field[j].max(0.0) } else { field[j].abs() })
        .fold(0.0, f64::max);
    let shares = demand::choice_probabilities(market, p)?.product_shares;
    let positive_markups = (0..market.len())
        .filter(|&j| !market.at_cap(p[j]))
        .all(|j| p[j] > market.product(j).cost.marginal(shares[j]) && p[j].is_finite());
    let mut max_eigenvalues = Vec::with_capacity(market.num_firms());
    let mut definite = true;
    for f in 0..market.num_firms() {
        match market::hessian_at_stationary(market, f, p) {
            Ok(h) => {
                let ev = h.max_eigenvalue();
                definite &= ev < HESSIAN_MARGIN;
                max_eigenvalues.push(ev);
            }
            Err(Error::NotStationary { .. }) => {
                definite = false;
                max_eigenvalues.push(f64::NAN);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Certificate {
        residual,
        max_eigenvalues,
        positive_markups,
        certified: residual <= tol && definite && positive_markups,
    })
}

fn finish(
    market: &Market,
    prices: Vec<f64>,
    iterations: usize,
    method: Method,
    tol: f64,
) -> Result<EquilibriumResult> {
    let cert = certify(market, &prices, tol)?;
    if !cert.certified {
        return Err(Error::NotCertified(format!(
            "residual {:e}, max Hessian eigenvalues {:?}, positive markups {}",
            cert.residual, cert.max_eigenvalues, cert.positive_markups
        )));
    }
    let probs = demand::choice_probabilities(market, &prices)?;
    let profits = market::profit(market, &prices)?.per_firm;
    let boundary_products = (0..market.len())
        .filter(|&j| market.at_cap(prices[j]))
        .map(|j| market.product(j).id.clone())
        .collect();
    Ok(EquilibriumResult {
        method,
        shares: probs.product_shares,
        outside_share: probs.outside_share,
        prices,
        profits,
        residual: cert.residual,
        iterations,
        boundary_products,
        certified: true,
    })
}

/// Solves for simultaneously stationary prices with the requested method.
/// Markets with a finite purchasing power limit always go through
/// [`extended_phi_solve`].
pub fn solve_equilibrium(market: &Market, opts: &SolveOptions) -> Result<EquilibriumResult> {
    opts.validate()?;
    market.admissibility()?;
    if market.has_finite_cap() {
        return extended_phi_solve(market, opts);
    }
    let p0 = initial_prices(market)?;
    let all: Vec<usize> = (0..market.len()).collect();
    let (p, iterations, _) = match opts.method {
        Method::NewtonOnPhi => Newton {
            market,
            active: &all,
            fd: opts.fd_jacobian,
        }
        .run(p0, opts)?,
        Method::ZetaIteration => markup_iteration(market, p0, opts, false)?,
        Method::EtaIteration => markup_iteration(market, p0, opts, true)?,
        Method::ProfitSpace => return profit_space_solve(market, opts),
    };
    finish(market, p, iterations, opts.method, opts.tol)
}

fn project(market: &Market, p: &mut [f64], active: &[usize]) {
    let sigma = market.sigma_cap();
    for &k in active {
        if p[k] >= sigma - BOUNDARY_SNAP {
            p[k] = sigma;
        }
    }
}

fn reject_priced_out_firms(market: &Market, p: &[f64]) -> Result<()> {
    for f in 0..market.num_firms() {
        if market.members(f).iter().all(|&j| market.at_cap(p[j])) {
            return Err(Error::Inconsistent(format!(
                "firm {} would price every product out of the market",
                market.firms()[f]
            )));
        }
    }
    Ok(())
}

/// Newton on the continued field, then projection onto `[0, sigma]^J` and
/// verification of the complementarity conditions there.
pub fn extended_phi_solve(market: &Market, opts: &SolveOptions) -> Result<EquilibriumResult> {
    opts.validate()?;
    market.admissibility()?;
    if !market.has_finite_cap() {
        return Err(Error::Unsupported(
            "the continued field needs a finite purchasing power limit".into(),
        ));
    }
    let all: Vec<usize> = (0..market.len()).collect();
    let (mut p, iterations, _) = Newton {
        market,
        active: &all,
        fd: opts.fd_jacobian,
    }
    .run(initial_prices(market)?, opts)?;
    project(market, &mut p, &all);
    reject_priced_out_firms(market, &p)?;
    let vi = vi_check(market, &p, opts.tol)?;
    if !vi.passed {
        return Err(Error::Inconsistent(format!(
            "projected prices violate the optimality conditions (worst {:e})",
            vi.worst
        )));
    }
    finish(market, p, iterations, Method::NewtonOnPhi, opts.tol)
}

/// Best response of firm `f` to the other firms' prices in `p`.
pub fn best_response(market: &Market, f: usize, p: &[f64], opts: &SolveOptions) -> Result<Vec<f64>> {
    let start = initial_prices(market)?;
    best_response_from(market, f, p, &start, opts)
}

/// As [`best_response`], starting the firm's prices from `start`.
pub fn best_response_from(
    market: &Market,
    f: usize,
    p: &[f64],
    start: &[f64],
    opts: &SolveOptions,
) -> Result<Vec<f64>> {
    opts.validate()?;
    market.admissibility()?;
    market.check_prices(p)?;
    market.check_prices(start)?;
    if f >= market.num_firms() {
        return Err(Error::InvalidParameter(format!("no firm with index {f}")));
    }
    let active = market.members(f);
    let mut p0 = p.to_vec();
    for &k in active {
        p0[k] = start[k];
    }
    let (mut q, _, _) = Newton {
        market,
        active,
        fd: opts.fd_jacobian,
    }
    .run(p0, opts)?;
    if market.has_finite_cap() {
        project(market, &mut q, active);
        if active.iter().all(|&j| market.at_cap(q[j])) {
            return Err(Error::Inconsistent(format!(
                "firm {} would price every product out of the market",
                market.firms()[f]
            )));
        }
    }
    let h = market::hessian_at_stationary(market, f, &q)?;
    let ev = h.max_eigenvalue();
    if !(ev < HESSIAN_MARGIN) {
        return Err(Error::NotCertified(format!(
            "best response Hessian has eigenvalue {ev:e}"
        )));
    }
    Ok(q)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViEntry {
    pub product: String,
    pub boundary: bool,
    /// `phi_j` for interior products; `sigma - c_j(0) - zeta_j` at the limit.
    pub value: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViReport {
    pub passed: bool,
    pub tolerance: f64,
    pub worst: f64,
    pub entries: Vec<ViEntry>,
}

impl ViReport {
    pub fn flagged(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| !e.ok)
            .map(|e| e.product.as_str())
            .collect()
    }
}

/// Optimality conditions on `[0, sigma]^J`: `phi_j = 0` inside, `phi_j <= 0` at the limit.
pub fn vi_check(market: &Market, p: &[f64], tol: f64) -> Result<ViReport> {
    market.check_prices(p)?;
    if p.iter().any(|&x| x.is_nan() || x < 0.0 || x > market.sigma_cap()) {
        return Err(Error::InvalidParameter("prices must lie in [0, sigma]".into()));
    }
    let field = phi(market, p)?;
    let mut worst: f64 = 0.0;
    let entries = (0..market.len())
        .map(|j| {
            let boundary = market.at_cap(p[j]);
            let value = field[j];
            let violation = if boundary { value.max(0.0) } else { value.abs() };
            worst = worst.max(violation);
            ViEntry {
                product: market.product(j).id.clone(),
                boundary,
                value,
                ok: violation <= tol,
            }
        })
        .collect::<Vec<_>>();
    Ok(ViReport {
        passed: entries.iter().all(|e| e.ok),
        tolerance: tol,
        worst,
        entries,
    })
}

/// A price above which `phi_j > 0` whatever the other prices are, built from
/// the closed-form condition witnesses and inflated twofold.
pub fn outward_bound(market: &Market, j: usize) -> Result<f64> {
    let prod = market.product(j);
    let report = check_conditions(&prod.utility);
    let (Some(edsq), true) = (report.edsq_witness, report.elb) else {
        return Err(Error::ConditionFailed(crate::utility::Condition::Edsq));
    };
    if market.has_finite_cap() {
        return Ok(market.sigma_cap());
    }
    if market.theta() == f64::NEG_INFINITY {
        return Err(Inadmissible::NoOutsideGood.into());
    }
    // P_k p_k <= max(1, p_bar, exp(v_k - theta + kappa)) for any competitor prices
    let revenue_bound = |k: usize| {
        let other = market.product(k);
        let w = check_conditions(&other.utility).elb_witness;
        w.map_or(f64::INFINITY, |w| {
            1f64.max(w.p_bar).max((other.value - market.theta() + w.kappa).exp())
        })
    };
    let profit_bound: f64 = market.members(market.firm_of(j)).iter().map(|&k| revenue_bound(k)).sum();
    let c_max = match prod.cost {
        crate::market::CostModel::Constant { unit_cost } => unit_cost,
        crate::market::CostModel::ConvexQuadratic { c0, c1 } => c0 + c1,
    };
    // for p > p_bar: 1/|Dw| <= p / r, so phi > p (1 - 1/r) - c_max - profit_bound
    let r = edsq.r;
    let linear = (c_max + profit_bound) / (1.0 - 1.0 / r);
    Ok(2.0 * edsq.p_bar.max(linear).max(c_max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{CostModel, Product};
    use crate::utility::UtilitySpec;
    use approx::assert_relative_eq;

    fn product(id: &str, firm: &str, value: f64, utility: UtilitySpec, cost: CostModel) -> Product {
        Product {
            id: id.into(),
            firm: firm.into(),
            value,
            utility,
            cost,
        }
    }

    fn constant(c: f64) -> CostModel {
        CostModel::Constant { unit_cost: c }
    }

    fn monopoly() -> Market {
        let u = UtilitySpec::linear(1.0).unwrap();
        Market::new(vec![product("a", "f", 0.0, u, constant(0.0))], 0.0).unwrap()
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Scalar oracle for the Linear(1) monopoly: phi(p) = p - 1 - p e^-p / (1 + e^-p).
    fn monopoly_oracle() -> f64 {
        bisect(|p| p - 1.0 - p * (-p).exp() / (1.0 + (-p).exp()), 0.0, 10.0)
    }

    #[test]
    fn zeta_and_eta_examples() {
        let m = monopoly();
        let e = (-1.0f64).exp();
        let share = e / (1.0 + e);
        assert_relative_eq!(zeta_map(&m, &[1.0]).unwrap()[0], share + 1.0, epsilon = 1e-15);

        // single product at share 0.5 with Dw = -1
        assert_relative_eq!(eta_map(&m, &[0.0 + 1e-300]).unwrap()[0], 2.0, epsilon = 1e-12);

        let lp = UtilitySpec::log_price(2.0).unwrap();
        let m = Market::new(vec![product("a", "f", 0.0, lp, constant(0.5))], 0.0).unwrap();
        let pi = market::profit(&m, &[3.0]).unwrap().per_firm[0];
        assert_relative_eq!(zeta_map(&m, &[3.0]).unwrap()[0], pi + 1.5, epsilon = 1e-14);
    }

    #[test]
    fn monopoly_equilibrium_matches_oracle() {
        let oracle = monopoly_oracle();
        assert!((oracle - 1.2785).abs() < 1e-4);
        for method in Method::ALL {
            let r = solve_equilibrium(&monopoly(), &SolveOptions::with_method(method)).unwrap();
            assert!(r.certified);
            assert!((r.prices[0] - oracle).abs() < 1e-9, "{method}: {}", r.prices[0]);
            assert!((r.profits[0] - (oracle - 1.0)).abs() < 1e-9);
        }
        let br = best_response(&monopoly(), 0, &[5.0], &SolveOptions::default()).unwrap();
        assert!((br[0] - oracle).abs() < 1e-9);
    }

    #[test]
    fn symmetric_duopoly_matches_scalar_oracle() {
        let u = UtilitySpec::linear(1.0).unwrap();
        let m = Market::new(
            vec![
                product("a", "f", 0.0, u, constant(0.0)),
                product("b", "g", 0.0, u, constant(0.0)),
            ],
            0.0,
        )
        .unwrap();
        // symmetric phi: p - 1 - p e^-p / (1 + 2 e^-p) = 0
        let oracle = bisect(|p| p - 1.0 - p * (-p).exp() / (1.0 + 2.0 * (-p).exp()), 0.0, 10.0);
        let r = solve_equilibrium(&m, &SolveOptions::default()).unwrap();
        assert!((r.prices[0] - oracle).abs() < 1e-9);
        assert!((r.prices[1] - oracle).abs() < 1e-9);
    }

    #[test]
    fn linear_utility_gives_constant_markups() {
        let u = UtilitySpec::linear(0.8).unwrap();
        let m = Market::new(
            vec![
                product("a", "f", 1.0, u, constant(0.5)),
                product("b", "f", 0.2, u, constant(2.0)),
                product("c", "g", 0.5, u, constant(1.0)),
            ],
            0.0,
        )
        .unwrap();
        let r = solve_equilibrium(&m, &SolveOptions::default()).unwrap();
        assert!(((r.prices[0] - 0.5) - (r.prices[1] - 2.0)).abs() < 1e-9);
    }

    #[test]
    fn profit_space_dimension_and_reconstruction() {
        let u = UtilitySpec::quadratic(0.5).unwrap();
        let m = Market::new(
            vec![
                product("a", "f", 1.0, u, constant(0.5)),
                product("b", "f", 0.2, u, constant(1.0)),
                product("c", "g", 0.5, u, constant(1.0)),
            ],
            0.0,
        )
        .unwrap();
        let r = profit_space_solve(&m, &SolveOptions::with_method(Method::ProfitSpace)).unwrap();
        assert_eq!(r.profits.len(), 2);
        for j in 0..3 {
            let prod = m.product(j);
            let psi = crate::utility::psi(&prod.utility, prod.cost.marginal(0.0), r.prices[j]).unwrap();
            assert!((psi - r.profits[m.firm_of(j)]).abs() < 1e-9);
        }
    }

    #[test]
    fn profit_space_rejects_convex_costs() {
        let u = UtilitySpec::linear(1.0).unwrap();
        let m = Market::new(
            vec![product("a", "f", 0.0, u, CostModel::ConvexQuadratic { c0: 1.0, c1: 1.0 })],
            0.0,
        )
        .unwrap();
        assert!(matches!(
            solve_equilibrium(&m, &SolveOptions::with_method(Method::ProfitSpace)),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn rho_examples() {
        let u = UtilitySpec::linear(1.0).unwrap();
        let m = Market::new(vec![product("a", "f", 0.0, u, constant(1.5))], 0.0).unwrap();
        assert_eq!(rho_solve(&m, &[0.7]).unwrap(), vec![1.5 + 0.7]);

        let m = Market::new(
            vec![product("a", "f", 0.0, u, CostModel::ConvexQuadratic { c0: 1.0, c1: 2.0 })],
            0.0,
        )
        .unwrap();
        let p = rho_solve(&m, &[1.0]).unwrap()[0];
        let share = |p: f64| (-p).exp() / (1.0 + (-p).exp());
        let oracle = bisect(|p| p - 1.0 - 2.0 * share(p) - 1.0, 0.0, 10.0);
        assert!((p - oracle).abs() < 1e-11);
        let p0 = rho_solve(&m, &[0.0]).unwrap()[0];
        assert!((p0 - 1.0 - 2.0 * share(p0)).abs() < 1e-12);
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let lri = UtilitySpec::log_remaining_income(2.5, 6.0).unwrap();
        let m = Market::new(
            vec![
                product("a", "f", 1.0, lri, CostModel::ConvexQuadratic { c0: 1.0, c1: 0.8 }),
                product("b", "f", 0.5, lri, CostModel::ConvexQuadratic { c0: 0.5, c1: 1.5 }),
                product("c", "g", 0.0, lri, CostModel::ConvexQuadratic { c0: 0.7, c1: 0.3 }),
            ],
            -0.5,
        )
        .unwrap();
        for p in [[2.0, 3.0, 2.5], [2.0, 7.0, 3.0], [4.5, 1.5, 6.5]] {
            let a = phi_jacobian(&m, &p).unwrap();
            let fd = phi_jacobian_fd(&m, &p).unwrap();
            assert!((a - fd).amax() < 1e-6);
        }
    }

    #[test]
    fn extended_field_is_continuous_at_the_cap() {
        let lri = UtilitySpec::log_remaining_income(2.5, 6.0).unwrap();
        let m = Market::new(
            vec![
                product("a", "f", 1.0, lri, constant(1.0)),
                product("b", "f", 0.5, lri, constant(2.0)),
            ],
            0.0,
        )
        .unwrap();
        let at = extended_phi(&m, &[2.0, 6.0]).unwrap();
        for h in [1e-6, 1e-8] {
            let below = extended_phi(&m, &[2.0, 6.0 - h]).unwrap();
            let above = extended_phi(&m, &[2.0, 6.0 + h]).unwrap();
            for k in 0..2 {
                assert!((below[k] - at[k]).abs() < 1e-5 && (above[k] - at[k]).abs() < 1e-5);
            }
        }
        assert_eq!(phi(&m, &[2.0, 6.0]).unwrap(), at);
    }

    #[test]
    fn vi_check_examples() {
        let r = solve_equilibrium(&monopoly(), &SolveOptions::default()).unwrap();
        assert!(vi_check(&monopoly(), &r.prices, 1e-10).unwrap().passed);
        let bumped = vi_check(&monopoly(), &[r.prices[0] + 0.1], 1e-10).unwrap();
        assert!(!bumped.passed);
        assert_eq!(bumped.flagged(), vec!["a"]);

        let lri = UtilitySpec::log_remaining_income(2.0, 5.0).unwrap();
        let m = Market::new(
            vec![
                product("a", "f", 0.0, lri, constant(1.0)),
                product("b", "g", 0.0, lri, constant(1.0)),
            ],
            0.0,
        )
        .unwrap();
        assert!(!vi_check(&m, &[5.0, 5.0], 1e-10).unwrap().passed);
    }

    #[test]
    fn divergent_utility_is_rejected() {
        let u = UtilitySpec::log_price(1.0).unwrap();
        let m = Market::new(vec![product("a", "f", 0.0, u, constant(1.0))], 0.0).unwrap();
        assert!(matches!(
            best_response(&m, 0, &[2.0], &SolveOptions::default()),
            Err(Error::Inadmissible(Inadmissible::Divergent { .. }))
        ));
    }

    #[test]
    fn outward_bound_makes_phi_positive() {
        let m = Market::new(
            vec![
                product("a", "f", 1.0, UtilitySpec::linear(0.7).unwrap(), constant(1.0)),
                product("b", "f", 0.0, UtilitySpec::quadratic(0.3).unwrap(), constant(0.5)),
                product("c", "g", 0.5, UtilitySpec::log_price(2.0).unwrap(), constant(0.2)),
            ],
            0.0,
        )
        .unwrap();
        for j in 0..3 {
            let bound = outward_bound(&m, j).unwrap();
            for others in [0.5, 3.0, 50.0] {
                let mut p = vec![others; 3];
                p[j] = bound;
                assert!(phi(&m, &p).unwrap()[j] > 0.0);
                p[j] = m.product(j).cost.marginal(0.0).max(1e-6);
                assert!(phi(&m, &p).unwrap()[j] < 0.0);
            }
        }
    }
}
