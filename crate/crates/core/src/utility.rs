//! Price-utility families `w(p)`, their analytic derivatives, and the
//! regularity certificates the equilibrium results depend on.
//!
//! Every family is a closed form, so [`check_conditions`] can return exact
//! per-family verdicts with witnesses instead of sampling.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower end of the initial bracket used by [`psi_inverse`], measured from the cost.
pub const PSI_BRACKET_OFFSET: f64 = 1e-9;
/// Absolute tolerance on the `psi` residual at the returned price.
pub const PSI_TOL: f64 = 1e-12;
const PSI_MAX_DOUBLINGS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `w = -alpha p`
    Linear,
    /// `w = -alpha p^beta`
    CobbDouglasPrice,
    /// `w = -alpha log p`
    LogPrice,
    /// `w = alpha log(sigma - p)`, finite purchasing power only
    LogRemainingIncome,
    /// `w = -alpha p^2`
    QuadraticPrice,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Linear => "linear",
            Family::CobbDouglasPrice => "cobb_douglas_price",
            Family::LogPrice => "log_price",
            Family::LogRemainingIncome => "log_remaining_income",
            Family::QuadraticPrice => "quadratic_price",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The three regularity conditions on `w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Edsq,
    Sqsd,
    Elb,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Edsq => "eventually decreases sufficiently quickly",
            Condition::Sqsd => "sub-quadratic second derivatives",
            Condition::Elb => "eventually log bounded",
        })
    }
}

/// A validated member of one of the utility families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilitySpec {
    family: Family,
    alpha: f64,
    beta: f64,
    sigma_cap: f64,
}

impl UtilitySpec {
    /// `beta` is ignored except for [`Family::CobbDouglasPrice`]; `sigma_cap`
    /// must be finite for [`Family::LogRemainingIncome`] and infinite otherwise.
    pub fn new(family: Family, alpha: f64, beta: Option<f64>, sigma_cap: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
        }
        let beta = match family {
            Family::CobbDouglasPrice => {
                let b = beta.ok_or_else(|| {
                    Error::InvalidParameter("cobb_douglas_price requires beta".into())
                })?;
                if !(b.is_finite() && b > 0.0) {
                    return Err(Error::InvalidParameter(format!("beta must be positive, got {b}")));
                }
                b
            }
            _ => beta.unwrap_or(1.0),
        };
        if sigma_cap.is_nan() || sigma_cap <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sigma_cap must be positive, got {sigma_cap}"
            )));
        }
        match (family, sigma_cap.is_finite()) {
            (Family::LogRemainingIncome, false) => {
                return Err(Error::InvalidParameter(
                    "log_remaining_income requires a finite sigma_cap".into(),
                ))
            }
            (Family::LogRemainingIncome, true) | (_, false) => {}
            (f, true) => {
                return Err(Error::InvalidParameter(format!(
                    "{f} utility is defined for all prices; sigma_cap must be infinite"
                )))
            }
        }
        Ok(Self {
            family,
            alpha,
            beta,
            sigma_cap,
        })
    }

    pub fn linear(alpha: f64) -> Result<Self> {
        Self::new(Family::Linear, alpha, None, f64::INFINITY)
    }

    pub fn cobb_douglas(alpha: f64, beta: f64) -> Result<Self> {
        Self::new(Family::CobbDouglasPrice, alpha, Some(beta), f64::INFINITY)
    }

    pub fn log_price(alpha: f64) -> Result<Self> {
        Self::new(Family::LogPrice, alpha, None, f64::INFINITY)
    }

    pub fn log_remaining_income(alpha: f64, sigma_cap: f64) -> Result<Self> {
        Self::new(Family::LogRemainingIncome, alpha, None, sigma_cap)
    }

    pub fn quadratic(alpha: f64) -> Result<Self> {
        Self::new(Family::QuadraticPrice, alpha, None, f64::INFINITY)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Exponent; `None` for families that do not use one.
    pub fn beta(&self) -> Option<f64> {
        (self.family == Family::CobbDouglasPrice).then_some(self.beta)
    }

    pub fn sigma_cap(&self) -> f64 {
        self.sigma_cap
    }

    /// `w(p)`. Prices at or above a finite cap, and infinite prices, give `-inf`.
    pub fn w(&self, p: f64) -> Result<f64> {
        if p.is_nan() || p < 0.0 {
            return Err(Error::Domain { what: "price", value: p });
        }
        if p >= self.sigma_cap || p.is_infinite() {
            return Ok(f64::NEG_INFINITY);
        }
        let (a, b) = (self.alpha, self.beta);
        Ok(match self.family {
            Family::Linear => -a * p,
            Family::CobbDouglasPrice => -a * p.powf(b),
            Family::LogPrice => {
                if p == 0.0 {
                    return Err(Error::Domain { what: "price", value: p });
                }
                -a * p.ln()
            }
            Family::LogRemainingIncome => a * (self.sigma_cap - p).ln(),
            Family::QuadraticPrice => -a * p * p,
        })
    }

    fn check_interior(&self, p: f64) -> Result<()> {
        if p.is_nan() || p <= 0.0 || p >= self.sigma_cap || p.is_infinite() {
            return Err(Error::Domain { what: "price", value: p });
        }
        Ok(())
    }

    /// `(Dw)(p)` on the open domain `(0, sigma)`.
    pub fn dw(&self, p: f64) -> Result<f64> {
        self.check_interior(p)?;
        let (a, b) = (self.alpha, self.beta);
        Ok(match self.family {
            Family::Linear => -a,
            Family::CobbDouglasPrice => -a * b * p.powf(b - 1.0),
            Family::LogPrice => -a / p,
            Family::LogRemainingIncome => -a / (self.sigma_cap - p),
            Family::QuadraticPrice => -2.0 * a * p,
        })
    }

    /// `(D^2 w)(p)` on the open domain `(0, sigma)`.
    pub fn d2w(&self, p: f64) -> Result<f64> {
        self.check_interior(p)?;
        let (a, b) = (self.alpha, self.beta);
        Ok(match self.family {
            Family::Linear => 0.0,
            Family::CobbDouglasPrice => -a * b * (b - 1.0) * p.powf(b - 2.0),
            Family::LogPrice => a / (p * p),
            Family::LogRemainingIncome => {
                let r = self.sigma_cap - p;
                -a / (r * r)
            }
            Family::QuadraticPrice => -2.0 * a,
        })
    }

    /// `omega(p) = D^2 w / (Dw)^2`, written out per family so the constant
    /// cases are exact.
    pub fn omega(&self, p: f64) -> Result<f64> {
        self.check_interior(p)?;
        let (a, b) = (self.alpha, self.beta);
        Ok(match self.family {
            Family::Linear => 0.0,
            Family::CobbDouglasPrice => -(b - 1.0) / (a * b * p.powf(b)),
            Family::LogPrice => 1.0 / a,
            Family::LogRemainingIncome => -1.0 / a,
            Family::QuadraticPrice => -1.0 / (2.0 * a * p * p),
        })
    }

    /// `lim_{p -> sigma} omega(p)`; only meaningful when the cap is finite.
    pub fn omega_at_cap(&self) -> Result<f64> {
        match self.family {
            Family::LogRemainingIncome => Ok(-1.0 / self.alpha),
            f => Err(Error::Unsupported(format!("{f} utility has no purchasing power cap"))),
        }
    }

    /// Local willingness to pay `1 / |Dw(p)|`, extended by its limit 0 at the cap.
    pub fn willingness_to_pay(&self, p: f64) -> Result<f64> {
        if self.sigma_cap.is_finite() && p >= self.sigma_cap {
            return Ok(0.0);
        }
        Ok(-1.0 / self.dw(p)?)
    }
}

/// Witness that `Dw(p) <= -r / p` (or `-r / (sigma - p)`) for every `p > p_bar`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EdsqWitness {
    pub r: f64,
    pub p_bar: f64,
}

/// Witness that `w(p) <= -r log p + kappa` for every `p > p_bar`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ElbWitness {
    pub r: f64,
    pub kappa: f64,
    pub p_bar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub edsq: bool,
    pub edsq_witness: Option<EdsqWitness>,
    pub sqsd: bool,
    /// `sup omega` over the domain (may be approached only in a limit).
    pub omega_sup: f64,
    /// Price above which `omega < 1` when `sqsd` fails globally but holds eventually.
    pub sqsd_threshold: Option<f64>,
    pub elb: bool,
    pub elb_witness: Option<ElbWitness>,
    pub notes: String,
}

impl ConditionReport {
    pub fn holds(&self, condition: Condition) -> bool {
        match condition {
            Condition::Edsq => self.edsq,
            Condition::Sqsd => self.sqsd,
            Condition::Elb => self.elb,
        }
    }
}

/// Analytic verdicts for each condition, never sampled.
pub fn check_conditions(spec: &UtilitySpec) -> ConditionReport {
    let (a, b) = (spec.alpha, spec.beta);
    match spec.family {
        Family::Linear => ConditionReport {
            edsq: true,
            edsq_witness: Some(EdsqWitness { r: 2.0, p_bar: 2.0 / a }),
            sqsd: true,
            omega_sup: 0.0,
            sqsd_threshold: None,
            elb: true,
            // max_p (2 log p - a p) is attained at p = 2 / a
            elb_witness: Some(ElbWitness {
                r: 2.0,
                kappa: (2.0 * (2.0 / a).ln() - 2.0).max(0.0),
                p_bar: 0.0,
            }),
            notes: "D^2 w = 0".into(),
        },
        Family::CobbDouglasPrice => {
            let (sqsd, omega_sup, sqsd_threshold, notes) = if b >= 1.0 {
                (true, 0.0, None, "omega <= 0 for beta >= 1".to_string())
            } else {
                let t = ((1.0 - b) / (a * b)).powf(1.0 / b);
                (
                    false,
                    f64::INFINITY,
                    Some(t),
                    format!("beta < 1: omega < 1 only for p > {t}"),
                )
            };
            ConditionReport {
                edsq: true,
                edsq_witness: Some(EdsqWitness {
                    r: 2.0,
                    p_bar: (2.0 / (a * b)).powf(1.0 / b),
                }),
                sqsd,
                omega_sup,
                sqsd_threshold,
                elb: true,
                elb_witness: Some(ElbWitness {
                    r: 2.0,
                    kappa: ((2.0 / b) * (2.0 / (a * b)).ln() - 2.0 / b).max(0.0),
                    p_bar: 0.0,
                }),
                notes,
            }
        }
        Family::LogPrice => {
            let ok = a > 1.0;
            ConditionReport {
                edsq: ok,
                edsq_witness: ok.then_some(EdsqWitness { r: a, p_bar: 0.0 }),
                sqsd: ok,
                omega_sup: 1.0 / a,
                sqsd_threshold: None,
                elb: ok,
                elb_witness: ok.then_some(ElbWitness {
                    r: a,
                    kappa: 0.0,
                    p_bar: 0.0,
                }),
                notes: if ok {
                    format!("omega = 1/alpha = {}", 1.0 / a)
                } else if a < 1.0 {
                    "alpha < 1: profits are unbounded in price".into()
                } else {
                    "alpha = 1: profits increase in price without a finite maximizer".into()
                },
            }
        }
        Family::LogRemainingIncome => {
            let s = spec.sigma_cap;
            let ok = a > 1.0;
            ConditionReport {
                edsq: ok,
                edsq_witness: ok.then_some(EdsqWitness { r: a, p_bar: 0.0 }),
                sqsd: true,
                omega_sup: -1.0 / a,
                sqsd_threshold: None,
                elb: true,
                elb_witness: Some(ElbWitness {
                    r: 2.0,
                    kappa: (a + 2.0) * s.ln(),
                    p_bar: 0.0,
                }),
                notes: "prices are bounded by the purchasing power cap".into(),
            }
        }
        Family::QuadraticPrice => ConditionReport {
            edsq: true,
            edsq_witness: Some(EdsqWitness {
                r: 2.0,
                p_bar: (1.0 / a).sqrt(),
            }),
            sqsd: true,
            omega_sup: 0.0,
            sqsd_threshold: None,
            elb: true,
            elb_witness: Some(ElbWitness {
                r: 2.0,
                kappa: ((1.0 / a).ln() - 1.0).max(0.0),
                p_bar: 0.0,
            }),
            notes: "concave in price: omega = -1/(2 alpha p^2) < 0 for every p > 0".into(),
        },
    }
}

/// `psi(p) = p - c + 1 / Dw(p)`.
pub fn psi(spec: &UtilitySpec, c: f64, p: f64) -> Result<f64> {
    Ok(p - c + 1.0 / spec.dw(p)?)
}

/// The unique `p > c` with `psi(p) = target_profit`.
pub fn psi_inverse(spec: &UtilitySpec, c: f64, target_profit: f64) -> Result<f64> {
    if !(target_profit.is_finite() && target_profit > 0.0) {
        return Err(Error::Domain {
            what: "target profit",
            value: target_profit,
        });
    }
    let report = check_conditions(spec);
    if !report.edsq {
        return Err(Error::ConditionFailed(Condition::Edsq));
    }
    if !report.sqsd {
        return Err(Error::ConditionFailed(Condition::Sqsd));
    }
    let cap = spec.sigma_cap;
    let f = |p: f64| psi(spec, c, p).map(|v| v - target_profit);

    let mut lo = c.max(0.0) + PSI_BRACKET_OFFSET;
    if lo >= cap {
        return Err(Error::NoRoot { target: target_profit });
    }
    let f_lo = f(lo)?;
    if f_lo >= 0.0 {
        return if f_lo <= PSI_TOL {
            Ok(lo)
        } else {
            Err(Error::NoRoot { target: target_profit })
        };
    }
    let mut width = 1.0;
    let mut hi = lo + width;
    let mut doublings = 0;
    loop {
        if hi >= cap {
            // psi(sigma-) = sigma - c; step toward the cap instead of past it
            hi = lo + 0.5 * (cap - lo);
            if cap - hi < f64::EPSILON * cap {
                return Err(Error::NoRoot { target: target_profit });
            }
        }
        if f(hi)? > 0.0 {
            break;
        }
        lo = hi;
        width *= 2.0;
        hi = lo + width;
        doublings += 1;
        if doublings > PSI_MAX_DOUBLINGS {
            return Err(Error::NoRoot { target: target_profit });
        }
    }
    loop {
        let mid = 0.5 * (lo + hi);
        let v = f(mid)?;
        if v.abs() <= PSI_TOL || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

/// `chi(p, lambda) = w^{-1}(w(p) - log lambda)`, solved in closed form per family.
pub fn chi(spec: &UtilitySpec, p: f64, lam: f64) -> Result<f64> {
    if lam.is_nan() || lam < 1.0 {
        return Err(Error::Domain { what: "lambda", value: lam });
    }
    if p.is_nan() || p < 0.0 || p >= spec.sigma_cap || p.is_infinite() {
        return Err(Error::Domain { what: "price", value: p });
    }
    if lam == 1.0 {
        return Ok(p);
    }
    let (a, b) = (spec.alpha, spec.beta);
    let shift = lam.ln();
    Ok(match spec.family {
        Family::Linear => p + shift / a,
        Family::CobbDouglasPrice => (p.powf(b) + shift / a).powf(1.0 / b),
        Family::LogPrice => {
            if p == 0.0 {
                return Err(Error::Domain { what: "price", value: p });
            }
            p * (shift / a).exp()
        }
        Family::LogRemainingIncome => spec.sigma_cap - (spec.sigma_cap - p) * (-shift / a).exp(),
        Family::QuadraticPrice => (p * p + shift / a).sqrt(),
    })
}
