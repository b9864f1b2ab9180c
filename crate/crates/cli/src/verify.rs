use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::Result;
use bertrand_logit::market::{self, hessian_at_stationary};
use bertrand_logit::solver::{best_response, solve_equilibrium, vi_check, HESSIAN_MARGIN};
use bertrand_logit::utility::check_conditions;
use bertrand_logit::verify::{self, PropertyReport, Witness, FD_CROSS_PARTIAL_TOL, GRID_PROFIT_GAP};
use bertrand_logit::{Error, Market, Method, SolveOptions};
use clap::{Args, ValueEnum};
use serde::Serialize;

use crate::io;

pub const VI_TOL: f64 = 1e-10;
pub const GRADIENT_TOL: f64 = 1e-6;
pub const UNIQUENESS_TOL: f64 = 1e-7;
const GRADIENT_STEP: f64 = 1e-5;
const UNIQUENESS_STARTS: usize = 5;
const WITNESS_RADIUS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
pub enum Check {
    ViCheck,
    Gradient,
    SecondOrder,
    MarkupIdentity,
    MonotoneStructure,
    PortfolioEffect,
    GridOracle,
    Uniqueness,
    Supermodularity,
    Divergence,
    MonteCarlo,
    /// Every check above.
    All,
}

impl Check {
    const EVERY: [Check; 11] = [
        Check::ViCheck,
        Check::Gradient,
        Check::SecondOrder,
        Check::MarkupIdentity,
        Check::MonotoneStructure,
        Check::PortfolioEffect,
        Check::GridOracle,
        Check::Uniqueness,
        Check::Supermodularity,
        Check::Divergence,
        Check::MonteCarlo,
    ];

    fn name(self) -> String {
        self.to_possible_value().expect("no skipped variants").get_name().to_string()
    }

    fn needs_prices(self) -> bool {
        self != Check::Divergence
    }
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Market config (JSON).
    pub config: PathBuf,
    /// Prices: a file (JSON array, solve report, or comma list) or an inline
    /// comma list. Solved first when absent.
    #[arg(long)]
    pub prices: Option<String>,
    /// Comma-separated checks.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "vi_check,gradient,second_order,markup_identity,monotone_structure,portfolio_effect"
    )]
    pub checks: Vec<Check>,
    /// Fail when a requested check does not apply.
    #[arg(long)]
    pub strict: bool,
    /// Write a two-column (product index, residual) table for gnuplot.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Method used when prices have to be solved for.
    #[arg(long, default_value = "newton_on_phi")]
    pub method: Method,
    /// Seed for the uniqueness starts and Monte-Carlo draws; BL_SEED overrides it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100_000)]
    pub draws: usize,
    #[arg(long, default_value_t = 1_000)]
    pub population: u64,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct Skipped {
    pub check: String,
    pub reason: String,
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub passed: bool,
    pub strict: bool,
    pub prices: Option<Vec<f64>>,
    pub checks: Vec<PropertyReport>,
    pub skipped: Vec<Skipped>,
}

enum Outcome {
    Ran(PropertyReport),
    Skipped(String),
}

/// Refusals and unmet preconditions mean "does not apply"; anything else is an error.
fn applicable(r: bertrand_logit::Result<PropertyReport>) -> Result<Outcome> {
    match r {
        Ok(report) => Ok(Outcome::Ran(report)),
        Err(e @ (Error::Refused(_) | Error::Unsupported(_) | Error::NotStationary { .. })) => {
            Ok(Outcome::Skipped(e.to_string()))
        }
        Err(e) => Err(e.into()),
    }
}

/// Folds per-firm reports into one, prefixing witness labels.
fn merge(name: &str, tolerance: f64, parts: Vec<(String, PropertyReport)>, notes: Vec<String>) -> Outcome {
    if parts.is_empty() {
        return Outcome::Skipped(if notes.is_empty() {
            "no applicable firm or product".into()
        } else {
            notes.join("; ")
        });
    }
    let mut out = PropertyReport {
        name: name.into(),
        passed: true,
        tolerance,
        worst_residual: 0.0,
        witnesses: Vec::new(),
        notes,
    };
    for (prefix, r) in parts {
        out.passed &= r.passed;
        out.worst_residual = out.worst_residual.max(r.worst_residual);
        out.witnesses.extend(r.witnesses.into_iter().map(|w| Witness {
            label: format!("{prefix}: {}", w.label),
            value: w.value,
        }));
        out.notes.extend(r.notes.into_iter().map(|n| format!("{prefix}: {n}")));
    }
    Outcome::Ran(out)
}

fn report(name: &str, tolerance: f64, witnesses: Vec<Witness>, notes: Vec<String>) -> PropertyReport {
    let worst_residual = witnesses.iter().map(|w| w.value.abs()).fold(0.0, f64::max);
    PropertyReport {
        name: name.into(),
        passed: worst_residual <= tolerance,
        tolerance,
        worst_residual,
        witnesses,
        notes,
    }
}

fn vi_report(m: &Market, p: &[f64]) -> Result<PropertyReport> {
    let vi = vi_check(m, p, VI_TOL)?;
    let witnesses = vi
        .entries
        .iter()
        .map(|e| Witness {
            label: format!("{} ({})", e.product, if e.boundary { "at the limit" } else { "interior" }),
            value: if e.boundary { e.value.max(0.0) } else { e.value.abs() },
        })
        .collect();
    let flagged = vi.flagged();
    let notes = if flagged.is_empty() {
        Vec::new()
    } else {
        vec![format!("flagged: {}", flagged.join(", "))]
    };
    Ok(report("vi_check", VI_TOL, witnesses, notes))
}

fn run_check(check: Check, m: &Market, p: &[f64], args: &VerifyArgs, seed: u64) -> Result<Outcome> {
    let opts = SolveOptions::with_method(args.method);
    Ok(match check {
        Check::ViCheck => Outcome::Ran(vi_report(m, p)?),
        Check::Gradient => {
            let analytic = market::profit_gradient(m, p)?;
            let fd = match verify::finite_diff_gradient(m, p, GRADIENT_STEP) {
                Ok(fd) => fd,
                Err(e @ Error::Domain { .. }) => return Ok(Outcome::Skipped(e.to_string())),
                Err(e) => return Err(e.into()),
            };
            let witnesses = (0..m.len())
                .filter(|&j| !m.at_cap(p[j]))
                .map(|j| Witness {
                    label: format!("{}: analytic {:e} vs difference {:e}", m.product(j).id, analytic[j], fd[j]),
                    value: analytic[j] - fd[j],
                })
                .collect();
            Outcome::Ran(report("gradient", GRADIENT_TOL, witnesses, Vec::new()))
        }
        Check::SecondOrder => {
            let mut witnesses = Vec::new();
            for f in 0..m.num_firms() {
                match hessian_at_stationary(m, f, p) {
                    Ok(h) => {
                        let ev = h.max_eigenvalue();
                        // zero exactly when the eigenvalue clears the margin
                        let excess = if ev < HESSIAN_MARGIN {
                            0.0
                        } else {
                            (ev - HESSIAN_MARGIN).max(f64::MIN_POSITIVE)
                        };
                        witnesses.push(Witness {
                            label: format!("{}: largest Hessian eigenvalue {ev:e}, excess over margin", m.firms()[f]),
                            value: excess,
                        });
                    }
                    Err(e @ Error::NotStationary { .. }) => return Ok(Outcome::Skipped(e.to_string())),
                    Err(e) => return Err(e.into()),
                }
            }
            Outcome::Ran(report("second_order", 0.0, witnesses, Vec::new()))
        }
        Check::MarkupIdentity => applicable(verify::check_markup_identity(m, p))?,
        Check::MonotoneStructure => applicable(verify::check_monotone_structure(m, p))?,
        Check::PortfolioEffect => applicable(verify::check_portfolio_effect(m, p))?,
        Check::GridOracle => {
            let mut parts = Vec::new();
            let mut notes = Vec::new();
            for f in 0..m.num_firms() {
                let members = m.members(f);
                if members.len() > 3 {
                    notes.push(format!("{}: more than three products, grid skipped", m.firms()[f]));
                    continue;
                }
                let br = best_response(m, f, p, &opts)?;
                let lo = members.iter().map(|&j| m.product(j).cost.marginal(0.0)).fold(f64::INFINITY, f64::min);
                let mut hi = members.iter().map(|&j| br[j]).fold(0.0, f64::max) + 1.5;
                if m.has_finite_cap() {
                    hi = hi.min(m.sigma_cap());
                }
                let n = [2001, 301, 41][members.len() - 1];
                let grid = verify::grid_best_response(m, f, p, 0.5 * lo, hi, n)?;
                parts.push((m.firms()[f].clone(), verify::oracle_sandwich(m, f, &br, &grid)?));
            }
            merge("grid_oracle", GRID_PROFIT_GAP, parts, notes)
        }
        Check::Uniqueness => {
            let mut witnesses = Vec::new();
            for f in 0..m.num_firms() {
                let (_, spread) = verify::uniqueness_probe(m, f, p, UNIQUENESS_STARTS, seed, &opts)?;
                witnesses.push(Witness {
                    label: format!("{}: spread of {UNIQUENESS_STARTS} best responses", m.firms()[f]),
                    value: spread,
                });
            }
            Outcome::Ran(report("uniqueness", UNIQUENESS_TOL, witnesses, Vec::new()))
        }
        Check::Supermodularity => {
            let mut witnesses = Vec::new();
            let mut notes = Vec::new();
            for f in 0..m.num_firms() {
                let firm = &m.firms()[f];
                let br = best_response(m, f, p, &opts)?;
                match verify::supermodularity_witness(m, f, &br, WITNESS_RADIUS) {
                    Ok(w) => {
                        for cp in &w.partials {
                            let sign_ok = cp.analytic < 0.0 && cp.log_analytic < 0.0;
                            let fd = (cp.analytic - cp.finite_difference)
                                .abs()
                                .max((cp.log_analytic - cp.log_finite_difference).abs());
                            witnesses.push(Witness {
                                label: format!(
                                    "{firm}: {}/{} cross-partial {:e}, log {:e}; difference gap",
                                    cp.k, cp.l, cp.analytic, cp.log_analytic
                                ),
                                value: if sign_ok { fd } else { f64::INFINITY },
                            });
                        }
                        notes.push(format!("{firm}: witness at distance {:e}", w.distance));
                    }
                    Err(e @ (Error::Refused(_) | Error::Unsupported(_))) => notes.push(format!("{firm}: {e}")),
                    Err(e) => return Err(e.into()),
                }
            }
            if witnesses.is_empty() {
                Outcome::Skipped(notes.join("; "))
            } else {
                Outcome::Ran(report("supermodularity", FD_CROSS_PARTIAL_TOL, witnesses, notes))
            }
        }
        Check::Divergence => {
            let parts = (0..m.len())
                .filter(|&j| !check_conditions(&m.product(j).utility).elb)
                .map(|j| Ok((m.product(j).id.clone(), verify::divergence_probe(m, m.firm_of(j), j)?)))
                .collect::<Result<Vec<_>>>()?;
            merge("divergence", 0.0, parts, Vec::new())
        }
        Check::MonteCarlo => {
            match verify::monte_carlo_profit(m, p, args.draws, args.population, seed) {
                Ok(firms) => Outcome::Ran(verify::check_monte_carlo(&firms)),
                Err(e @ Error::Unsupported(_)) => Outcome::Skipped(e.to_string()),
                Err(e) => return Err(e.into()),
            }
        }
        Check::All => unreachable!("expanded before dispatch"),
    })
}

fn trace_table(m: &Market, p: &[f64]) -> Result<String> {
    let vi = vi_check(m, p, VI_TOL)?;
    let mut out = String::from("# complementarity residual per product\n# index residual  (product)\n");
    for (j, e) in vi.entries.iter().enumerate() {
        let r = if e.boundary { e.value.max(0.0) } else { e.value.abs() };
        let _ = writeln!(out, "{j} {}  # {}", io::num(r), e.product);
    }
    Ok(out)
}

pub fn run(args: &VerifyArgs, seed: u64) -> Result<i32> {
    let market = io::load_market(&args.config)?;
    let mut checks: Vec<Check> = if args.checks.contains(&Check::All) {
        Check::EVERY.to_vec()
    } else {
        args.checks.clone()
    };
    let mut seen = Vec::new();
    checks.retain(|c| {
        let fresh = !seen.contains(c);
        seen.push(*c);
        fresh
    });
    let prices = if checks.iter().any(|c| c.needs_prices()) {
        Some(match &args.prices {
            Some(spec) => io::parse_prices(spec, &market)?,
            None => solve_equilibrium(&market, &SolveOptions::with_method(args.method))?.prices,
        })
    } else {
        None
    };
    let mut ran = Vec::new();
    let mut skipped = Vec::new();
    for check in checks {
        let p = prices.as_deref().unwrap_or(&[]);
        match run_check(check, &market, p, args, seed)? {
            Outcome::Ran(r) => ran.push(r),
            Outcome::Skipped(reason) => skipped.push(Skipped {
                check: check.name(),
                reason,
            }),
        }
    }
    let passed = ran.iter().all(|r| r.passed) && !(args.strict && !skipped.is_empty());
    if let (Some(path), Some(p)) = (&args.trace, &prices) {
        io::atomic_write(path, &trace_table(&market, p)?)?;
    }
    for r in &ran {
        eprintln!(
            "{:<20} {}  worst {:e} (tol {:e})",
            r.name,
            if r.passed { "pass" } else { "FAIL" },
            r.worst_residual,
            r.tolerance
        );
    }
    for s in &skipped {
        eprintln!("{:<20} skipped: {}", s.check, s.reason);
    }
    let report = VerifyReport {
        schema_version: bertrand_logit::config::SCHEMA_VERSION,
        command: "verify",
        passed,
        strict: args.strict,
        prices,
        checks: ran,
        skipped,
    };
    io::emit(args.out.as_deref(), &io::to_json(&report))?;
    Ok(if passed { 0 } else { 1 })
}
