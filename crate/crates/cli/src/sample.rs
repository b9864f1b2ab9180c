use std::path::PathBuf;

use anyhow::{bail, Result};
use bertrand_logit::demand::{self, choice_probabilities};
use bertrand_logit::solver::solve_equilibrium;
use bertrand_logit::SolveOptions;
use clap::Args;

use crate::io::{self, num};

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Market config (JSON).
    pub config: PathBuf,
    /// Prices as for `verify`; the equilibrium is solved for when absent.
    #[arg(long)]
    pub prices: Option<String>,
    #[arg(long, default_value_t = 1_000)]
    pub population: u64,
    /// BL_SEED overrides it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    /// CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// One row of counts per repetition, then `mean`, `stderr` and `expected`
/// (population times choice probability) rows.
pub fn table(args: &SampleArgs, seed: u64) -> Result<String> {
    if args.reps == 0 {
        bail!("--reps must be at least 1");
    }
    let market = io::load_market(&args.config)?;
    let prices = match &args.prices {
        Some(spec) => io::parse_prices(spec, &market)?,
        None => solve_equilibrium(&market, &SolveOptions::default())?.prices,
    };
    let probs = choice_probabilities(&market, &prices)?;
    let mut header = vec!["row".to_string()];
    header.extend(market.products().iter().map(|p| p.id.clone()));
    header.push("outside".into());
    let mut out = io::csv_row(&header);

    let cols = market.len() + 1;
    let mut sum = vec![0.0; cols];
    let mut sum_sq = vec![0.0; cols];
    let mut rng = demand::sampling_rng(seed);
    for rep in 0..args.reps {
        let mut counts = demand::draw_multinomial(&mut rng, &probs.product_shares, args.population)?;
        counts.push(args.population - counts.iter().sum::<u64>());
        for (i, &c) in counts.iter().enumerate() {
            sum[i] += c as f64;
            sum_sq[i] += (c as f64) * (c as f64);
        }
        let mut row = vec![rep.to_string()];
        row.extend(counts.iter().map(u64::to_string));
        out.push_str(&io::csv_row(&row));
    }

    let n = args.reps as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let stderr: Vec<f64> = (0..cols)
        .map(|i| {
            if args.reps < 2 {
                return f64::NAN;
            }
            let var = ((sum_sq[i] - n * mean[i] * mean[i]) / (n - 1.0)).max(0.0);
            (var / n).sqrt()
        })
        .collect();
    let population = args.population as f64;
    let mut expected: Vec<f64> = probs.product_shares.iter().map(|s| population * s).collect();
    expected.push(population * probs.outside_share);
    for (label, values) in [("mean", &mean), ("stderr", &stderr), ("expected", &expected)] {
        let mut row = vec![label.to_string()];
        row.extend(values.iter().map(|&x| num(x)));
        out.push_str(&io::csv_row(&row));
    }
    Ok(out)
}

pub fn run(args: &SampleArgs, seed: u64) -> Result<i32> {
    let csv = table(args, seed)?;
    io::emit(args.out.as_deref(), &csv)?;
    Ok(0)
}
