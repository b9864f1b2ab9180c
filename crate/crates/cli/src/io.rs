use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use bertrand_logit::config::MarketConfig;
use bertrand_logit::Market;

/// Reads and validates a market config; parse errors carry line and column.
pub fn load_market(path: &Path) -> Result<Market> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let cfg = MarketConfig::from_json(&text)
        .map_err(|e| anyhow!("{}: {e}", path.display()))?;
    cfg.to_market().map_err(|e| anyhow!("{}: {e}", path.display()))
}

/// Prices from a comma-separated list, a JSON array, or a JSON object with a
/// `prices` array (such as a solve report). Anything that is not an existing
/// file is read inline.
pub fn parse_prices(spec: &str, market: &Market) -> Result<Vec<f64>> {
    let path = Path::new(spec);
    let prices = if path.is_file() {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {spec}"))?;
        prices_from_text(&text).with_context(|| format!("in {spec}"))?
    } else {
        prices_from_text(spec)?
    };
    if prices.len() != market.len() {
        bail!("expected {} prices, got {}", market.len(), prices.len());
    }
    Ok(prices)
}

fn prices_from_text(text: &str) -> Result<Vec<f64>> {
    let trimmed = text.trim();
    if trimmed.starts_with('[') || trimmed.starts_with('{') {
        let value: serde_json::Value = serde_json::from_str(trimmed)
            .map_err(|e| anyhow!("{e}"))?;
        let array = match &value {
            serde_json::Value::Object(map) => map
                .get("prices")
                .ok_or_else(|| anyhow!("object has no \"prices\" key"))?,
            other => other,
        };
        return serde_json::from_value(array.clone()).context("prices must be an array of numbers");
    }
    trimmed
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .with_context(|| format!("\"{}\" is not a number", s.trim()))
        })
        .collect()
}

/// Writes through a temporary file in the target directory, then renames.
pub fn atomic_write(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)
        .with_context(|| format!("cannot create a temporary file in {}", dir.display()))?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .map_err(|e| anyhow!("cannot write {}: {}", path.display(), e.error))?;
    Ok(())
}

/// Writes to `path`, or to stdout when there is none.
pub fn emit(path: Option<&Path>, contents: &str) -> Result<()> {
    match path {
        Some(p) => atomic_write(p, contents),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(contents.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

/// CSV number with 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn csv_row(cells: &[String]) -> String {
    let mut line = String::new();
    for (i, c) in cells.iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        if c.contains([',', '"', '\n']) {
            let _ = write!(line, "\"{}\"", c.replace('"', "\"\""));
        } else {
            line.push_str(c);
        }
    }
    line.push('\n');
    line
}

pub fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports always serialize");
    s.push('\n');
    s
}
