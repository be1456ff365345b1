//! Snapshot manifest and CSV loaders.
//!
//! File schemas (header rows mandatory):
//! - discount curves: `time_yf,discount_factor`
//! - forwards: `time_yf,forward`
//! - vols: `maturity_yf,moneyness,vol` (decimals, rows grouped by maturity)
//! - quanto quotes: `label,maturity_yf,bid,mid,ask,convention` with
//!   convention in {gamma, price_bp}
//!
//! The manifest is a JSON document mapping roles to file paths (relative to
//! the manifest location) plus the observation date.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};

use super::curves::{DiscountCurve, ForwardCurve};
use super::quotes::{QuantoQuote, QuantoQuoteSet, QuoteConvention, VolQuoteSurface};

/// Roles-to-paths manifest for one observation date.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotManifest {
    pub observation_date: String,
    #[serde(default = "default_domestic")]
    pub domestic_currency: String,
    #[serde(default = "default_foreign")]
    pub foreign_currency: String,
    pub domestic_discount: String,
    pub foreign_discount: String,
    pub asset_forwards: String,
    pub fx_forwards: String,
    pub asset_vols: String,
    pub fx_vols: String,
    pub quanto_quotes: String,
    #[serde(default)]
    pub composite_vols: Option<String>,
}

fn default_domestic() -> String {
    "DOM".into()
}

fn default_foreign() -> String {
    "FOR".into()
}

/// Fully validated market snapshot.
///
/// Immutable after load; share freely across threads.
#[derive(Debug, Clone)]
pub struct MarketSnapshot {
    pub observation_date: String,
    /// Domestic (payoff currency) discount curve.
    pub domestic: DiscountCurve,
    /// Foreign (asset currency) discount curve.
    pub foreign: DiscountCurve,
    /// Asset forward curve in foreign currency.
    pub asset_forward: ForwardCurve,
    /// FX forward curve converting foreign into domestic.
    pub fx_forward: ForwardCurve,
    pub asset_vols: VolQuoteSurface,
    pub fx_vols: VolQuoteSurface,
    pub quanto_quotes: QuantoQuoteSet,
    pub composite_vols: Option<VolQuoteSurface>,
}

impl MarketSnapshot {
    /// F0(T) / S0, the forward-to-spot ratio of the asset.
    pub fn fwd_ratio(&self, t: f64) -> f64 {
        self.asset_forward.forward(t) / self.asset_forward.spot()
    }

    pub fn df_dom(&self, t: f64) -> f64 {
        self.domestic.df(t)
    }

    pub fn df_for(&self, t: f64) -> f64 {
        self.foreign.df(t)
    }
}

fn load_err(file: &Path, row: Option<usize>, reason: impl Into<String>) -> EngineError {
    EngineError::Load {
        file: file.display().to_string(),
        row,
        reason: reason.into(),
    }
}

fn open_csv(path: &Path, expected_header: &[&str]) -> Result<csv::Reader<std::fs::File>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| load_err(path, None, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| load_err(path, None, e.to_string()))?;
    let got: Vec<&str> = headers.iter().collect();
    if got != expected_header {
        return Err(load_err(
            path,
            None,
            format!("expected header {expected_header:?}, got {got:?}"),
        ));
    }
    Ok(reader)
}

fn parse_field(path: &Path, row: usize, name: &str, raw: &str) -> Result<f64> {
    raw.parse::<f64>()
        .map_err(|_| load_err(path, Some(row), format!("cannot parse {name} from '{raw}'")))
}

fn read_rows(path: &Path, expected_header: &[&str]) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut reader = open_csv(path, expected_header)?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| load_err(path, Some(i + 1), e.to_string()))?;
        if rec.len() != expected_header.len() {
            return Err(load_err(
                path,
                Some(i + 1),
                format!("expected {} fields, got {}", expected_header.len(), rec.len()),
            ));
        }
        rows.push((i + 1, rec));
    }
    if rows.is_empty() {
        return Err(load_err(path, None, "file has no data rows"));
    }
    Ok(rows)
}

pub fn load_discount_csv(path: &Path, currency: &str) -> Result<DiscountCurve> {
    let rows = read_rows(path, &["time_yf", "discount_factor"])?;
    let mut pillars = Vec::with_capacity(rows.len());
    for (row, rec) in rows {
        let t = parse_field(path, row, "time_yf", &rec[0])?;
        let df = parse_field(path, row, "discount_factor", &rec[1])?;
        pillars.push((t, df));
    }
    DiscountCurve::new(currency, pillars).map_err(|e| load_err(path, None, e.to_string()))
}

pub fn load_forward_csv(path: &Path) -> Result<ForwardCurve> {
    let rows = read_rows(path, &["time_yf", "forward"])?;
    let mut pillars = Vec::with_capacity(rows.len());
    for (row, rec) in rows {
        let t = parse_field(path, row, "time_yf", &rec[0])?;
        let f = parse_field(path, row, "forward", &rec[1])?;
        pillars.push((t, f));
    }
    ForwardCurve::new(pillars).map_err(|e| load_err(path, None, e.to_string()))
}

pub fn load_vols_csv(path: &Path, observation_date: &str) -> Result<VolQuoteSurface> {
    let rows = read_rows(path, &["maturity_yf", "moneyness", "vol"])?;
    let mut grouped: Vec<(f64, Vec<(f64, f64)>)> = Vec::new();
    for (row, rec) in rows {
        let t = parse_field(path, row, "maturity_yf", &rec[0])?;
        let k = parse_field(path, row, "moneyness", &rec[1])?;
        let v = parse_field(path, row, "vol", &rec[2])?;
        if v <= 0.0 {
            return Err(load_err(path, Some(row), format!("vol must be positive, got {v}")));
        }
        match grouped.last_mut() {
            Some((last_t, quotes)) if *last_t == t => quotes.push((k, v)),
            _ => grouped.push((t, vec![(k, v)])),
        }
    }
    VolQuoteSurface::new(observation_date, grouped).map_err(|e| load_err(path, None, e.to_string()))
}

pub fn load_quanto_csv(path: &Path) -> Result<QuantoQuoteSet> {
    let rows = read_rows(path, &["label", "maturity_yf", "bid", "mid", "ask", "convention"])?;
    let mut convention: Option<QuoteConvention> = None;
    let mut quotes = Vec::with_capacity(rows.len());
    for (row, rec) in rows {
        let t = parse_field(path, row, "maturity_yf", &rec[1])?;
        let bid = parse_field(path, row, "bid", &rec[2])?;
        let mid = parse_field(path, row, "mid", &rec[3])?;
        let ask = parse_field(path, row, "ask", &rec[4])?;
        if bid > ask {
            return Err(load_err(path, Some(row), format!("bid {bid} above ask {ask}")));
        }
        let conv = match &rec[5] {
            "gamma" => QuoteConvention::Gamma,
            "price_bp" => QuoteConvention::PriceBp,
            other => {
                return Err(load_err(
                    path,
                    Some(row),
                    format!("unknown convention '{other}', expected gamma or price_bp"),
                ))
            }
        };
        match convention {
            None => convention = Some(conv),
            Some(c) if c != conv => {
                return Err(load_err(path, Some(row), "mixed quote conventions in one file"))
            }
            _ => {}
        }
        quotes.push(QuantoQuote {
            label: rec[0].to_string(),
            maturity: t,
            bid,
            mid,
            ask,
        });
    }
    QuantoQuoteSet::new(convention.expect("non-empty"), quotes)
        .map_err(|e| load_err(path, None, e.to_string()))
}

/// Loads and validates a full snapshot from a manifest file.
pub fn load_snapshot(manifest_path: &Path) -> Result<MarketSnapshot> {
    let raw = std::fs::read_to_string(manifest_path)
        .map_err(|e| load_err(manifest_path, None, e.to_string()))?;
    let manifest: SnapshotManifest = serde_json::from_str(&raw)
        .map_err(|e| load_err(manifest_path, None, format!("manifest parse error: {e}")))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &str| -> PathBuf { base.join(p) };

    let domestic = load_discount_csv(&resolve(&manifest.domestic_discount), &manifest.domestic_currency)?;
    let foreign = load_discount_csv(&resolve(&manifest.foreign_discount), &manifest.foreign_currency)?;
    let asset_forward = load_forward_csv(&resolve(&manifest.asset_forwards))?;
    let fx_forward = load_forward_csv(&resolve(&manifest.fx_forwards))?;
    let asset_vols = load_vols_csv(&resolve(&manifest.asset_vols), &manifest.observation_date)?;
    let fx_vols = load_vols_csv(&resolve(&manifest.fx_vols), &manifest.observation_date)?;
    let quanto_quotes = load_quanto_csv(&resolve(&manifest.quanto_quotes))?;
    let composite_vols = manifest
        .composite_vols
        .as_ref()
        .map(|p| load_vols_csv(&resolve(p), &manifest.observation_date))
        .transpose()?;

    Ok(MarketSnapshot {
        observation_date: manifest.observation_date,
        domestic,
        foreign,
        asset_forward,
        fx_forward,
        asset_vols,
        fx_vols,
        quanto_quotes,
        composite_vols,
    })
}
