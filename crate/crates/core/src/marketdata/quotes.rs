//! Vanilla vol quote surfaces and broker quanto quote sets.

use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};

/// A quoted moneyness within this distance of 1 is the ATM node.
pub const ATM_TOL: f64 = 1e-9;

/// Implied-vol quotes per maturity in forward moneyness.
#[derive(Debug, Clone, PartialEq)]
pub struct VolQuoteSurface {
    observation_date: String,
    maturities: Vec<f64>,
    /// Per maturity: strictly increasing forward moneyness.
    moneyness: Vec<Vec<f64>>,
    vols: Vec<Vec<f64>>,
    atm_index: Vec<usize>,
}

impl VolQuoteSurface {
    pub fn new(
        observation_date: impl Into<String>,
        rows: Vec<(f64, Vec<(f64, f64)>)>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(EngineError::invalid("vol surface needs at least one maturity"));
        }
        let mut maturities = Vec::with_capacity(rows.len());
        let mut moneyness = Vec::with_capacity(rows.len());
        let mut vols = Vec::with_capacity(rows.len());
        let mut atm_index = Vec::with_capacity(rows.len());
        let mut prev_t = 0.0;
        for (t, quotes) in rows {
            if !t.is_finite() || t <= prev_t {
                return Err(EngineError::invalid(format!(
                    "quote maturities must be positive and strictly increasing, got {t}"
                )));
            }
            if quotes.is_empty() {
                return Err(EngineError::invalid(format!("empty quote row at t={t}")));
            }
            let mut ks = Vec::with_capacity(quotes.len());
            let mut vs = Vec::with_capacity(quotes.len());
            let mut atm = None;
            for (j, &(k, v)) in quotes.iter().enumerate() {
                if !k.is_finite() || k <= 0.0 {
                    return Err(EngineError::invalid(format!(
                        "moneyness must be positive, got {k} at t={t}"
                    )));
                }
                if let Some(&last) = ks.last() {
                    if k <= last {
                        return Err(EngineError::invalid(format!(
                            "moneyness must be strictly increasing at t={t}: {last} then {k}"
                        )));
                    }
                }
                if !v.is_finite() || v <= 0.0 {
                    return Err(EngineError::invalid(format!(
                        "vols must be positive, got {v} at t={t}, k={k}"
                    )));
                }
                if (k - 1.0).abs() <= ATM_TOL {
                    if atm.is_some() {
                        return Err(EngineError::invalid(format!(
                            "duplicate ATM node at t={t}"
                        )));
                    }
                    atm = Some(j);
                }
                ks.push(k);
                vs.push(v);
            }
            let atm = atm.ok_or_else(|| {
                EngineError::invalid(format!("no ATM node (moneyness 1) at t={t}"))
            })?;
            maturities.push(t);
            moneyness.push(ks);
            vols.push(vs);
            atm_index.push(atm);
            prev_t = t;
        }
        Ok(Self {
            observation_date: observation_date.into(),
            maturities,
            moneyness,
            vols,
            atm_index,
        })
    }

    /// Flat surface on a rectangular grid, handy for fixtures.
    pub fn flat(
        observation_date: impl Into<String>,
        maturities: &[f64],
        moneyness: &[f64],
        vol: f64,
    ) -> Result<Self> {
        let rows = maturities
            .iter()
            .map(|&t| (t, moneyness.iter().map(|&k| (k, vol)).collect()))
            .collect();
        Self::new(observation_date, rows)
    }

    pub fn observation_date(&self) -> &str {
        &self.observation_date
    }

    pub fn n_maturities(&self) -> usize {
        self.maturities.len()
    }

    pub fn maturities(&self) -> &[f64] {
        &self.maturities
    }

    pub fn moneyness(&self, i: usize) -> &[f64] {
        &self.moneyness[i]
    }

    pub fn vols(&self, i: usize) -> &[f64] {
        &self.vols[i]
    }

    pub fn atm_index(&self, i: usize) -> usize {
        self.atm_index[i]
    }

    pub fn atm_vol(&self, i: usize) -> f64 {
        self.vols[i][self.atm_index[i]]
    }

    /// Index of the maturity equal to `t` within tolerance.
    pub fn maturity_index(&self, t: f64) -> Option<usize> {
        self.maturities.iter().position(|&m| (m - t).abs() < 1e-9)
    }
}

/// Whether broker quanto quotes are correlations or package prices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuoteConvention {
    /// Values are quanto correlations in decimals.
    Gamma,
    /// Values are synthetic quanto forward package prices in basis points.
    PriceBp,
}

/// Which quote side feeds the mark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuoteSide {
    Bid,
    #[default]
    Mid,
    Ask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantoQuote {
    pub label: String,
    pub maturity: f64,
    pub bid: f64,
    pub mid: f64,
    pub ask: f64,
}

impl QuantoQuote {
    pub fn side(&self, side: QuoteSide) -> f64 {
        match side {
            QuoteSide::Bid => self.bid,
            QuoteSide::Mid => self.mid,
            QuoteSide::Ask => self.ask,
        }
    }
}

/// Broker quotes of synthetic quanto forwards for a set of pillars.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantoQuoteSet {
    convention: QuoteConvention,
    quotes: Vec<QuantoQuote>,
}

impl QuantoQuoteSet {
    pub fn new(convention: QuoteConvention, quotes: Vec<QuantoQuote>) -> Result<Self> {
        if quotes.is_empty() {
            return Err(EngineError::invalid("quanto quote set must not be empty"));
        }
        let mut prev_t = 0.0;
        for q in &quotes {
            if !q.maturity.is_finite() || q.maturity <= prev_t {
                return Err(EngineError::invalid(format!(
                    "quanto quote maturities must be positive and strictly increasing, \
                     got {} at {}",
                    q.maturity, q.label
                )));
            }
            for v in [q.bid, q.mid, q.ask] {
                if !v.is_finite() {
                    return Err(EngineError::invalid(format!(
                        "non-finite quanto quote at {}",
                        q.label
                    )));
                }
            }
            if !(q.bid <= q.mid && q.mid <= q.ask) {
                return Err(EngineError::invalid(format!(
                    "quanto quote at {} must satisfy bid <= mid <= ask, got {} {} {}",
                    q.label, q.bid, q.mid, q.ask
                )));
            }
            if convention == QuoteConvention::Gamma {
                for v in [q.bid, q.mid, q.ask] {
                    if !(-1.0..=1.0).contains(&v) {
                        return Err(EngineError::invalid(format!(
                            "quanto correlation at {} outside [-1, 1]: {v}",
                            q.label
                        )));
                    }
                }
            }
            prev_t = q.maturity;
        }
        Ok(Self { convention, quotes })
    }

    pub fn convention(&self) -> QuoteConvention {
        self.convention
    }

    pub fn quotes(&self) -> &[QuantoQuote] {
        &self.quotes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smile_row(t: f64) -> (f64, Vec<(f64, f64)>) {
        (t, vec![(0.8, 0.25), (1.0, 0.2), (1.2, 0.22)])
    }

    #[test]
    fn accepts_valid_surface() {
        let s = VolQuoteSurface::new("2024-12-16", vec![smile_row(0.5), smile_row(1.0)]).unwrap();
        assert_eq!(s.n_maturities(), 2);
        assert_eq!(s.atm_index(0), 1);
        assert_eq!(s.atm_vol(1), 0.2);
        assert_eq!(s.maturity_index(1.0), Some(1));
        assert_eq!(s.maturity_index(0.75), None);
    }

    #[test]
    fn rejects_negative_vol_unsorted_strikes_missing_atm() {
        assert!(VolQuoteSurface::new("d", vec![(1.0, vec![(1.0, -0.2)])]).is_err());
        assert!(
            VolQuoteSurface::new("d", vec![(1.0, vec![(1.2, 0.2), (1.0, 0.2)])]).is_err()
        );
        assert!(
            VolQuoteSurface::new("d", vec![(1.0, vec![(0.8, 0.2), (1.2, 0.2)])]).is_err(),
            "no ATM node must be rejected"
        );
    }

    #[test]
    fn quanto_quotes_enforce_ordering_and_range() {
        let q = |bid: f64, mid: f64, ask: f64| QuantoQuote {
            label: "y1".into(),
            maturity: 1.0,
            bid,
            mid,
            ask,
        };
        assert!(QuantoQuoteSet::new(QuoteConvention::Gamma, vec![q(-0.31, -0.30, -0.29)]).is_ok());
        assert!(QuantoQuoteSet::new(QuoteConvention::Gamma, vec![q(-0.29, -0.30, -0.31)]).is_err());
        assert!(QuantoQuoteSet::new(QuoteConvention::Gamma, vec![q(-1.2, -0.30, -0.29)]).is_err());
        // Price convention has no [-1, 1] restriction.
        assert!(
            QuantoQuoteSet::new(QuoteConvention::PriceBp, vec![q(55.0, 60.0, 65.0)]).is_ok()
        );
    }
}
