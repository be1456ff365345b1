//! Conversion between synthetic quanto forward packages and quanto
//! correlations.
//!
//! The broker package is the four-option combination Cq - Pq - C + P with
//! spot strike: quantized call/put under the domestic measure minus vanilla
//! call/put under the foreign measure, all discounted from the same
//! maturity. With deterministic rates and E[s_T] = q(T) this collapses to
//!
//! ```text
//!   price = (fwd_ratio * exp(-gamma sigma_S sigma_X T) - 1) df_dom
//!           - (fwd_ratio - 1) df_for
//! ```
//!
//! which inverts in closed form by a logarithm. The package price is
//! decreasing in gamma: a bid on the correlation is an ask on the package.

use crate::error::{EngineError, Result};
use crate::localvol::AtmVolCurve;
use crate::marketdata::{MarketSnapshot, QuantoQuoteSet, QuoteConvention, QuoteSide};

fn validate_args(
    expiry: f64,
    fwd_ratio: f64,
    df_dom: f64,
    df_for: f64,
    sigma_s: f64,
    sigma_x: f64,
) -> Result<()> {
    if !(expiry.is_finite() && expiry > 0.0) {
        return Err(EngineError::invalid(format!("maturity must be positive, got {expiry}")));
    }
    if !(fwd_ratio.is_finite() && fwd_ratio > 0.0) {
        return Err(EngineError::invalid(format!(
            "forward ratio must be positive, got {fwd_ratio}"
        )));
    }
    for (df, name) in [(df_dom, "domestic"), (df_for, "foreign")] {
        if !(df.is_finite() && df > 0.0 && df <= 1.0) {
            return Err(EngineError::invalid(format!(
                "{name} discount factor must be in (0, 1], got {df}"
            )));
        }
    }
    for (v, name) in [(sigma_s, "asset"), (sigma_x, "fx")] {
        if !(v.is_finite() && v > 0.0) {
            return Err(EngineError::invalid(format!(
                "{name} ATM vol must be positive, got {v}"
            )));
        }
    }
    Ok(())
}

/// Package price of the synthetic quanto forward for a given correlation.
pub fn broker_from_gamma(
    gamma: f64,
    expiry: f64,
    fwd_ratio: f64,
    df_dom: f64,
    df_for: f64,
    sigma_s: f64,
    sigma_x: f64,
) -> Result<f64> {
    validate_args(expiry, fwd_ratio, df_dom, df_for, sigma_s, sigma_x)?;
    if !gamma.is_finite() {
        return Err(EngineError::invalid(format!("non-finite gamma {gamma}")));
    }
    let q = (-gamma * sigma_s * sigma_x * expiry).exp();
    Ok((fwd_ratio * q - 1.0) * df_dom - (fwd_ratio - 1.0) * df_for)
}

/// The unique correlation reproducing a package price; closed form.
pub fn gamma_from_broker(
    price: f64,
    expiry: f64,
    fwd_ratio: f64,
    df_dom: f64,
    df_for: f64,
    sigma_s: f64,
    sigma_x: f64,
) -> Result<f64> {
    validate_args(expiry, fwd_ratio, df_dom, df_for, sigma_s, sigma_x)?;
    if !price.is_finite() {
        return Err(EngineError::invalid(format!("non-finite package price {price}")));
    }
    let arg = ((price + (fwd_ratio - 1.0) * df_for) / df_dom + 1.0) / fwd_ratio;
    if arg <= 0.0 {
        return Err(EngineError::UnrepresentableQuote(format!(
            "package price {price} implies a non-positive quanto forward ratio {arg}"
        )));
    }
    Ok(-arg.ln() / (sigma_s * sigma_x * expiry))
}

/// Converts every pillar of a quote set into `(maturity, gamma)` pairs,
/// reading package prices (quoted in basis points) through the closed form
/// when needed. Conversion failures carry the pillar label.
pub fn gamma_pillars_from_quotes(
    quotes: &QuantoQuoteSet,
    snapshot: &MarketSnapshot,
    atm_asset: &AtmVolCurve,
    atm_fx: &AtmVolCurve,
    side: QuoteSide,
) -> Result<Vec<(f64, f64)>> {
    quotes
        .quotes()
        .iter()
        .map(|q| {
            let t = q.maturity;
            let value = q.side(side);
            let gamma = match quotes.convention() {
                QuoteConvention::Gamma => value,
                QuoteConvention::PriceBp => gamma_from_broker(
                    value * 1e-4,
                    t,
                    snapshot.fwd_ratio(t),
                    snapshot.df_dom(t),
                    snapshot.df_for(t),
                    atm_asset.eval(t),
                    atm_fx.eval(t),
                )
                .map_err(|e| {
                    EngineError::UnrepresentableQuote(format!("pillar {}: {e}", q.label))
                })?,
            };
            Ok((t, gamma))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn unit_fixture_reference_values() {
        // gamma = -0.30 with unit ratio and discounts: price is
        // exp(0.006) - 1, i.e. +60.18 bp; the -59.82 bp price maps to +0.30.
        let p = broker_from_gamma(-0.30, 1.0, 1.0, 1.0, 1.0, 0.2, 0.1).unwrap();
        assert_abs_diff_eq!(p, 0.006018036, epsilon = 1e-9);
        let g = gamma_from_broker(-0.005982036, 1.0, 1.0, 1.0, 1.0, 0.2, 0.1).unwrap();
        assert_abs_diff_eq!(g, 0.30, epsilon = 1e-6);
    }

    #[test]
    fn zero_gamma_equal_rates_is_zero_price() {
        for r in [0.8, 1.0, 1.3] {
            let p = broker_from_gamma(0.0, 2.0, r, 0.95, 0.95, 0.2, 0.1).unwrap();
            assert_abs_diff_eq!(p, 0.0, epsilon = 1e-15);
            let g = gamma_from_broker(0.0, 2.0, r, 0.95, 0.95, 0.2, 0.1).unwrap();
            assert_abs_diff_eq!(g, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn price_is_monotone_decreasing_in_gamma() {
        let mut prev = f64::INFINITY;
        for i in 0..=20 {
            let g = -1.0 + 0.1 * i as f64;
            let p = broker_from_gamma(g, 1.5, 1.02, 0.97, 0.95, 0.22, 0.09).unwrap();
            assert!(p < prev, "price must decrease as gamma rises");
            prev = p;
        }
    }

    #[test]
    fn unrepresentable_price_errors() {
        // A package price so negative the implied quanto forward is <= 0.
        let err = gamma_from_broker(-2.0, 1.0, 1.0, 1.0, 1.0, 0.2, 0.1).unwrap_err();
        assert!(matches!(err, EngineError::UnrepresentableQuote(_)));
    }

    #[test]
    fn argument_validation() {
        assert!(broker_from_gamma(-0.3, -1.0, 1.0, 1.0, 1.0, 0.2, 0.1).is_err());
        assert!(broker_from_gamma(-0.3, 1.0, 0.0, 1.0, 1.0, 0.2, 0.1).is_err());
        assert!(broker_from_gamma(-0.3, 1.0, 1.0, 1.2, 1.0, 0.2, 0.1).is_err());
        assert!(broker_from_gamma(-0.3, 1.0, 1.0, 1.0, 1.0, 0.0, 0.1).is_err());
        assert!(gamma_from_broker(f64::NAN, 1.0, 1.0, 1.0, 1.0, 0.2, 0.1).is_err());
    }

    proptest! {
        #[test]
        fn conversion_round_trip(
            gamma in -0.95f64..0.95,
            t in 0.05f64..5.0,
            fwd_ratio in 0.7f64..1.4,
            df_dom in 0.7f64..1.0,
            df_for in 0.7f64..1.0,
            sigma_s in 0.05f64..0.6,
            sigma_x in 0.03f64..0.3,
        ) {
            let p = broker_from_gamma(gamma, t, fwd_ratio, df_dom, df_for, sigma_s, sigma_x)
                .unwrap();
            let g = gamma_from_broker(p, t, fwd_ratio, df_dom, df_for, sigma_s, sigma_x)
                .unwrap();
            prop_assert!((g - gamma).abs() < 1e-12, "{} -> {} -> {}", gamma, p, g);
        }
    }
}
