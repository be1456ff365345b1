//! Black formula on forwards, its vega, and the implied-volatility inverse.

use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};
use crate::math::{norm_cdf, norm_pdf};

/// Bracket and tolerances of the implied-vol solver. The bracket covers all
/// realistic equity and FX quotes.
const VOL_LO: f64 = 1e-6;
const VOL_HI: f64 = 5.0;
const PRICE_TOL: f64 = 1e-10;
const MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptionKind {
    Call,
    Put,
}

impl OptionKind {
    fn intrinsic(self, forward: f64, strike: f64) -> f64 {
        match self {
            OptionKind::Call => (forward - strike).max(0.0),
            OptionKind::Put => (strike - forward).max(0.0),
        }
    }
}

fn validate_common(forward: f64, strike: f64, vol: f64, expiry: f64, df: f64) -> Result<()> {
    for (v, name) in [
        (forward, "forward"),
        (strike, "strike"),
        (vol, "vol"),
        (expiry, "expiry"),
        (df, "df"),
    ] {
        if !v.is_finite() {
            return Err(EngineError::invalid(format!("non-finite {name}: {v}")));
        }
    }
    if forward <= 0.0 || strike <= 0.0 {
        return Err(EngineError::invalid(format!(
            "forward and strike must be positive, got F={forward}, K={strike}"
        )));
    }
    if vol < 0.0 {
        return Err(EngineError::invalid(format!("negative vol {vol}")));
    }
    if expiry < 0.0 {
        return Err(EngineError::invalid(format!("negative expiry {expiry}")));
    }
    if df <= 0.0 || df > 1.0 {
        return Err(EngineError::invalid(format!("df must be in (0, 1], got {df}")));
    }
    Ok(())
}

/// Discounted Black price of a European option on a forward.
pub fn black_price(
    forward: f64,
    strike: f64,
    vol: f64,
    expiry: f64,
    df: f64,
    kind: OptionKind,
) -> Result<f64> {
    validate_common(forward, strike, vol, expiry, df)?;
    let stddev = vol * expiry.sqrt();
    if stddev == 0.0 {
        return Ok(df * kind.intrinsic(forward, strike));
    }
    let d1 = (forward / strike).ln() / stddev + 0.5 * stddev;
    let d2 = d1 - stddev;
    let price = match kind {
        OptionKind::Call => forward * norm_cdf(d1) - strike * norm_cdf(d2),
        OptionKind::Put => strike * norm_cdf(-d2) - forward * norm_cdf(-d1),
    };
    Ok(df * price)
}

/// Discounted Black vega (per unit of vol).
pub fn black_vega(forward: f64, strike: f64, vol: f64, expiry: f64, df: f64) -> Result<f64> {
    validate_common(forward, strike, vol, expiry, df)?;
    let sqrt_t = expiry.sqrt();
    let stddev = vol * sqrt_t;
    if stddev == 0.0 {
        return Ok(0.0);
    }
    let d1 = (forward / strike).ln() / stddev + 0.5 * stddev;
    Ok(df * forward * norm_pdf(d1) * sqrt_t)
}

/// Black implied volatility by a bracketed Newton iteration with bisection
/// safeguard.
///
/// The price must lie strictly between the discounted intrinsic value and
/// the discounted forward bound (`df*F` for calls, `df*K` for puts); a price
/// exactly at intrinsic maps to zero vol.
pub fn implied_vol(
    price: f64,
    forward: f64,
    strike: f64,
    expiry: f64,
    df: f64,
    kind: OptionKind,
) -> Result<f64> {
    validate_common(forward, strike, 0.0, expiry, df)?;
    if !price.is_finite() {
        return Err(EngineError::invalid(format!("non-finite price {price}")));
    }

    let intrinsic = df * kind.intrinsic(forward, strike);
    let upper = match kind {
        OptionKind::Call => df * forward,
        OptionKind::Put => df * strike,
    };
    if price < intrinsic - PRICE_TOL {
        return Err(EngineError::NoSolution(format!(
            "price {price} below discounted intrinsic {intrinsic}"
        )));
    }
    if price <= intrinsic + PRICE_TOL {
        return Ok(0.0);
    }
    if price >= upper {
        return Err(EngineError::NoSolution(format!(
            "price {price} at or above discounted forward bound {upper}"
        )));
    }

    let f = |vol: f64| black_price(forward, strike, vol, expiry, df, kind).expect("validated");

    let mut lo = VOL_LO;
    let mut hi = VOL_HI;
    let f_lo = f(lo) - price;
    if f_lo >= 0.0 {
        // Root sits below the bracket floor; the floor itself is the answer
        // to within the price tolerance for any quote this close to intrinsic.
        return Ok(lo);
    }
    if f(hi) - price <= 0.0 {
        return Err(EngineError::NoSolution(format!(
            "price {price} implies a volatility above the {VOL_HI} bracket"
        )));
    }

    let mut vol = 0.5 * (lo + hi);
    for _ in 0..MAX_ITER {
        let diff = f(vol) - price;
        if diff.abs() < PRICE_TOL {
            return Ok(vol);
        }
        if diff > 0.0 {
            hi = vol;
        } else {
            lo = vol;
        }
        let vega = black_vega(forward, strike, vol, expiry, df).expect("validated");
        let newton = vol - diff / vega;
        vol = if vega > 1e-14 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok(vol)
}
