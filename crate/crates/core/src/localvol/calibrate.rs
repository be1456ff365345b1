//! Fixed-point calibration of the local-vol node values to vanilla quotes.
//!
//! Nodes start at the market vols. Each iteration reprices through the
//! forward solver and applies the first-order correction: a multiplicative
//! ATM level ratio plus an additive skew term away from ATM,
//!
//! ```text
//!   eta_ij <- eta_ij * s_mkt(i, atm) / s_mod(i, atm)
//!             + 2 (dk s_mkt_ij - dk s_mod_ij) (k_j - k_atm)   (j != atm)
//! ```
//!
//! with strike derivatives by finite differences on the quote grid. The
//! factor 2 and the displacement from the ATM strike come from the
//! short-maturity lever between implied and local skew (implied skew is
//! half the local skew, and the vol at strike k reads the local surface
//! near the midpoint (1+k)/2); with a displacement-independent step the
//! iteration cannot change the skew of the surface and stalls.

use crate::error::{EngineError, Result};
use crate::marketdata::VolQuoteSurface;

use super::pde::{dupire_reprice, PdeGrid};
use super::LocalVolSurface;

const NODE_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct CalibrationConfig {
    /// Max abs implied-vol error to declare convergence (1e-4 = one bp).
    pub tol: f64,
    pub max_iter: usize,
    /// Halve the skew correction after an iteration whose error grew.
    pub damping: bool,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_iter: 20,
            damping: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CalibrationDiagnostics {
    pub iterations: usize,
    /// Max abs vol error after each repricing.
    pub error_history: Vec<f64>,
    pub converged: bool,
    /// Best-so-far surface was returned because max_iter was reached.
    pub hit_max_iter: bool,
}

/// Calibrates a local-vol surface to `quotes`.
///
/// Returns the best surface seen together with per-iteration diagnostics;
/// diverging error (three consecutive increases) is an error carrying the
/// history.
pub fn fixed_point_calibrate(
    quotes: &VolQuoteSurface,
    grid: &PdeGrid,
    config: &CalibrationConfig,
) -> Result<(LocalVolSurface, CalibrationDiagnostics)> {
    // Calendar sanity: ATM total variance must not decrease.
    for i in 1..quotes.n_maturities() {
        let w_prev = quotes.atm_vol(i - 1).powi(2) * quotes.maturities()[i - 1];
        let w = quotes.atm_vol(i).powi(2) * quotes.maturities()[i];
        if w < w_prev - 1e-12 {
            return Err(EngineError::invalid(format!(
                "calendar arbitrage: ATM total variance decreases from {} to {} at t={}",
                w_prev,
                w,
                quotes.maturities()[i]
            )));
        }
    }

    let maturities = quotes.maturities().to_vec();
    let strikes: Vec<Vec<f64>> = (0..quotes.n_maturities())
        .map(|i| quotes.moneyness(i).to_vec())
        .collect();
    let mut nodes: Vec<Vec<f64>> = (0..quotes.n_maturities())
        .map(|i| quotes.vols(i).to_vec())
        .collect();

    let market_skew: Vec<Vec<f64>> = (0..quotes.n_maturities())
        .map(|i| strike_derivative(&strikes[i], quotes.vols(i)))
        .collect();

    let mut history = Vec::new();
    let mut best: Option<(f64, LocalVolSurface)> = None;
    let mut grew = 0usize;
    let mut skew_scale = 1.0;

    for iter in 0..config.max_iter {
        let surface = LocalVolSurface::from_grid(&maturities, &strikes, &nodes)?;
        let model = dupire_reprice(&surface, grid, quotes)?;

        let mut err = 0.0f64;
        for (i, row) in model.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                err = err.max((v - quotes.vols(i)[j]).abs());
            }
        }
        history.push(err);

        if best.as_ref().map_or(true, |(e, _)| err < *e) {
            best = Some((err, surface));
        }

        if err < config.tol {
            return Ok((
                best.expect("set above").1,
                CalibrationDiagnostics {
                    iterations: iter + 1,
                    error_history: history,
                    converged: true,
                    hit_max_iter: false,
                },
            ));
        }

        if history.len() >= 2 {
            let prev = history[history.len() - 2];
            if err > prev {
                grew += 1;
                if config.damping {
                    skew_scale *= 0.5;
                }
            } else {
                grew = 0;
            }
            if grew >= 3 {
                return Err(EngineError::CalibrationFailure {
                    reason: format!(
                        "max abs vol error grew for 3 consecutive iterations (last {err:.3e})"
                    ),
                    error_history: history,
                });
            }
        }

        for i in 0..maturities.len() {
            let atm = quotes.atm_index(i);
            let ratio = quotes.vols(i)[atm] / model[i][atm];
            let model_skew = strike_derivative(&strikes[i], &model[i]);
            let k_atm = strikes[i][atm];
            for j in 0..strikes[i].len() {
                let mut v = nodes[i][j] * ratio;
                if j != atm {
                    let dk = strikes[i][j] - k_atm;
                    v += 2.0 * skew_scale * (market_skew[i][j] - model_skew[j]) * dk;
                }
                nodes[i][j] = v.max(NODE_FLOOR);
            }
        }
    }

    let (err, surface) = best.expect("at least one iteration ran");
    let _ = err;
    Ok((
        surface,
        CalibrationDiagnostics {
            iterations: config.max_iter,
            error_history: history,
            converged: false,
            hit_max_iter: true,
        },
    ))
}

/// Central differences on the quote grid, one-sided at the edges.
fn strike_derivative(ks: &[f64], vols: &[f64]) -> Vec<f64> {
    let n = ks.len();
    if n == 1 {
        return vec![0.0];
    }
    (0..n)
        .map(|j| {
            if j == 0 {
                (vols[1] - vols[0]) / (ks[1] - ks[0])
            } else if j == n - 1 {
                (vols[n - 1] - vols[n - 2]) / (ks[n - 1] - ks[n - 2])
            } else {
                (vols[j + 1] - vols[j - 1]) / (ks[j + 1] - ks[j - 1])
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn flat_quotes_converge_immediately() {
        let ks = [0.8, 0.9, 1.0, 1.1, 1.2];
        let rows = [0.5, 1.0, 2.0]
            .iter()
            .map(|&t| (t, ks.iter().map(|&k| (k, 0.2)).collect()))
            .collect();
        let quotes = VolQuoteSurface::new("flat", rows).unwrap();
        let grid = PdeGrid::default_for_quotes(&quotes).unwrap();
        let (surface, diag) =
            fixed_point_calibrate(&quotes, &grid, &CalibrationConfig::default()).unwrap();
        assert!(diag.converged);
        assert!(diag.iterations <= 2, "took {} iterations", diag.iterations);
        for i in 0..3 {
            for &v in surface.node_values(i) {
                assert_abs_diff_eq!(v, 0.2, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn recovers_synthetic_skewed_quotes_within_one_bp() {
        // Quotes generated by the forward solver from a known surface; the
        // fixed point must reprice them well below a basis point.
        let maturities = [0.25, 0.5, 1.0, 2.0, 3.0];
        let ks = [0.8, 0.9, 1.0, 1.1, 1.2];
        let truth = LocalVolSurface::new(
            maturities
                .iter()
                .map(|&t| {
                    (
                        t,
                        ks.iter()
                            .map(|&k| {
                                let v: f64 = 0.22 + 0.03 * (-t as f64).exp() - 0.10 * (k - 1.0)
                                    + 0.08 * (k - 1.0) * (k - 1.0);
                                (k, v.max(0.05))
                            })
                            .collect(),
                    )
                })
                .collect(),
        )
        .unwrap();
        let quote_holder = VolQuoteSurface::new(
            "synthetic",
            maturities
                .iter()
                .map(|&t| (t, ks.iter().map(|&k| (k, 0.2)).collect()))
                .collect(),
        )
        .unwrap();
        let grid = PdeGrid::default_for_quotes(&quote_holder).unwrap();
        let synthetic = dupire_reprice(&truth, &grid, &quote_holder).unwrap();
        let quotes = VolQuoteSurface::new(
            "synthetic",
            maturities
                .iter()
                .enumerate()
                .map(|(i, &t)| {
                    (
                        t,
                        ks.iter()
                            .zip(&synthetic[i])
                            .map(|(&k, &v)| (k, v))
                            .collect(),
                    )
                })
                .collect(),
        )
        .unwrap();

        let (surface, diag) =
            fixed_point_calibrate(&quotes, &grid, &CalibrationConfig::default()).unwrap();
        assert!(diag.converged, "history {:?}", diag.error_history);
        let reprice = dupire_reprice(&surface, &grid, &quotes).unwrap();
        let mut worst = 0.0f64;
        for (i, row) in reprice.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                worst = worst.max((v - quotes.vols(i)[j]).abs());
            }
        }
        assert!(worst < 1e-4, "worst repricing error {worst}");
        // Residual shrinks monotonically until convergence on this fixture.
        for w in diag.error_history.windows(2) {
            assert!(w[1] < w[0] + 1e-12, "history {:?}", diag.error_history);
        }
    }

    #[test]
    fn calendar_arbitrage_rejected() {
        let ks = [0.9, 1.0, 1.1];
        let quotes = VolQuoteSurface::new(
            "bad",
            vec![
                (1.0, ks.iter().map(|&k| (k, 0.3)).collect()),
                (2.0, ks.iter().map(|&k| (k, 0.15)).collect()),
            ],
        )
        .unwrap();
        let grid = PdeGrid::default_for_quotes(&quotes).unwrap();
        let err = fixed_point_calibrate(&quotes, &grid, &CalibrationConfig::default()).unwrap_err();
        assert!(matches!(err, EngineError::InvalidInput(_)));
    }
}
