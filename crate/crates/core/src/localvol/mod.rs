//! Non-parametric local-volatility surfaces, vanilla repricing through the
//! forward Dupire PDE, and the fixed-point calibration scheme.

mod calibrate;
mod io;
mod pde;

pub use calibrate::{fixed_point_calibrate, CalibrationConfig, CalibrationDiagnostics};
pub use io::{dump_surface, load_surface};
pub use pde::{
    atm_vol_curve, dupire_reprice, solve_forward, AtmVolCurve, BoundaryCondition, PdeGrid,
    PdeSolution,
};

use crate::error::{EngineError, Result};
use crate::math::MonotoneCubic;

/// Local-volatility surface on node maturities and per-maturity node strikes
/// (forward moneyness).
///
/// Piecewise-constant in time over `(t_{i-1}, t_i]` (the last row extends to
/// infinity), monotone cubic spline in strike inside the node range and
/// constant outside. Evaluation at a node reproduces the node value exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalVolSurface {
    maturities: Vec<f64>,
    rows: Vec<MonotoneCubic>,
}

impl LocalVolSurface {
    /// Builds a surface from `(maturity, [(moneyness, value)])` rows.
    pub fn new(rows: Vec<(f64, Vec<(f64, f64)>)>) -> Result<Self> {
        if rows.is_empty() {
            return Err(EngineError::invalid("local-vol surface needs at least one row"));
        }
        let mut maturities = Vec::with_capacity(rows.len());
        let mut splines = Vec::with_capacity(rows.len());
        let mut prev_t = 0.0;
        for (t, nodes) in rows {
            if !t.is_finite() || t <= prev_t {
                return Err(EngineError::invalid(format!(
                    "surface maturities must be positive and strictly increasing, got {t}"
                )));
            }
            let mut ks = Vec::with_capacity(nodes.len());
            let mut vs = Vec::with_capacity(nodes.len());
            for (k, v) in nodes {
                if !k.is_finite() || k <= 0.0 {
                    return Err(EngineError::invalid(format!(
                        "node moneyness must be positive, got {k} at t={t}"
                    )));
                }
                if !v.is_finite() || v <= 0.0 {
                    return Err(EngineError::invalid(format!(
                        "node vols must be positive, got {v} at t={t}, k={k}"
                    )));
                }
                ks.push(k);
                vs.push(v);
            }
            maturities.push(t);
            splines.push(MonotoneCubic::new(ks, vs)?);
            prev_t = t;
        }
        Ok(Self {
            maturities,
            rows: splines,
        })
    }

    /// Constant surface, used by flat fixtures.
    pub fn flat(vol: f64) -> Self {
        Self::new(vec![(1.0, vec![(1.0, vol)])]).expect("flat surface is valid")
    }

    /// Surface with the same node grid as a quote surface and given values.
    pub fn from_grid(
        maturities: &[f64],
        strikes: &[Vec<f64>],
        values: &[Vec<f64>],
    ) -> Result<Self> {
        let rows = maturities
            .iter()
            .zip(strikes.iter().zip(values))
            .map(|(&t, (ks, vs))| (t, ks.iter().copied().zip(vs.iter().copied()).collect()))
            .collect();
        Self::new(rows)
    }

    pub fn maturities(&self) -> &[f64] {
        &self.maturities
    }

    pub fn node_strikes(&self, i: usize) -> &[f64] {
        self.rows[i].xs()
    }

    pub fn node_values(&self, i: usize) -> &[f64] {
        self.rows[i].ys()
    }

    fn row_index(&self, t: f64) -> usize {
        self.maturities
            .partition_point(|&m| m < t)
            .min(self.maturities.len() - 1)
    }

    /// Local vol at `(t, k)`; total on `t >= 0`, `k > 0`.
    #[inline]
    pub fn eval(&self, t: f64, k: f64) -> f64 {
        self.rows[self.row_index(t)].eval(k)
    }
}
