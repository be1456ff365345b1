//! Monotone cubic Hermite interpolation (Fritsch-Carlson tangents).
//!
//! The interpolant passes through every node exactly, is monotone on each
//! interval whose endpoints are ordered, never overshoots the bracketing
//! node values, and extrapolates flat outside the node range.

use crate::error::{EngineError, Result};

/// Monotone cubic interpolant over a strictly increasing abscissa grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    tangents: Vec<f64>,
}

impl MonotoneCubic {
    /// Builds the interpolant. Requires at least one node and strictly
    /// increasing, finite abscissae.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(EngineError::invalid(format!(
                "spline needs matching non-empty node vectors, got {} x and {} y",
                xs.len(),
                ys.len()
            )));
        }
        for (v, name) in [(&xs, "abscissa"), (&ys, "ordinate")] {
            if let Some(bad) = v.iter().find(|v| !v.is_finite()) {
                return Err(EngineError::invalid(format!("non-finite {name} {bad}")));
            }
        }
        for w in xs.windows(2) {
            if w[1] <= w[0] {
                return Err(EngineError::invalid(format!(
                    "abscissae must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        let tangents = fritsch_carlson_tangents(&xs, &ys);
        Ok(Self { xs, ys, tangents })
    }

    /// Interpolated value; constant beyond the first/last node.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if n == 1 || x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let i = self.xs.partition_point(|&v| v < x).saturating_sub(1);
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (y0, y1) = (self.ys[i], self.ys[i + 1]);
        let (m0, m1) = (self.tangents[i], self.tangents[i + 1]);
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * y0 + h10 * h * m0 + h01 * y1 + h11 * h * m1
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }
}

/// PCHIP-style tangents: harmonic-mean weighting in the interior, shape-
/// limited one-sided estimates at the ends, zero at local extrema.
fn fritsch_carlson_tangents(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    if n == 1 {
        return vec![0.0];
    }
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let d: Vec<f64> = ys
        .windows(2)
        .zip(&h)
        .map(|(w, h)| (w[1] - w[0]) / h)
        .collect();
    if n == 2 {
        return vec![d[0], d[0]];
    }

    let mut m = vec![0.0; n];
    for i in 1..n - 1 {
        if d[i - 1] * d[i] <= 0.0 {
            m[i] = 0.0;
        } else {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            m[i] = (w1 + w2) / (w1 / d[i - 1] + w2 / d[i]);
        }
    }
    m[0] = edge_tangent(h[0], h[1], d[0], d[1]);
    m[n - 1] = edge_tangent(h[n - 2], h[n - 3], d[n - 2], d[n - 3]);
    m
}

fn edge_tangent(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if m * d0 <= 0.0 {
        0.0
    } else if d0 * d1 < 0.0 && m.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn reproduces_nodes_exactly() {
        let xs = vec![0.1, 0.5, 1.0, 2.0, 3.0];
        let ys = vec![0.25, 0.21, 0.2, 0.22, 0.23];
        let s = MonotoneCubic::new(xs.clone(), ys.clone()).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert_eq!(s.eval(*x), *y);
        }
    }

    #[test]
    fn flat_extrapolation() {
        let s = MonotoneCubic::new(vec![1.0, 2.0, 3.0], vec![0.3, 0.2, 0.25]).unwrap();
        assert_eq!(s.eval(0.0), 0.3);
        assert_eq!(s.eval(-5.0), 0.3);
        assert_eq!(s.eval(10.0), 0.25);
    }

    #[test]
    fn single_node_is_constant() {
        let s = MonotoneCubic::new(vec![1.0], vec![-0.3]).unwrap();
        for x in [0.0, 1.0, 7.0] {
            assert_eq!(s.eval(x), -0.3);
        }
    }

    #[test]
    fn two_nodes_is_linear() {
        let s = MonotoneCubic::new(vec![0.0, 2.0], vec![1.0, 3.0]).unwrap();
        assert_abs_diff_eq!(s.eval(0.5), 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.eval(1.0), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn monotone_data_gives_monotone_interpolant() {
        // Dense sampling on each interval must be non-decreasing.
        let xs = vec![0.0, 0.3, 1.0, 1.4, 2.0, 5.0];
        let ys = vec![0.1, 0.11, 0.3, 0.31, 0.6, 0.61];
        let s = MonotoneCubic::new(xs, ys).unwrap();
        let mut prev = s.eval(0.0);
        for i in 1..=2000 {
            let x = 5.0 * i as f64 / 2000.0;
            let y = s.eval(x);
            assert!(
                y >= prev - 1e-13,
                "interpolant decreased at x={x}: {y} < {prev}"
            );
            prev = y;
        }
    }

    #[test]
    fn rejects_unsorted_and_nan() {
        assert!(MonotoneCubic::new(vec![1.0, 1.0], vec![0.0, 0.0]).is_err());
        assert!(MonotoneCubic::new(vec![2.0, 1.0], vec![0.0, 0.0]).is_err());
        assert!(MonotoneCubic::new(vec![0.0, f64::NAN], vec![0.0, 0.0]).is_err());
        assert!(MonotoneCubic::new(vec![], vec![]).is_err());
    }

    proptest! {
        // No overshoot: values stay within the bracketing node values.
        #[test]
        fn never_overshoots(ys in proptest::collection::vec(0.01f64..2.0, 4..12)) {
            let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64 * 0.5 + 0.25).collect();
            let s = MonotoneCubic::new(xs.clone(), ys.clone()).unwrap();
            for i in 0..xs.len() - 1 {
                let (lo, hi) = if ys[i] <= ys[i + 1] { (ys[i], ys[i + 1]) } else { (ys[i + 1], ys[i]) };
                for j in 0..=20 {
                    let x = xs[i] + (xs[i + 1] - xs[i]) * j as f64 / 20.0;
                    let y = s.eval(x);
                    prop_assert!(y >= lo - 1e-12 && y <= hi + 1e-12,
                        "overshoot at x={}: {} outside [{}, {}]", x, y, lo, hi);
                }
            }
        }
    }
}
