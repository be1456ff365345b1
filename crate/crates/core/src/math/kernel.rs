//! Binned kernel estimators for cross-sectional conditional expectations.
//!
//! Conditional expectations inside the simulation loop would cost O(N^2) if
//! evaluated sample-against-sample. Both estimators here use linear binning
//! onto a regular grid followed by a direct Gaussian convolution, which is
//! O(N + bins * taps) and deterministic regardless of worker count. Queries
//! interpolate linearly between bin centers.

use crate::error::{EngineError, Result};

/// Gaussian kernels are truncated at this many bandwidths.
const KERNEL_RADIUS_BW: f64 = 6.0;

/// Nadaraya-Watson regression of one or more response channels on a scalar
/// regressor, pre-smoothed on a grid.
#[derive(Debug, Clone)]
pub struct NwRegression {
    grid_lo: f64,
    inv_dx: f64,
    eval_lo: f64,
    eval_hi: f64,
    weight: Vec<f64>,
    channels: Vec<Vec<f64>>,
}

impl NwRegression {
    /// Fits the regression of every channel in `ys` on `xs` with a Gaussian
    /// kernel of the given `bandwidth`. Queries are clamped to
    /// `[eval_lo, eval_hi]`; the grid extends one kernel radius beyond it.
    /// Samples further than a kernel radius outside the grid are dropped
    /// (their contribution is below 2e-8 of a bulk sample's).
    pub fn fit(
        xs: &[f64],
        ys: &[&[f64]],
        bandwidth: f64,
        eval_lo: f64,
        eval_hi: f64,
        n_bins: usize,
    ) -> Result<Self> {
        if xs.is_empty() {
            return Err(EngineError::invalid("kernel regression on empty sample"));
        }
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(EngineError::invalid(format!(
                "kernel bandwidth must be positive, got {bandwidth}"
            )));
        }
        if !(eval_hi > eval_lo) {
            return Err(EngineError::invalid(format!(
                "bad evaluation range [{eval_lo}, {eval_hi}]"
            )));
        }
        for y in ys {
            if y.len() != xs.len() {
                return Err(EngineError::invalid(
                    "kernel regression channel length mismatch",
                ));
            }
        }
        let n_bins = n_bins.max(16);

        let pad = KERNEL_RADIUS_BW * bandwidth;
        let grid_lo = eval_lo - pad;
        let grid_hi = eval_hi + pad;
        let dx = (grid_hi - grid_lo) / (n_bins - 1) as f64;
        let inv_dx = 1.0 / dx;

        // Linear binning of kernel mass and mass-weighted responses.
        let mut raw_w = vec![0.0; n_bins];
        let mut raw_c = vec![vec![0.0; n_bins]; ys.len()];
        for (i, &x) in xs.iter().enumerate() {
            if x < grid_lo || x > grid_hi {
                continue;
            }
            let pos = (x - grid_lo) * inv_dx;
            let b = (pos as usize).min(n_bins - 2);
            let frac = pos - b as f64;
            raw_w[b] += 1.0 - frac;
            raw_w[b + 1] += frac;
            for (c, y) in ys.iter().enumerate() {
                raw_c[c][b] += (1.0 - frac) * y[i];
                raw_c[c][b + 1] += frac * y[i];
            }
        }

        let taps_half = ((pad * inv_dx).ceil() as usize).max(1);
        let taps: Vec<f64> = (0..=taps_half)
            .map(|j| {
                let u = j as f64 * dx / bandwidth;
                (-0.5 * u * u).exp()
            })
            .collect();

        let convolve = |raw: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; n_bins];
            for (b, o) in out.iter_mut().enumerate() {
                let mut acc = taps[0] * raw[b];
                for j in 1..=taps_half {
                    let mut v = 0.0;
                    if b >= j {
                        v += raw[b - j];
                    }
                    if b + j < n_bins {
                        v += raw[b + j];
                    }
                    acc += taps[j] * v;
                }
                *o = acc;
            }
            out
        };

        let weight = convolve(&raw_w);
        let channels = raw_c.iter().map(|c| convolve(c)).collect();

        Ok(Self {
            grid_lo,
            inv_dx,
            eval_lo,
            eval_hi,
            weight,
            channels,
        })
    }

    /// Smallest kernel mass seen anywhere in the evaluation range; the
    /// caller's guard against an under-resolved bandwidth.
    pub fn min_effective_weight(&self) -> f64 {
        let lo = ((self.eval_lo - self.grid_lo) * self.inv_dx).floor() as usize;
        let hi = (((self.eval_hi - self.grid_lo) * self.inv_dx).ceil() as usize)
            .min(self.weight.len() - 1);
        self.weight[lo..=hi]
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b))
    }

    /// Regressed channel values at `x` (clamped to the evaluation range),
    /// written into `out`; returns the local kernel mass.
    pub fn eval_into(&self, x: f64, out: &mut [f64]) -> f64 {
        debug_assert_eq!(out.len(), self.channels.len());
        let x = x.clamp(self.eval_lo, self.eval_hi);
        let pos = (x - self.grid_lo) * self.inv_dx;
        let b = (pos as usize).min(self.weight.len() - 2);
        let frac = pos - b as f64;
        let w = (1.0 - frac) * self.weight[b] + frac * self.weight[b + 1];
        for (o, c) in out.iter_mut().zip(&self.channels) {
            let num = (1.0 - frac) * c[b] + frac * c[b + 1];
            *o = num / w;
        }
        w
    }
}

/// Bivariate Gaussian kernel density on a binned grid.
#[derive(Debug, Clone)]
pub struct BinnedKde2d {
    lo_u: f64,
    lo_v: f64,
    inv_du: f64,
    inv_dv: f64,
    n_u: usize,
    n_v: usize,
    /// Convolved kernel mass, row-major over (u, v), scaled to a density.
    density: Vec<f64>,
    max_density: f64,
}

impl BinnedKde2d {
    pub fn fit(
        us: &[f64],
        vs: &[f64],
        bandwidth_u: f64,
        bandwidth_v: f64,
        n_bins: usize,
    ) -> Result<Self> {
        if us.is_empty() || us.len() != vs.len() {
            return Err(EngineError::invalid("kde sample vectors empty or mismatched"));
        }
        for (h, name) in [(bandwidth_u, "u"), (bandwidth_v, "v")] {
            if !(h.is_finite() && h > 0.0) {
                return Err(EngineError::invalid(format!(
                    "kde bandwidth_{name} must be positive, got {h}"
                )));
            }
        }
        let n_bins = n_bins.max(16);

        let (mut min_u, mut max_u) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut min_v, mut max_v) = (f64::INFINITY, f64::NEG_INFINITY);
        for (&u, &v) in us.iter().zip(vs) {
            min_u = min_u.min(u);
            max_u = max_u.max(u);
            min_v = min_v.min(v);
            max_v = max_v.max(v);
        }
        let pad_u = KERNEL_RADIUS_BW * bandwidth_u;
        let pad_v = KERNEL_RADIUS_BW * bandwidth_v;
        let lo_u = min_u - pad_u;
        let lo_v = min_v - pad_v;
        let du = (max_u + pad_u - lo_u) / (n_bins - 1) as f64;
        let dv = (max_v + pad_v - lo_v) / (n_bins - 1) as f64;
        let inv_du = 1.0 / du;
        let inv_dv = 1.0 / dv;

        let mut raw = vec![0.0; n_bins * n_bins];
        for (&u, &v) in us.iter().zip(vs) {
            let pu = (u - lo_u) * inv_du;
            let pv = (v - lo_v) * inv_dv;
            let bu = (pu as usize).min(n_bins - 2);
            let bv = (pv as usize).min(n_bins - 2);
            let fu = pu - bu as f64;
            let fv = pv - bv as f64;
            raw[bu * n_bins + bv] += (1.0 - fu) * (1.0 - fv);
            raw[bu * n_bins + bv + 1] += (1.0 - fu) * fv;
            raw[(bu + 1) * n_bins + bv] += fu * (1.0 - fv);
            raw[(bu + 1) * n_bins + bv + 1] += fu * fv;
        }

        let taps = |h: f64, d: f64| -> Vec<f64> {
            let half = ((KERNEL_RADIUS_BW * h / d).ceil() as usize).max(1);
            (0..=half)
                .map(|j| {
                    let x = j as f64 * d / h;
                    (-0.5 * x * x).exp()
                })
                .collect()
        };
        let taps_u = taps(bandwidth_u, du);
        let taps_v = taps(bandwidth_v, dv);

        // Separable convolution: along v (contiguous rows), then along u.
        let mut pass1 = vec![0.0; n_bins * n_bins];
        for r in 0..n_bins {
            let row = &raw[r * n_bins..(r + 1) * n_bins];
            let out = &mut pass1[r * n_bins..(r + 1) * n_bins];
            convolve_1d(row, &taps_v, out);
        }
        let mut density = vec![0.0; n_bins * n_bins];
        let mut col = vec![0.0; n_bins];
        let mut col_out = vec![0.0; n_bins];
        for c in 0..n_bins {
            for r in 0..n_bins {
                col[r] = pass1[r * n_bins + c];
            }
            convolve_1d(&col, &taps_u, &mut col_out);
            for r in 0..n_bins {
                density[r * n_bins + c] = col_out[r];
            }
        }

        let norm = 1.0
            / (us.len() as f64 * 2.0 * std::f64::consts::PI * bandwidth_u * bandwidth_v);
        let mut max_density = 0.0f64;
        for d in density.iter_mut() {
            *d *= norm;
            max_density = max_density.max(*d);
        }

        Ok(Self {
            lo_u,
            lo_v,
            inv_du,
            inv_dv,
            n_u: n_bins,
            n_v: n_bins,
            density,
            max_density,
        })
    }

    /// Density estimate at `(u, v)`; zero outside the padded grid.
    pub fn eval(&self, u: f64, v: f64) -> f64 {
        let pu = (u - self.lo_u) * self.inv_du;
        let pv = (v - self.lo_v) * self.inv_dv;
        if pu < 0.0 || pv < 0.0 || pu > (self.n_u - 1) as f64 || pv > (self.n_v - 1) as f64 {
            return 0.0;
        }
        let bu = (pu as usize).min(self.n_u - 2);
        let bv = (pv as usize).min(self.n_v - 2);
        let fu = pu - bu as f64;
        let fv = pv - bv as f64;
        let d00 = self.density[bu * self.n_v + bv];
        let d01 = self.density[bu * self.n_v + bv + 1];
        let d10 = self.density[(bu + 1) * self.n_v + bv];
        let d11 = self.density[(bu + 1) * self.n_v + bv + 1];
        (1.0 - fu) * ((1.0 - fv) * d00 + fv * d01) + fu * ((1.0 - fv) * d10 + fv * d11)
    }

    pub fn max_density(&self) -> f64 {
        self.max_density
    }
}

fn convolve_1d(raw: &[f64], taps: &[f64], out: &mut [f64]) {
    let n = raw.len();
    for (b, o) in out.iter_mut().enumerate() {
        let mut acc = taps[0] * raw[b];
        for (j, t) in taps.iter().enumerate().skip(1) {
            let mut v = 0.0;
            if b >= j {
                v += raw[b - j];
            }
            if b + j < n {
                v += raw[b + j];
            }
            acc += t * v;
        }
        *o = acc;
    }
}
