//! Forward Dupire PDE in log-moneyness for normalized call prices.
//!
//! With unit forward and s following `ds/s = eta(t, s) dW`, the normalized
//! call price c(t, k) = E[(s_t - k)^+] satisfies the forward equation
//!
//! ```text
//!   dc/dt = 1/2 eta(t, k)^2 (d2c/du2 - dc/du),   u = ln k,
//! ```
//!
//! solved here with Crank-Nicolson stepping, Rannacher start-up against the
//! payoff kink, and Dirichlet boundaries at the intrinsic values. The time
//! grid never straddles a maturity of the piecewise-constant surface, so
//! each step sees a single coefficient regime.

use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};
use crate::marketdata::{implied_vol, OptionKind, VolQuoteSurface};
use crate::math::solve_tridiagonal;

use super::LocalVolSurface;

/// Boundary treatment of the forward solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCondition {
    /// Prices pinned to intrinsic value at both ends of the grid.
    #[default]
    DirichletIntrinsic,
}

/// Spatial/temporal discretization of the forward solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeGrid {
    /// Log-moneyness range; must cover the quoted strikes with margin.
    pub u_min: f64,
    pub u_max: f64,
    /// Spatial node count, at least 200.
    pub n_nodes: usize,
    /// Time steps per calibration interval (between surface maturities).
    pub steps_per_interval: usize,
    pub boundary: BoundaryCondition,
}

impl PdeGrid {
    pub fn new(u_min: f64, u_max: f64, n_nodes: usize, steps_per_interval: usize) -> Result<Self> {
        if !(u_min.is_finite() && u_max.is_finite() && u_min < 0.0 && u_max > 0.0) {
            return Err(EngineError::invalid(format!(
                "log-moneyness range must be finite and bracket 0, got [{u_min}, {u_max}]"
            )));
        }
        if n_nodes < 200 {
            return Err(EngineError::invalid(format!(
                "PDE grid needs at least 200 nodes, got {n_nodes}"
            )));
        }
        if steps_per_interval == 0 {
            return Err(EngineError::invalid("steps_per_interval must be positive"));
        }
        Ok(Self {
            u_min,
            u_max,
            n_nodes,
            steps_per_interval,
            boundary: BoundaryCondition::DirichletIntrinsic,
        })
    }

    /// Grid sized for a quote surface: covers every quoted log-moneyness
    /// with a margin of `margin_stdevs` ATM standard deviations at the
    /// longest maturity (at least 4).
    pub fn for_quotes(
        quotes: &VolQuoteSurface,
        margin_stdevs: f64,
        n_nodes: usize,
        steps_per_interval: usize,
    ) -> Result<Self> {
        if margin_stdevs < 4.0 {
            return Err(EngineError::invalid(format!(
                "margin must be at least 4 ATM standard deviations, got {margin_stdevs}"
            )));
        }
        let last = quotes.n_maturities() - 1;
        let t_max = quotes.maturities()[last];
        let margin = margin_stdevs * quotes.atm_vol(last) * t_max.sqrt();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..quotes.n_maturities() {
            for &k in quotes.moneyness(i) {
                lo = lo.min(k.ln());
                hi = hi.max(k.ln());
            }
        }
        Self::new(lo - margin, hi + margin, n_nodes, steps_per_interval)
    }

    /// Default resolution for desk-scale calibrations.
    pub fn default_for_quotes(quotes: &VolQuoteSurface) -> Result<Self> {
        Self::for_quotes(quotes, 5.0, 1000, 96)
    }
}

/// Forward-solver output: price slices at the requested record times plus
/// the ATM price trace at every time step.
#[derive(Debug, Clone)]
pub struct PdeSolution {
    pub us: Vec<f64>,
    pub record_times: Vec<f64>,
    pub slices: Vec<Vec<f64>>,
    pub step_times: Vec<f64>,
    pub atm_prices: Vec<f64>,
}

impl PdeSolution {
    /// Normalized call price at `(slice, k)` by local cubic interpolation.
    pub fn price_at(&self, slice: usize, k: f64) -> f64 {
        interp_cubic(&self.us, &self.slices[slice], k.ln())
    }
}

/// Runs the forward solver, recording full slices at `record_times` (which
/// must be positive and sorted) and the ATM price at every step.
pub fn solve_forward(
    surface: &LocalVolSurface,
    grid: &PdeGrid,
    record_times: &[f64],
    horizon: f64,
) -> Result<PdeSolution> {
    if !(horizon > 0.0) {
        return Err(EngineError::invalid(format!("horizon must be positive, got {horizon}")));
    }
    for w in record_times.windows(2) {
        if w[1] <= w[0] {
            return Err(EngineError::invalid("record times must be strictly increasing"));
        }
    }
    if let Some(&first) = record_times.first() {
        if first <= 0.0 {
            return Err(EngineError::invalid("record times must be positive"));
        }
    }

    // Spatial grid with u = 0 on a node (kink alignment).
    let du = (grid.u_max - grid.u_min) / (grid.n_nodes - 1) as f64;
    let below = (-grid.u_min / du).ceil() as usize;
    let above = (grid.u_max / du).ceil() as usize;
    let n = below + above + 1;
    let us: Vec<f64> = (0..n).map(|j| (j as f64 - below as f64) * du).collect();
    let atm_node = below;

    // Time boundaries: surface maturities and record times, then horizon.
    let mut boundaries: Vec<f64> = surface
        .maturities()
        .iter()
        .copied()
        .filter(|&t| t < horizon - 1e-12)
        .chain(record_times.iter().copied().filter(|&t| t < horizon - 1e-12))
        .chain(std::iter::once(horizon))
        .collect();
    boundaries.sort_by(|a, b| a.partial_cmp(b).unwrap());
    boundaries.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    // Payoff of a normalized call.
    let mut c: Vec<f64> = us.iter().map(|&u| (1.0 - u.exp()).max(0.0)).collect();
    let bc_lo = 1.0 - us[0].exp();
    let bc_hi = 0.0;

    let inv_du2 = 1.0 / (du * du);
    let inv_2du = 0.5 / du;

    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut coeff = vec![0.0; n];

    let mut step_times = Vec::new();
    let mut atm_prices = Vec::new();
    let mut slices = Vec::with_capacity(record_times.len());
    let mut rec_iter = record_times.iter().peekable();

    let mut t = 0.0;
    let mut rannacher_left = 2usize; // initial full steps run as implicit halves
    let mut interval_dt = f64::NAN;

    for (bi, &b) in boundaries.iter().enumerate() {
        // dt target from the surface interval containing this span.
        let row_end = surface
            .maturities()
            .iter()
            .find(|&&m| m > t + 1e-12)
            .copied();
        let (iv_lo, iv_hi) = match row_end {
            Some(m) => {
                let prev = surface
                    .maturities()
                    .iter()
                    .rev()
                    .find(|&&p| p <= t + 1e-12)
                    .copied()
                    .unwrap_or(0.0);
                (prev, m)
            }
            // Beyond the last maturity: reuse the previous step density.
            None => (t, t + if interval_dt.is_finite() { interval_dt * grid.steps_per_interval as f64 } else { b - t }),
        };
        interval_dt = (iv_hi - iv_lo).max(1e-12) / grid.steps_per_interval as f64;
        let span = b - t;
        let n_steps = ((span / interval_dt).ceil() as usize).max(1);

        // Quadratic grading towards t = 0 resolves the payoff kink; uniform
        // steps elsewhere.
        let start = t;
        let step_ends: Vec<f64> = if bi == 0 {
            (1..=n_steps)
                .map(|j| {
                    let w = j as f64 / n_steps as f64;
                    start + span * w * w
                })
                .collect()
        } else {
            (1..=n_steps)
                .map(|j| start + span * j as f64 / n_steps as f64)
                .collect()
        };

        // Coefficient regime for (t, b]: evaluate inside the interval.
        let t_eval = 0.5 * (t + b);
        for (j, &u) in us.iter().enumerate() {
            let eta = surface.eval(t_eval, u.exp());
            coeff[j] = 0.5 * eta * eta;
        }

        let mut first_step = 0usize;
        if bi == 0 {
            // Analytic ramp-up: replace the kinked payoff with per-strike
            // Black prices at the first graded time. Strike coupling enters
            // only at higher order over such a short horizon.
            let t_init = step_ends[0];
            for (j, &u) in us.iter().enumerate() {
                let eta = (2.0 * coeff[j]).sqrt();
                c[j] = crate::marketdata::black_price(
                    1.0,
                    u.exp(),
                    eta,
                    t_init,
                    1.0,
                    OptionKind::Call,
                )
                .expect("ramp-up inputs are valid");
            }
            t = t_init;
            step_times.push(t);
            atm_prices.push(c[atm_node]);
            first_step = 1;
        }

        for s in first_step..n_steps {
            let t_next = if s + 1 == n_steps { b } else { step_ends[s] };
            let dt = t_next - t;
            let substeps: &[(f64, f64)] = if rannacher_left > 0 {
                // Two implicit half-steps against the payoff kink.
                &[(0.5 * dt, 1.0), (0.5 * dt, 1.0)]
            } else {
                &[(dt, 0.5)]
            };
            for &(h, theta) in substeps {
                // Assemble (I - theta h L) x = (I + (1-theta) h L) c.
                rhs[0] = bc_lo;
                rhs[n - 1] = bc_hi;
                lower[0] = 0.0;
                diag[0] = 1.0;
                upper[0] = 0.0;
                lower[n - 1] = 0.0;
                diag[n - 1] = 1.0;
                upper[n - 1] = 0.0;
                for j in 1..n - 1 {
                    let a = coeff[j];
                    let lo = a * (inv_du2 + inv_2du);
                    let di = -2.0 * a * inv_du2;
                    let hi = a * (inv_du2 - inv_2du);
                    lower[j] = -theta * h * lo;
                    diag[j] = 1.0 - theta * h * di;
                    upper[j] = -theta * h * hi;
                    let expl = 1.0 - theta;
                    rhs[j] = c[j]
                        + expl * h * (lo * c[j - 1] + di * c[j] + hi * c[j + 1]);
                }
                solve_tridiagonal(&lower, &diag, &upper, &mut rhs, &mut scratch);
                std::mem::swap(&mut c, &mut rhs);
            }
            if rannacher_left > 0 {
                rannacher_left -= 1;
            }
            t = t_next;

            if !c[atm_node].is_finite() {
                return Err(EngineError::NumericalFailure(format!(
                    "PDE produced non-finite values at t={t} (step {s} of interval ending {b})"
                )));
            }
            step_times.push(t);
            atm_prices.push(c[atm_node]);
        }

        while let Some(&&rt) = rec_iter.peek() {
            if (rt - b).abs() < 1e-12 {
                slices.push(c.clone());
                rec_iter.next();
            } else {
                break;
            }
        }
    }

    if slices.len() != record_times.len() {
        return Err(EngineError::NumericalFailure(format!(
            "recorded {} of {} requested slices",
            slices.len(),
            record_times.len()
        )));
    }

    Ok(PdeSolution {
        us,
        record_times: record_times.to_vec(),
        slices,
        step_times,
        atm_prices,
    })
}

/// Model implied vols at every node of `quotes`, from one forward sweep.
pub fn dupire_reprice(
    surface: &LocalVolSurface,
    grid: &PdeGrid,
    quotes: &VolQuoteSurface,
) -> Result<Vec<Vec<f64>>> {
    let times = quotes.maturities().to_vec();
    let horizon = *times.last().expect("non-empty surface");
    let sol = solve_forward(surface, grid, &times, horizon)?;
    let mut out = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        let mut row = Vec::with_capacity(quotes.moneyness(i).len());
        for &k in quotes.moneyness(i) {
            let price = sol.price_at(i, k);
            let vol = implied_vol(price, 1.0, k, t, 1.0, OptionKind::Call).map_err(|e| {
                EngineError::NumericalFailure(format!(
                    "implied vol inversion failed at t={t}, k={k}: {e}"
                ))
            })?;
            row.push(vol);
        }
        out.push(row);
    }
    Ok(out)
}

/// Implied ATM vol term structure, cached on a dense grid.
///
/// Linear interpolation in total variance between cached times, flat vol
/// extrapolation at both ends.
#[derive(Debug, Clone, PartialEq)]
pub struct AtmVolCurve {
    times: Vec<f64>,
    vols: Vec<f64>,
}

impl AtmVolCurve {
    pub fn new(times: Vec<f64>, vols: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != vols.len() {
            return Err(EngineError::invalid("ATM curve needs matching non-empty vectors"));
        }
        for w in times.windows(2) {
            if w[1] <= w[0] {
                return Err(EngineError::invalid("ATM curve times must be strictly increasing"));
            }
        }
        if times[0] <= 0.0 {
            return Err(EngineError::invalid("ATM curve times must be positive"));
        }
        if vols.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(EngineError::invalid("ATM curve vols must be positive"));
        }
        Ok(Self { times, vols })
    }

    pub fn flat(vol: f64) -> Self {
        Self::new(vec![1.0], vec![vol]).expect("flat curve is valid")
    }

    /// sigma(t, 1).
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.vols[0];
        }
        if t >= self.times[n - 1] {
            return self.vols[n - 1];
        }
        let i = self.times.partition_point(|&v| v < t);
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let (w0, w1) = (
            self.vols[i - 1] * self.vols[i - 1] * t0,
            self.vols[i] * self.vols[i] * t1,
        );
        let w = w0 + (w1 - w0) * (t - t0) / (t1 - t0);
        (w / t).sqrt()
    }
}

/// ATM implied-vol curve from a single forward sweep covering all of
/// `times` (the curve is cached on the solver's step grid, which refines
/// the requested times).
pub fn atm_vol_curve(
    surface: &LocalVolSurface,
    grid: &PdeGrid,
    times: &[f64],
) -> Result<AtmVolCurve> {
    let horizon = times
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if !(horizon > 0.0) {
        return Err(EngineError::invalid("ATM curve needs a positive horizon"));
    }
    let sorted_times: Vec<f64> = {
        let mut v: Vec<f64> = times.iter().copied().filter(|&t| t > 0.0).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        v
    };
    let sol = solve_forward(surface, grid, &sorted_times, horizon)?;
    let mut ts = Vec::with_capacity(sol.step_times.len());
    let mut vols = Vec::with_capacity(sol.step_times.len());
    for (&t, &price) in sol.step_times.iter().zip(&sol.atm_prices) {
        let vol = implied_vol(price, 1.0, 1.0, t, 1.0, OptionKind::Call).map_err(|e| {
            EngineError::NumericalFailure(format!("ATM inversion failed at t={t}: {e}"))
        })?;
        ts.push(t);
        vols.push(vol);
    }
    AtmVolCurve::new(ts, vols)
}

/// Four-point Lagrange interpolation on a uniform grid (falls back to the
/// boundary cells at the ends).
fn interp_cubic(us: &[f64], cs: &[f64], u: f64) -> f64 {
    let n = us.len();
    let du = us[1] - us[0];
    if u <= us[0] {
        return cs[0];
    }
    if u >= us[n - 1] {
        return cs[n - 1];
    }
    let pos = (u - us[0]) / du;
    let i = (pos as usize).min(n - 2);
    if i == 0 || i + 2 >= n {
        // Linear at the very edges.
        let w = pos - i as f64;
        return cs[i] * (1.0 - w) + cs[i + 1] * w;
    }
    let x = pos - i as f64; // in [0, 1)
    let (c0, c1, c2, c3) = (cs[i - 1], cs[i], cs[i + 1], cs[i + 2]);
    // Lagrange weights for nodes at -1, 0, 1, 2.
    let w0 = -x * (x - 1.0) * (x - 2.0) / 6.0;
    let w1 = (x + 1.0) * (x - 1.0) * (x - 2.0) / 2.0;
    let w2 = -(x + 1.0) * x * (x - 2.0) / 2.0;
    let w3 = (x + 1.0) * x * (x - 1.0) / 6.0;
    w0 * c0 + w1 * c1 + w2 * c2 + w3 * c3
}
