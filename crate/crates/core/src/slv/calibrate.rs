//! Particle-method leverage calibration for one factor.
//!
//! The factor is simulated driftless under its own measure with the
//! leverage built slice by slice: at each step the conditional variance
//! E[v | level] is kernel-regressed over the particle cloud and the slice
//! is `l(t, k) = eta(t, k) / sqrt(E[v | k])`, which matches the pure
//! local-vol marginals by construction. Slices are stored as a surface
//! that is piecewise constant over each step.

use rayon::prelude::*;

use crate::error::{EngineError, Result};
use crate::localvol::LocalVolSurface;
use crate::math::{normal_pair, NwRegression};
use crate::mcengine::CHUNK;

use super::{LeverageSurface, VarianceSpec};

#[derive(Debug, Clone)]
pub struct LeverageCalibConfig {
    pub n_particles: usize,
    pub steps_per_year: usize,
    pub horizon: f64,
    pub seed: u64,
    /// Kernel bandwidth multiplier, as in the simulation engine.
    pub bandwidth_c: f64,
    /// Strikes per slice for the regressed conditional variance.
    pub nodes_per_slice: usize,
    /// Conditional-variance estimates below this floor are an error.
    pub variance_floor: f64,
}

impl LeverageCalibConfig {
    pub fn new(horizon: f64, seed: u64) -> Self {
        Self {
            n_particles: 50_000,
            steps_per_year: 24,
            horizon,
            seed,
            bandwidth_c: 1.5,
            nodes_per_slice: 41,
            variance_floor: 1e-10,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_particles < 1000 {
            return Err(EngineError::invalid(format!(
                "leverage calibration needs at least 1000 particles, got {}",
                self.n_particles
            )));
        }
        if self.steps_per_year < 12 {
            return Err(EngineError::invalid(format!(
                "leverage calibration needs at least 12 steps per year, got {}",
                self.steps_per_year
            )));
        }
        if !(self.horizon > 0.0) {
            return Err(EngineError::invalid("leverage horizon must be positive"));
        }
        if self.nodes_per_slice < 3 {
            return Err(EngineError::invalid("leverage slices need at least 3 nodes"));
        }
        Ok(())
    }
}

/// Calibrates the leverage surface of one factor against its local-vol
/// surface under the given variance process.
pub fn calibrate_leverage(
    local_vol: &LocalVolSurface,
    spec: &VarianceSpec,
    config: &LeverageCalibConfig,
) -> Result<LeverageSurface> {
    spec.validate()?;
    config.validate()?;

    let n = config.n_particles;
    let spy = config.steps_per_year as f64;
    let n_steps = ((config.horizon * spy - 1e-9).ceil() as usize).max(1);
    let mut times: Vec<f64> = (1..=n_steps)
        .map(|i| (i as f64 / spy).min(config.horizon))
        .collect();
    times.extend(
        local_vol
            .maturities()
            .iter()
            .copied()
            .filter(|&m| m < config.horizon - 1e-12),
    );
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let mut log_level = vec![0.0f64; n];
    let mut variance = vec![spec.initial_variance; n];
    let mut rows: Vec<(f64, Vec<(f64, f64)>)> = Vec::with_capacity(times.len());

    let mut prev_t = 0.0;
    for &t_next in &times {
        let dt = t_next - prev_t;
        let sqrt_dt = dt.sqrt();
        let t_mid = 0.5 * (prev_t + t_next);

        // Slice for the regime (prev_t, t_next].
        let slice = build_slice(local_vol, &log_level, &variance, t_mid, config)?;
        let slice_surface = LocalVolSurface::new(vec![(t_next, slice.clone())])?;

        let step_idx = rows.len() as u64;
        let seed = config.seed;
        let r = spec.price_corr;
        let spec_c = *spec;
        log_level
            .par_chunks_mut(CHUNK)
            .zip(variance.par_chunks_mut(CHUNK))
            .enumerate()
            .for_each(|(ci, (lc, vc))| {
                let base = ci * CHUNK;
                for i in 0..lc.len() {
                    let p = (base + i) as u64;
                    let (z1, z2) = normal_pair(seed, p, step_idx, 0);
                    let vol = slice_surface.eval(t_next, lc[i].exp()) * vc[i].max(0.0).sqrt();
                    lc[i] += -0.5 * vol * vol * dt + vol * sqrt_dt * z1;
                    let z_v = r * z1 + (1.0 - r * r).max(0.0).sqrt() * z2;
                    vc[i] = spec_c.step(vc[i], dt, sqrt_dt, z_v);
                }
            });
        if let Some(p) = log_level.iter().position(|v| !v.is_finite()) {
            return Err(EngineError::NumericalFailure(format!(
                "non-finite particle {p} in leverage calibration at t={t_next}"
            )));
        }

        rows.push((t_next, slice));
        prev_t = t_next;
    }

    LocalVolSurface::new(rows)
}

/// One leverage slice: nodes over the particle range, values
/// eta(t, k) / sqrt(E[v | k]).
fn build_slice(
    local_vol: &LocalVolSurface,
    log_level: &[f64],
    variance: &[f64],
    t_mid: f64,
    config: &LeverageCalibConfig,
) -> Result<Vec<(f64, f64)>> {
    let n = log_level.len() as f64;
    let mean_u = log_level.par_iter().copied().par_fold_sum() / n;
    let ss = log_level
        .par_chunks(CHUNK)
        .map(|c| c.iter().map(|u| (u - mean_u) * (u - mean_u)).sum::<f64>())
        .collect::<Vec<_>>()
        .iter()
        .sum::<f64>();
    let sd_u = (ss / (n - 1.0).max(1.0)).sqrt();

    let truncated: Vec<f64> = variance.iter().map(|v| v.max(0.0)).collect();

    if sd_u < 1e-12 {
        // Point mass (the initial step): conditional expectation is the
        // plain mean.
        let mean_v = truncated.iter().sum::<f64>() / n;
        if mean_v < config.variance_floor {
            return Err(EngineError::DegenerateEstimate(format!(
                "conditional variance {mean_v} below floor at t={t_mid}"
            )));
        }
        let k = log_level[0].exp();
        return Ok(vec![(k, local_vol.eval(t_mid, k) / mean_v.sqrt())]);
    }

    let h = config.bandwidth_c * sd_u * n.powf(-0.2);
    let lo = mean_u - 2.576 * sd_u;
    let hi = mean_u + 2.576 * sd_u;
    let reg = NwRegression::fit(log_level, &[&truncated], h, lo, hi, 512)?;

    let m = config.nodes_per_slice;
    let mut nodes = Vec::with_capacity(m);
    let mut out = [0.0f64];
    for j in 0..m {
        let u = lo + (hi - lo) * j as f64 / (m - 1) as f64;
        reg.eval_into(u, &mut out);
        let cond_var = out[0];
        if cond_var < config.variance_floor {
            return Err(EngineError::DegenerateEstimate(format!(
                "conditional variance {cond_var} below floor at t={t_mid}, level {}",
                u.exp()
            )));
        }
        let k = u.exp();
        nodes.push((k, local_vol.eval(t_mid, k) / cond_var.sqrt()));
    }
    Ok(nodes)
}

trait ParFoldSum {
    fn par_fold_sum(self) -> f64;
}

impl<'a, I> ParFoldSum for I
where
    I: rayon::iter::IndexedParallelIterator<Item = f64> + 'a,
{
    fn par_fold_sum(self) -> f64 {
        self.chunks(CHUNK)
            .map(|c| c.iter().sum::<f64>())
            .collect::<Vec<_>>()
            .iter()
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn unit_variance_returns_local_vol_exactly_at_nodes() {
        let eta = LocalVolSurface::new(vec![(
            1.0,
            vec![(0.8, 0.26), (1.0, 0.22), (1.2, 0.19)],
        )])
        .unwrap();
        let cfg = LeverageCalibConfig {
            n_particles: 4_000,
            ..LeverageCalibConfig::new(0.5, 42)
        };
        let lev = calibrate_leverage(&eta, &VarianceSpec::unit(), &cfg).unwrap();
        // E[v | k] is exactly 1, so every node is eta evaluated there.
        for (i, &t) in lev.maturities().iter().enumerate() {
            for (&k, &l) in lev.node_strikes(i).iter().zip(lev.node_values(i)) {
                assert_eq!(l, eta.eval(t, k), "node (t={t}, k={k})");
            }
        }
    }

    #[test]
    fn leverage_counteracts_conditional_variance() {
        // With vol-of-variance > 0 and v0 = long-run = 1, E[v|k] stays near
        // 1 on average, so leverage stays near eta overall; node noise
        // shrinks with more particles.
        let eta = LocalVolSurface::flat(0.2);
        let spec = VarianceSpec {
            mean_reversion: 2.0,
            long_run_variance: 1.0,
            vol_of_variance: 0.5,
            initial_variance: 1.0,
            price_corr: -0.5,
        };
        let run = |particles: usize, seed: u64| -> f64 {
            let cfg = LeverageCalibConfig {
                n_particles: particles,
                ..LeverageCalibConfig::new(1.0, seed)
            };
            let lev = calibrate_leverage(&eta, &spec, &cfg).unwrap();
            let last = lev.maturities().len() - 1;
            // RMS deviation of l * sqrt(E[v]) ~ eta at the last slice.
            let vals = lev.node_values(last);
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64)
                .sqrt()
        };
        let coarse = run(8_000, 11);
        let fine = run(32_000, 11);
        assert!(
            fine < coarse,
            "node noise should shrink with particles: {coarse} -> {fine}"
        );
    }

    #[test]
    fn degenerate_estimate_detected() {
        let eta = LocalVolSurface::flat(0.2);
        // Variance collapses towards zero long-run with no noise: the
        // conditional estimate dives below any reasonable floor.
        let spec = VarianceSpec {
            mean_reversion: 50.0,
            long_run_variance: 1e-14,
            vol_of_variance: 0.0,
            initial_variance: 1e-12,
            price_corr: 0.0,
        };
        let mut cfg = LeverageCalibConfig::new(1.0, 3);
        cfg.n_particles = 2_000;
        cfg.variance_floor = 1e-8;
        let err = calibrate_leverage(&eta, &spec, &cfg).unwrap_err();
        assert!(matches!(err, EngineError::DegenerateEstimate(_)));
    }

    #[test]
    fn flat_local_vol_gives_leverage_near_inverse_root_variance_at_start() {
        let eta = LocalVolSurface::flat(0.2);
        let spec = VarianceSpec {
            mean_reversion: 1.5,
            long_run_variance: 1.0,
            vol_of_variance: 0.4,
            initial_variance: 0.64,
            price_corr: 0.0,
        };
        let cfg = LeverageCalibConfig {
            n_particles: 4_000,
            ..LeverageCalibConfig::new(0.25, 9)
        };
        let lev = calibrate_leverage(&eta, &spec, &cfg).unwrap();
        // First slice: point mass at v0 = 0.64, so l = 0.2 / 0.8 = 0.25.
        assert_abs_diff_eq!(lev.node_values(0)[0], 0.25, epsilon = 1e-12);
    }
}
