//! Joint calibration of quanto corrections and composite quotes through
//! the drift-field split theta = theta_z + theta_r (experimental).
//!
//! theta(t, s, x) := rho eta psi. Its z-projection theta_z is pinned by the
//! composite surface; the residual theta_r is pinned only through the
//! cross-sectional constraint E[s theta_r] = -dq/dt - E[s theta_z], here
//! realized as kappa(t) (1 - s) exp(-s) / p(s, x) with the joint density
//! estimated by a binned bivariate kernel in (log s, log x). Nothing
//! guarantees the recovered correlation stays inside [-1, 1]; the module
//! clips and reports, never corrects.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};
use crate::localvol::LocalVolSurface;
use crate::marketdata::MarketSnapshot;
use crate::math::BinnedKde2d;
use crate::mcengine::rho::{det_mean_sd, det_sum, rho_lv2_from_conditional, CompositeConditional};
use crate::mcengine::{
    clip, step, CorrelationField, Observation, RhoField, SimConfig, SimInputs, SimOutput,
    SimState, StepRecord, Strategy, CHUNK,
};
use crate::quantomark::QuantoMark;

/// Density estimator and residual-field settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointConfig {
    /// Bins per coordinate of the joint density grid.
    pub kde_bins: usize,
    /// Density floor relative to the estimated mode; paths below it get
    /// theta_r = 0 and are flagged.
    pub density_floor_rel: f64,
    /// Forces kappa to a fixed value instead of calibrating it per step
    /// (kappa = 0 reduces the scheme to the plain composite strategy).
    pub kappa_override: Option<f64>,
}

impl Default for JointConfig {
    fn default() -> Self {
        Self {
            kde_bins: 128,
            density_floor_rel: 1e-8,
            kappa_override: None,
        }
    }
}

/// Per-step diagnostics of the joint scheme.
#[derive(Debug, Clone, Copy)]
pub struct ThetaStepRecord {
    pub time: f64,
    pub kappa: f64,
    pub kappa_se: f64,
    pub clip_fraction: f64,
    pub flagged_paths: u64,
}

/// Diagnostics of a joint run: kappa term structure plus the estimator
/// configuration that produced it.
#[derive(Debug, Clone)]
pub struct ThetaSplit {
    pub steps: Vec<ThetaStepRecord>,
    pub config: JointConfig,
}

impl ThetaSplit {
    pub const CSV_HEADER: &'static str = "time_yf,kappa,kappa_se,clip_fraction,flagged_paths";

    pub fn csv_rows(&self) -> Vec<String> {
        use crate::pricing::fmt_sig10;
        self.steps
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{}",
                    fmt_sig10(r.time),
                    fmt_sig10(r.kappa),
                    fmt_sig10(r.kappa_se),
                    fmt_sig10(r.clip_fraction),
                    r.flagged_paths
                )
            })
            .collect()
    }
}

/// Per-path theta_z(t, z) = E[phi^2 - eta^2 - psi^2 | z] / 2, kernel
/// regressed over the cross-section; phi^2 is a function of z and passes
/// through the conditioning unchanged.
pub fn theta_z(
    phi: &LocalVolSurface,
    eta: &LocalVolSurface,
    psi: &LocalVolSurface,
    state: &SimState,
    t: f64,
    bandwidth_c: f64,
) -> Result<Vec<f64>> {
    let (log_z, cond) = fit_conditional(state, eta, psi, t, bandwidth_c)?;
    Ok(theta_z_from_conditional(phi, &log_z, &cond, t))
}

fn fit_conditional(
    state: &SimState,
    eta: &LocalVolSurface,
    psi: &LocalVolSurface,
    t: f64,
    bandwidth_c: f64,
) -> Result<(Vec<f64>, CompositeConditional)> {
    let n = state.n_paths();
    let mut log_z = vec![0.0; n];
    let mut sumsq = vec![0.0; n];
    let mut prod = vec![0.0; n];
    let (s_ref, x_ref) = (&state.s, &state.x);
    log_z
        .par_chunks_mut(CHUNK)
        .zip(sumsq.par_chunks_mut(CHUNK))
        .zip(prod.par_chunks_mut(CHUNK))
        .enumerate()
        .for_each(|(ci, ((lz, sq), pr))| {
            let base = ci * CHUNK;
            for i in 0..lz.len() {
                let s = s_ref[base + i];
                let x = x_ref[base + i];
                let es = eta.eval(t, s);
                let ex = psi.eval(t, x);
                lz[i] = (x * s).ln();
                sq[i] = es * es + ex * ex;
                pr[i] = es * ex;
            }
        });
    let cond = CompositeConditional::fit(&log_z, &sumsq, &prod, bandwidth_c)?;
    Ok((log_z, cond))
}

fn theta_z_from_conditional(
    phi: &LocalVolSurface,
    log_z: &[f64],
    cond: &CompositeConditional,
    t: f64,
) -> Vec<f64> {
    log_z
        .par_iter()
        .map(|&u| {
            let (csq, _) = cond.eval(u);
            let p = phi.eval(t, u.exp());
            0.5 * (p * p - csq)
        })
        .collect()
}

/// kappa(t) = dq/dt + E[s theta_z(t, x s)], with the sampling uncertainty
/// of the cross-sectional mean.
pub fn kappa(mark: &QuantoMark, state: &SimState, theta_z: &[f64], t: f64) -> (f64, f64) {
    let pairs: Vec<(f64, f64)> = state
        .s
        .iter()
        .copied()
        .zip(theta_z.iter().copied())
        .collect();
    let (mean, sd) = det_mean_sd(&pairs, |(s, th)| s * th);
    let dq = mark.q(t) * mark.dlog_q(t);
    (dq + mean, sd / (pairs.len() as f64).sqrt())
}

/// Residual field theta_r = kappa (1 - s) exp(-s) / p(s, x) on the current
/// cross-section. Returns per-path values and the count of paths flagged
/// by the density floor (their theta_r is zeroed).
pub fn theta_r(
    state: &SimState,
    kappa: f64,
    config: &JointConfig,
) -> Result<(Vec<f64>, u64)> {
    let n = state.n_paths();
    let log_s: Vec<f64> = state.s.iter().map(|&s| s.ln()).collect();
    let log_x: Vec<f64> = state.x.iter().map(|&x| x.ln()).collect();
    let (_, sd_s) = det_mean_sd(&log_s, |v| *v);
    let (_, sd_x) = det_mean_sd(&log_x, |v| *v);
    if sd_s < 1e-12 || sd_x < 1e-12 {
        // Degenerate cross-section (the initial point mass): s = 1 makes
        // (1 - s) exp(-s) vanish identically.
        return Ok((vec![0.0; n], 0));
    }
    let nf = n as f64;
    let h_s = 1.5 * sd_s * nf.powf(-0.2);
    let h_x = 1.5 * sd_x * nf.powf(-0.2);
    let kde = BinnedKde2d::fit(&log_s, &log_x, h_s, h_x, config.kde_bins)?;
    let floor_log_density = config.density_floor_rel * kde.max_density();

    let mut values = vec![0.0; n];
    let flagged: u64 = values
        .par_chunks_mut(CHUNK)
        .enumerate()
        .map(|(ci, vc)| {
            let base = ci * CHUNK;
            let mut flags = 0u64;
            for (i, v) in vc.iter_mut().enumerate() {
                let p = base + i;
                let s = state.s[p];
                let x = state.x[p];
                // KDE lives in (log s, log x); the level-space density
                // carries the 1/(s x) Jacobian.
                let density = kde.eval(log_s[p], log_x[p]) / (s * x);
                let floor = floor_log_density / (s * x);
                if density <= floor || density <= 0.0 {
                    *v = 0.0;
                    flags += 1;
                } else {
                    *v = kappa * (1.0 - s) * (-s).exp() / density;
                }
            }
            flags
        })
        .sum();
    Ok((values, flagged))
}

/// Joint simulation: at each step theta_z comes from the composite surface
/// (identically to the LV2 strategy), kappa is calibrated from the mark,
/// and the residual is added through its pathwise eta psi division before
/// clipping.
pub fn simulate_joint(
    config: &SimConfig,
    inputs: &SimInputs,
    joint: &JointConfig,
) -> Result<(SimOutput, ThetaSplit)> {
    config.validate()?;
    // The joint scheme needs everything LV2 needs plus the mark.
    inputs.validate(Strategy::Lv2)?;
    if inputs.mark.is_none() && joint.kappa_override.is_none() {
        return Err(EngineError::Configuration(
            "joint calibration requires a quanto mark (or a kappa override)".into(),
        ));
    }
    let eta = inputs.eta.expect("validated");
    let psi = inputs.psi.expect("validated");
    let phi = inputs.phi.expect("validated");

    let times = crate::mcengine::engine::build_time_grid(config, inputs);
    let mut state = SimState::new(config.n_paths, config.seed);
    let mut vols = vec![(0.0f64, 0.0f64); config.n_paths];
    let mut observations = Vec::new();
    let mut steps = Vec::new();
    let mut records = Vec::new();

    let mut prev_t = 0.0;
    for &t_next in &times {
        let dt = t_next - prev_t;
        let t_mid = 0.5 * (prev_t + t_next);
        crate::mcengine::engine::compute_effective_vols(
            &state,
            inputs,
            Strategy::Lv2,
            t_mid,
            &mut vols,
        );
        let (log_z, cond) = crate::mcengine::engine::composite_conditional_parts(
            &state,
            inputs,
            &vols,
            t_mid,
            config.bandwidth_c,
        )?;
        let (z_part, base_floored) =
            rho_lv2_from_conditional(phi, &log_z, &cond, t_mid, config.eps_vol)?;

        let theta_z_vals = theta_z_from_conditional(phi, &log_z, &cond, t_mid);
        let (kappa_hat, kappa_se) = match joint.kappa_override {
            Some(k) => (k, 0.0),
            None => kappa(inputs.mark.expect("checked"), &state, &theta_z_vals, prev_t),
        };
        let (theta_r_vals, flagged) = theta_r(&state, kappa_hat, joint)?;

        let eps = config.eps_vol;
        let mut clipped_count = 0u64;
        let mut floored = base_floored;
        let values: Vec<f64> = (0..state.n_paths())
            .map(|p| {
                let (vs, vx) = vols[p];
                let fl = vs < eps || vx < eps;
                floored += fl as u64;
                let denom = vs.max(eps) * vx.max(eps);
                let raw = z_part[p] + theta_r_vals[p] / denom;
                let (v, c) = clip(raw);
                clipped_count += c as u64;
                v
            })
            .collect();
        let field = CorrelationField {
            evals: values.len() as u64,
            values: RhoField::PerPath(values),
            clipped: clipped_count,
            floored,
        };

        records.push(ThetaStepRecord {
            time: prev_t,
            kappa: kappa_hat,
            kappa_se,
            clip_fraction: field.clip_fraction(),
            flagged_paths: flagged,
        });
        let (rho_mean, rho_se) = match &field.values {
            RhoField::PerPath(vs) => {
                let (m, sd) = det_mean_sd(vs, |v| *v);
                (m, sd / (vs.len() as f64).sqrt())
            }
            RhoField::Scalar(v) => (*v, 0.0),
        };
        steps.push(StepRecord {
            time: prev_t,
            dt,
            rho_mean,
            rho_se,
            clip_fraction: field.clip_fraction(),
            floored_fraction: field.floored as f64 / field.evals.max(1) as f64,
        });

        step(&mut state, dt, &field, eta, psi)?;
        if let Some(&obs_t) = config
            .observation_times
            .iter()
            .find(|&&o| (o - t_next).abs() < 1e-12)
        {
            observations.push(Observation {
                time: obs_t,
                s: state.s.clone(),
                x: state.x.clone(),
            });
        }
        prev_t = t_next;
    }

    Ok((
        SimOutput {
            strategy: Strategy::Lv2,
            n_paths: config.n_paths,
            seed: config.seed,
            observations,
            steps,
            total_rho_evals: state.rho_evals,
            total_clipped: state.clipped,
            total_floored: state.floored_vols,
        },
        ThetaSplit {
            steps: records,
            config: joint.clone(),
        },
    ))
}

/// Weighted structural residual E[s theta_r] with uncertainty; by
/// construction of kappa it re-balances the quanto constraint.
pub fn weighted_residual(state: &SimState, theta_r: &[f64]) -> (f64, f64) {
    let pairs: Vec<(f64, f64)> = state
        .s
        .iter()
        .copied()
        .zip(theta_r.iter().copied())
        .collect();
    let (mean, sd) = det_mean_sd(&pairs, |(s, th)| s * th);
    (mean, sd / (pairs.len() as f64).sqrt())
}

/// Kernel-regressed E[theta_r | z] on a grid of evaluation points; the
/// structural constraint says it should vanish.
pub fn conditional_residual(
    state: &SimState,
    theta_r: &[f64],
    bandwidth_c: f64,
    n_eval: usize,
) -> Result<Vec<(f64, f64)>> {
    let log_z: Vec<f64> = state
        .s
        .iter()
        .zip(&state.x)
        .map(|(&s, &x)| (x * s).ln())
        .collect();
    let n = log_z.len() as f64;
    let (mean_u, sd_u) = det_mean_sd(&log_z, |u| *u);
    if sd_u < 1e-12 {
        let m = det_sum(theta_r, |v| *v) / n;
        return Ok(vec![(mean_u.exp(), m)]);
    }
    let h = bandwidth_c * sd_u * n.powf(-0.2);
    let lo = mean_u - 2.0 * sd_u;
    let hi = mean_u + 2.0 * sd_u;
    let reg = crate::math::NwRegression::fit(&log_z, &[theta_r], h, lo, hi, 512)?;
    let mut out = Vec::with_capacity(n_eval);
    let mut buf = [0.0f64];
    for j in 0..n_eval {
        let u = lo + (hi - lo) * j as f64 / (n_eval - 1).max(1) as f64;
        reg.eval_into(u, &mut buf);
        out.push((u.exp(), buf[0]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localvol::AtmVolCurve;
    use crate::mcengine::simulate;
    use crate::quantomark::QuantoCorrelationCurve;
    use approx::assert_abs_diff_eq;

    const GAMMA: f64 = -0.30;
    const VOL_S: f64 = 0.2;
    const VOL_X: f64 = 0.1;

    fn consistent_phi() -> LocalVolSurface {
        // phi^2 = eta^2 + psi^2 + 2 gamma eta psi: composite and quanto
        // markets implied by the same constant correlation.
        LocalVolSurface::flat(
            (VOL_S * VOL_S + VOL_X * VOL_X + 2.0 * GAMMA * VOL_S * VOL_X).sqrt(),
        )
    }

    fn flat_mark(gamma: f64) -> QuantoMark {
        QuantoMark::build(
            QuantoCorrelationCurve::flat(gamma).unwrap(),
            &AtmVolCurve::flat(VOL_S),
            &AtmVolCurve::flat(VOL_X),
            2.0,
            1.0 / 365.0,
        )
        .unwrap()
    }

    fn evolved_state(n: usize, seed: u64) -> SimState {
        // March a cross-section out to t = 0.5 under the consistent fixture.
        let eta = LocalVolSurface::flat(VOL_S);
        let psi = LocalVolSurface::flat(VOL_X);
        let mut state = SimState::new(n, seed);
        let field = CorrelationField::scalar(GAMMA);
        for _ in 0..6 {
            step(&mut state, 0.5 / 6.0, &field, &eta, &psi).unwrap();
        }
        state
    }

    #[test]
    fn theta_z_is_constant_on_the_constants_fixture() {
        let state = evolved_state(20_000, 3);
        let vals = theta_z(
            &consistent_phi(),
            &LocalVolSurface::flat(VOL_S),
            &LocalVolSurface::flat(VOL_X),
            &state,
            0.5,
            1.5,
        )
        .unwrap();
        for &v in vals.iter().step_by(499) {
            assert_abs_diff_eq!(v, GAMMA * VOL_S * VOL_X, epsilon = 1e-12);
        }
    }

    #[test]
    fn theta_z_vanishes_without_covariance_gap() {
        let phi0 = LocalVolSurface::flat((VOL_S * VOL_S + VOL_X * VOL_X).sqrt());
        let state = evolved_state(10_000, 5);
        let vals = theta_z(
            &phi0,
            &LocalVolSurface::flat(VOL_S),
            &LocalVolSurface::flat(VOL_X),
            &state,
            0.5,
            1.5,
        )
        .unwrap();
        for &v in vals.iter().step_by(991) {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn kappa_vanishes_on_consistent_markets_and_detects_tension() {
        let state = evolved_state(50_000, 11);
        let eta = LocalVolSurface::flat(VOL_S);
        let psi = LocalVolSurface::flat(VOL_X);
        let mark = flat_mark(GAMMA);

        let vals = theta_z(&consistent_phi(), &eta, &psi, &state, 0.5, 1.5).unwrap();
        let (k, se) = kappa(&mark, &state, &vals, 0.5);
        assert!(k.abs() < 3.0 * se, "kappa = {k} +- {se}");

        // Composite implying rho = -0.5 against a -0.3 mark: kappa must
        // detect the tension with a negative sign of size (rho_c - gamma)
        // * eta * psi * q.
        let phi_tense = LocalVolSurface::flat(
            (VOL_S * VOL_S + VOL_X * VOL_X + 2.0 * (-0.5) * VOL_S * VOL_X).sqrt(),
        );
        let vals = theta_z(&phi_tense, &eta, &psi, &state, 0.5, 1.5).unwrap();
        let (k, se) = kappa(&mark, &state, &vals, 0.5);
        let expected = (-0.5 - GAMMA) * VOL_S * VOL_X * mark.q(0.5);
        assert!(k < 0.0);
        assert!(
            (k - expected).abs() < 3.0 * se + 1e-6,
            "kappa {k} vs analytic {expected}"
        );
    }

    #[test]
    fn theta_r_zero_kappa_is_identically_zero() {
        let state = evolved_state(5_000, 7);
        let (vals, flagged) = theta_r(&state, 0.0, &JointConfig::default()).unwrap();
        assert_eq!(flagged, 0);
        assert!(vals.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn theta_r_satisfies_both_constraints_within_noise() {
        let state = evolved_state(50_000, 13);
        let eta = LocalVolSurface::flat(VOL_S);
        let psi = LocalVolSurface::flat(VOL_X);
        let mark = flat_mark(GAMMA);
        // Force a visibly nonzero kappa with a tense composite surface.
        let phi_tense = LocalVolSurface::flat(
            (VOL_S * VOL_S + VOL_X * VOL_X + 2.0 * (-0.45) * VOL_S * VOL_X).sqrt(),
        );
        let vals = theta_z(&phi_tense, &eta, &psi, &state, 0.5, 1.5).unwrap();
        let (k, _) = kappa(&mark, &state, &vals, 0.5);
        let (tr, flagged) = theta_r(&state, k, &JointConfig::default()).unwrap();
        assert!(flagged < state.n_paths() as u64 / 100);

        // Weighted constraint: E[s theta_r] = -dq/dt - E[s theta_z] = -kappa.
        let (wr, wr_se) = weighted_residual(&state, &tr);
        assert!(
            (wr + k).abs() < 3.0 * wr_se.max(1e-5) + 0.2 * k.abs(),
            "E[s theta_r] = {wr} vs -kappa = {}",
            -k
        );

        // Structural constraint: E[theta_r | z] centered near zero in the
        // bulk, small against the residual scale max|theta_r|.
        let cond = conditional_residual(&state, &tr, 1.5, 21).unwrap();
        let scale = tr.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        for &(z, v) in &cond {
            assert!(
                v.abs() <= 0.25 * scale + 1e-8,
                "E[theta_r | z={z}] = {v}, scale {scale}"
            );
        }
    }

    #[test]
    fn zero_kappa_joint_equals_lv2_exactly() {
        let eta = LocalVolSurface::flat(VOL_S);
        let psi = LocalVolSurface::flat(VOL_X);
        let phi = consistent_phi();
        let mark = flat_mark(GAMMA);
        let inputs = SimInputs {
            mark: Some(&mark),
            eta: Some(&eta),
            psi: Some(&psi),
            phi: Some(&phi),
            ..Default::default()
        };
        let config = SimConfig::new(Strategy::Lv2, 5_000, 99, vec![0.5, 1.0]);
        let plain = simulate(&config, &inputs).unwrap();
        let joint_cfg = JointConfig {
            kappa_override: Some(0.0),
            ..Default::default()
        };
        let (joint, split) = simulate_joint(&config, &inputs, &joint_cfg).unwrap();

        for (a, b) in plain.observations.iter().zip(&joint.observations) {
            assert_eq!(a.s, b.s, "asset paths must agree bit for bit");
            assert_eq!(a.x, b.x, "fx paths must agree bit for bit");
        }
        for (a, b) in plain.steps.iter().zip(&joint.steps) {
            assert_eq!(a.rho_mean, b.rho_mean);
        }
        assert!(split.steps.iter().all(|r| r.kappa == 0.0));
    }

    #[test]
    fn joint_diagnostics_on_consistent_fixture() {
        let eta = LocalVolSurface::flat(VOL_S);
        let psi = LocalVolSurface::flat(VOL_X);
        let phi = consistent_phi();
        let mark = flat_mark(GAMMA);
        let inputs = SimInputs {
            mark: Some(&mark),
            eta: Some(&eta),
            psi: Some(&psi),
            phi: Some(&phi),
            ..Default::default()
        };
        let config = SimConfig::new(Strategy::Lv2, 20_000, 123, vec![1.0]);
        let (out, split) = simulate_joint(&config, &inputs, &JointConfig::default()).unwrap();
        for rec in &split.steps {
            assert!(
                rec.kappa.abs() <= 3.0 * rec.kappa_se.max(1e-9),
                "t={}: kappa {} +- {}",
                rec.time,
                rec.kappa,
                rec.kappa_se
            );
        }
        // Calibration fidelity carries over: E[s_1] = q(1).
        let obs = out.observation_at(1.0).unwrap();
        let (mean, sd) = det_mean_sd(&obs.s, |s| *s);
        let se = sd / (obs.s.len() as f64).sqrt();
        assert!((mean - mark.q(1.0)).abs() < 3.0 * se);
        // CSV rows carry the pinned column count.
        let rows = split.csv_rows();
        assert!(rows[0].split(',').count() == 5);
    }

    #[test]
    fn snapshot_roundtrip_not_required_for_joint() {
        // Guard: simulate_joint without a mark and without an override is a
        // configuration error.
        let eta = LocalVolSurface::flat(VOL_S);
        let psi = LocalVolSurface::flat(VOL_X);
        let phi = consistent_phi();
        let inputs = SimInputs {
            eta: Some(&eta),
            psi: Some(&psi),
            phi: Some(&phi),
            ..Default::default()
        };
        let config = SimConfig::new(Strategy::Lv2, 2_000, 1, vec![1.0]);
        let err = simulate_joint(&config, &inputs, &JointConfig::default()).unwrap_err();
        assert!(matches!(err, EngineError::Configuration(_)));
        let _ = MarketSnapshot::clone; // keep the import honest
    }
}
