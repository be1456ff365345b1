//! Correlation strategy evaluations.
//!
//! Raw values come from the calibration constraint; the engine clips them
//! to [-1, 1] and accounts for every clip. Cross-sectional reductions sum
//! fixed-size chunks in index order so results are identical for any
//! worker count.

use rayon::prelude::*;

use crate::error::{EngineError, Result};
use crate::localvol::{AtmVolCurve, LocalVolSurface};
use crate::math::NwRegression;
use crate::quantomark::QuantoMark;

use super::{SimState, CHUNK};

/// Regression grid resolution for conditional expectations in log z.
const NW_BINS: usize = 512;
/// Evaluation range half-width in sample standard deviations (99% mass).
const NW_RANGE_STDEVS: f64 = 2.576;
/// Minimum kernel mass anywhere in the evaluation range.
const NW_MIN_EFFECTIVE: f64 = 50.0;

/// Ordered-chunk sum: deterministic under any parallel schedule.
pub(crate) fn det_sum<T: Sync, F>(items: &[T], f: F) -> f64
where
    F: Fn(&T) -> f64 + Sync,
{
    items
        .par_chunks(CHUNK)
        .map(|chunk| chunk.iter().map(&f).sum::<f64>())
        .collect::<Vec<_>>()
        .iter()
        .sum()
}

/// Mean and unbiased-ish standard deviation via ordered two-pass sums.
pub(crate) fn det_mean_sd<T: Sync, F>(items: &[T], f: F) -> (f64, f64)
where
    F: Fn(&T) -> f64 + Sync,
{
    let n = items.len() as f64;
    let mean = det_sum(items, &f) / n;
    if items.len() < 2 {
        return (mean, 0.0);
    }
    let ss = det_sum(items, |it| {
        let d = f(it) - mean;
        d * d
    });
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Black-Scholes approximation: rho_BS(t) = -d/dt log q / (sigma_S sigma_X),
/// raw (unclipped).
pub fn rho_bs(
    mark: &QuantoMark,
    atm_asset: &AtmVolCurve,
    atm_fx: &AtmVolCurve,
    t: f64,
    eps_vol: f64,
) -> Result<f64> {
    rho_bs_with_rate(mark.dlog_q(t), atm_asset, atm_fx, t, eps_vol)
}

pub(crate) fn rho_bs_with_rate(
    dlog_q: f64,
    atm_asset: &AtmVolCurve,
    atm_fx: &AtmVolCurve,
    t: f64,
    eps_vol: f64,
) -> Result<f64> {
    let vs = atm_asset.eval(t);
    let vx = atm_fx.eval(t);
    if vs < eps_vol || vx < eps_vol {
        return Err(EngineError::DegenerateVol(format!(
            "ATM vols at t={t} below eps_vol={eps_vol}: asset {vs}, fx {vx}"
        )));
    }
    Ok(-dlog_q / (vs * vx))
}

/// Time-dependent correlation from the cross-sectional mean:
/// rho_LV(t) = -d/dt q / E[s eta(t,s) psi(t,x)], raw.
pub fn rho_lv(
    mark: &QuantoMark,
    eta: &LocalVolSurface,
    psi: &LocalVolSurface,
    state: &SimState,
    t: f64,
    eps_vol: f64,
) -> Result<f64> {
    let weights: Vec<f64> = state
        .s
        .par_iter()
        .zip(&state.x)
        .map(|(&s, &x)| s * eta.eval(t, s) * psi.eval(t, x))
        .collect();
    let dq = mark.q(t) * mark.dlog_q(t);
    scalar_rho_from_weights(-dq, &weights, mark.q(t), eps_vol, t).map(|(rho, _)| rho)
}

/// Shared scalar-strategy core: returns the raw rho and its propagated
/// statistical uncertainty.
pub(crate) fn scalar_rho_from_weights(
    neg_dq: f64,
    weights: &[f64],
    q: f64,
    eps_vol: f64,
    t: f64,
) -> Result<(f64, f64)> {
    let (mean, sd) = det_mean_sd(weights, |w| *w);
    if mean < eps_vol * q {
        return Err(EngineError::DegenerateDenominator(format!(
            "cross-sectional mean of s*vol_s*vol_x at t={t} is {mean}, below eps_vol*q = {}",
            eps_vol * q
        )));
    }
    let rho = neg_dq / mean;
    let se = rho.abs() * sd / (mean * (weights.len() as f64).sqrt());
    Ok((rho, se))
}

/// Pathwise local correlation: rho_LC = -d/dt log q / (eta psi); vols are
/// floored at eps_vol (flagged), never a hard error.
pub fn rho_lc(
    mark: &QuantoMark,
    eta: &LocalVolSurface,
    psi: &LocalVolSurface,
    t: f64,
    s: f64,
    x: f64,
    eps_vol: f64,
) -> (f64, bool) {
    rho_lc_with_rate(mark.dlog_q(t), eta.eval(t, s), psi.eval(t, x), eps_vol)
}

#[inline]
pub(crate) fn rho_lc_with_rate(dlog_q: f64, vol_s: f64, vol_x: f64, eps_vol: f64) -> (f64, bool) {
    let floored = vol_s < eps_vol || vol_x < eps_vol;
    let vs = vol_s.max(eps_vol);
    let vx = vol_x.max(eps_vol);
    (-dlog_q / (vs * vx), floored)
}

/// Pathwise composite correlation:
/// rho_LC2 = (phi^2(t, xs) - eta^2 - psi^2) / (2 eta psi), raw.
pub fn rho_lc2(
    phi: &LocalVolSurface,
    eta: &LocalVolSurface,
    psi: &LocalVolSurface,
    t: f64,
    s: f64,
    x: f64,
    eps_vol: f64,
) -> (f64, bool) {
    let vol_s = eta.eval(t, s);
    let vol_x = psi.eval(t, x);
    let phi2 = {
        let p = phi.eval(t, x * s);
        p * p
    };
    rho_lc2_with_vols(phi2, vol_s, vol_x, eps_vol)
}

#[inline]
pub(crate) fn rho_lc2_with_vols(
    phi2: f64,
    vol_s: f64,
    vol_x: f64,
    eps_vol: f64,
) -> (f64, bool) {
    let floored = vol_s < eps_vol || vol_x < eps_vol;
    let vs = vol_s.max(eps_vol);
    let vx = vol_x.max(eps_vol);
    ((phi2 - vs * vs - vx * vx) / (2.0 * vs * vx), floored)
}

/// Conditional moments in z = x*s for the composite strategies: kernel
/// regressions of `eta^2 + psi^2` and of the effective vol product on
/// log z over the current cross-section.
///
/// At the initial point mass (zero dispersion) the conditional expectation
/// collapses to the plain mean.
pub(crate) struct CompositeConditional {
    reg: Option<NwRegression>,
    mean_sumsq: f64,
    mean_prod: f64,
}

impl CompositeConditional {
    pub fn fit(log_z: &[f64], sumsq: &[f64], prod: &[f64], bandwidth_c: f64) -> Result<Self> {
        let n = log_z.len();
        let (mean_u, sd_u) = det_mean_sd(log_z, |u| *u);
        let mean_sumsq = det_sum(sumsq, |v| *v) / n as f64;
        let mean_prod = det_sum(prod, |v| *v) / n as f64;
        if sd_u < 1e-12 {
            return Ok(Self {
                reg: None,
                mean_sumsq,
                mean_prod,
            });
        }
        let h = bandwidth_c * sd_u * (n as f64).powf(-0.2);
        let lo = mean_u - NW_RANGE_STDEVS * sd_u;
        let hi = mean_u + NW_RANGE_STDEVS * sd_u;
        let reg = NwRegression::fit(log_z, &[sumsq, prod], h, lo, hi, NW_BINS)?;
        let eff = reg.min_effective_weight();
        if eff < NW_MIN_EFFECTIVE {
            return Err(EngineError::BandwidthTooSmall {
                effective: eff,
                min: NW_MIN_EFFECTIVE as usize as f64,
                at: format!("conditional regression over {n} paths, bandwidth {h:.5}"),
            });
        }
        Ok(Self {
            reg: Some(reg),
            mean_sumsq,
            mean_prod,
        })
    }

    /// (E[eta^2+psi^2 | z], E[vol_s vol_x | z]) at log z = u.
    #[inline]
    pub fn eval(&self, u: f64) -> (f64, f64) {
        match &self.reg {
            Some(reg) => {
                let mut out = [0.0; 2];
                reg.eval_into(u, &mut out);
                (out[0], out[1])
            }
            None => (self.mean_sumsq, self.mean_prod),
        }
    }
}

/// Composite correlation as a function of z:
/// rho_LV2(t, z) = (phi^2(t,z) - E[eta^2+psi^2 | z]) / (2 E[eta psi | z]).
///
/// Returns the raw per-path values plus the count of floored denominators.
pub fn rho_lv2(
    phi: &LocalVolSurface,
    eta: &LocalVolSurface,
    psi: &LocalVolSurface,
    state: &SimState,
    t: f64,
    bandwidth_c: f64,
    eps_vol: f64,
) -> Result<(Vec<f64>, u64)> {
    let n = state.n_paths();
    let mut log_z = vec![0.0; n];
    let mut sumsq = vec![0.0; n];
    let mut prod = vec![0.0; n];
    log_z
        .par_chunks_mut(CHUNK)
        .zip(sumsq.par_chunks_mut(CHUNK))
        .zip(prod.par_chunks_mut(CHUNK))
        .enumerate()
        .for_each(|(ci, ((lz, sq), pr))| {
            let base = ci * CHUNK;
            for i in 0..lz.len() {
                let s = state.s[base + i];
                let x = state.x[base + i];
                let vs = eta.eval(t, s);
                let vx = psi.eval(t, x);
                lz[i] = (x * s).ln();
                sq[i] = vs * vs + vx * vx;
                pr[i] = vs * vx;
            }
        });
    let cond = CompositeConditional::fit(&log_z, &sumsq, &prod, bandwidth_c)?;
    rho_lv2_from_conditional(phi, &log_z, &cond, t, eps_vol)
}

pub(crate) fn rho_lv2_from_conditional(
    phi: &LocalVolSurface,
    log_z: &[f64],
    cond: &CompositeConditional,
    t: f64,
    eps_vol: f64,
) -> Result<(Vec<f64>, u64)> {
    let floor = eps_vol * eps_vol;
    let values: Vec<f64> = log_z
        .par_iter()
        .map(|&u| {
            let (csq, cprod) = cond.eval(u);
            let p = phi.eval(t, u.exp());
            (p * p - csq) / (2.0 * cprod.max(floor))
        })
        .collect();
    let floored = log_z
        .par_chunks(CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .filter(|&&u| cond.eval(u).1 < floor)
                .count() as u64
        })
        .sum();
    Ok((values, floored))
}
