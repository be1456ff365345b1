//! Pricing quanto forwards, broker packages and quanto/composite vanillas
//! from simulation output, plus the implied-vol spread reports.

use crate::error::{EngineError, Result};
use crate::marketdata::{black_vega, implied_vol, MarketSnapshot, OptionKind};
use crate::mcengine::rho::det_mean_sd;
use crate::mcengine::SimOutput;
use crate::quantomark::QuantoMark;

/// Monte Carlo estimate with its sampling uncertainty.
#[derive(Debug, Clone, Copy)]
pub struct PriceResult {
    pub estimate: f64,
    pub std_error: f64,
    /// 95% confidence interval, estimate +- 1.96 std errors.
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_paths: usize,
    /// Clip diagnostics of the simulation that produced the estimate.
    pub clip_fraction: f64,
}

impl PriceResult {
    fn from_mean_se(mean: f64, se: f64, n_paths: usize, clip_fraction: f64) -> Self {
        Self {
            estimate: mean,
            std_error: se,
            ci_low: mean - 1.96 * se,
            ci_high: mean + 1.96 * se,
            n_paths,
            clip_fraction,
        }
    }

    pub fn ci_halfwidth(&self) -> f64 {
        1.96 * self.std_error
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.ci_low && value <= self.ci_high
    }
}

fn sample_result(values: &[f64], clip_fraction: f64) -> PriceResult {
    let (mean, sd) = det_mean_sd(values, |v| *v);
    let se = sd / (values.len() as f64).sqrt();
    PriceResult::from_mean_se(mean, se, values.len(), clip_fraction)
}

/// Quanto forward: E[S_T] in domestic currency units per unit notional,
/// i.e. E[s_T] * F0(T).
pub fn price_quanto_forward(
    output: &SimOutput,
    expiry: f64,
    snapshot: &MarketSnapshot,
) -> Result<PriceResult> {
    let obs = output.observation_at(expiry)?;
    let f = snapshot.asset_forward.forward(expiry);
    let scaled: Vec<f64> = obs.s.iter().map(|&s| s * f).collect();
    Ok(sample_result(&scaled, output.clip_fraction()))
}

/// Broker package Cq - Pq - C + P at spot strike, from a domestic-measure
/// run and its foreign-measure companion (same seed and path count; the
/// shared shocks cancel most of the variance).
pub fn price_gamma_package(
    domestic: &SimOutput,
    foreign: &SimOutput,
    expiry: f64,
    snapshot: &MarketSnapshot,
) -> Result<PriceResult> {
    if domestic.n_paths != foreign.n_paths || domestic.seed != foreign.seed {
        return Err(EngineError::Configuration(
            "package legs need companion runs with identical seed and path count".into(),
        ));
    }
    let obs_d = domestic.observation_at(expiry)?;
    let obs_f = foreign.observation_at(expiry)?;
    let ratio = snapshot.fwd_ratio(expiry);
    let df_dom = snapshot.df_dom(expiry);
    let df_for = snapshot.df_for(expiry);
    // (a-1)^+ - (1-a)^+ = a - 1 pathwise.
    let diffs: Vec<f64> = obs_d
        .s
        .iter()
        .zip(&obs_f.s)
        .map(|(&sd, &sf)| df_dom * (sd * ratio - 1.0) - df_for * (sf * ratio - 1.0))
        .collect();
    Ok(sample_result(&diffs, domestic.clip_fraction()))
}

/// Quanto vanilla: payoff (s_T - K)^+ * F0(T) (or the put mirror) in
/// domestic currency, discounted on the domestic curve. `strike` is in
/// forward moneyness.
pub fn price_quanto_vanilla(
    output: &SimOutput,
    expiry: f64,
    strike: f64,
    kind: OptionKind,
    snapshot: &MarketSnapshot,
) -> Result<PriceResult> {
    if !(strike > 0.0) {
        return Err(EngineError::invalid(format!("strike must be positive, got {strike}")));
    }
    let obs = output.observation_at(expiry)?;
    let scale = snapshot.df_dom(expiry) * snapshot.asset_forward.forward(expiry);
    let payoffs: Vec<f64> = obs
        .s
        .iter()
        .map(|&s| {
            scale
                * match kind {
                    OptionKind::Call => (s - strike).max(0.0),
                    OptionKind::Put => (strike - s).max(0.0),
                }
        })
        .collect();
    Ok(sample_result(&payoffs, output.clip_fraction()))
}

/// Composite vanilla: payoff on Z_T = z_T X(T) F(T) with strike in
/// moneyness of the composite forward, discounted on the domestic curve.
pub fn price_composite_vanilla(
    output: &SimOutput,
    expiry: f64,
    strike: f64,
    kind: OptionKind,
    snapshot: &MarketSnapshot,
) -> Result<PriceResult> {
    if !(strike > 0.0) {
        return Err(EngineError::invalid(format!("strike must be positive, got {strike}")));
    }
    let obs = output.observation_at(expiry)?;
    let scale = snapshot.df_dom(expiry)
        * snapshot.fx_forward.forward(expiry)
        * snapshot.asset_forward.forward(expiry);
    let payoffs: Vec<f64> = obs
        .s
        .iter()
        .zip(&obs.x)
        .map(|(&s, &x)| {
            let z = x * s;
            scale
                * match kind {
                    OptionKind::Call => (z - strike).max(0.0),
                    OptionKind::Put => (strike - z).max(0.0),
                }
        })
        .collect();
    Ok(sample_result(&payoffs, output.clip_fraction()))
}

/// Which forward backs the quanto implied-vol inversion.
#[derive(Debug, Clone, Copy, Default)]
pub enum QuantoForward {
    /// The simulation's own E[s_T] estimate.
    #[default]
    ModelEstimate,
    /// The marked quanto correction q(T).
    Marked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportKind {
    Quanto,
    Composite,
}

impl ReportKind {
    pub fn name(&self) -> &'static str {
        match self {
            ReportKind::Quanto => "quanto",
            ReportKind::Composite => "composite",
        }
    }

    /// Display unit of the spread column: basis points for quanto,
    /// percentage points for composite.
    fn spread_scale(&self) -> f64 {
        match self {
            ReportKind::Quanto => 1e4,
            ReportKind::Composite => 1e2,
        }
    }
}

/// One (maturity, moneyness) node of a spread report.
#[derive(Debug, Clone, Copy)]
pub struct SpreadRow {
    pub moneyness: f64,
    /// Model implied vol; `None` where the inversion failed (flagged node).
    pub model_vol: Option<f64>,
    pub model_vol_se: Option<f64>,
    pub market_vol: f64,
    /// Model minus market vol in display units (bp or percent).
    pub spread: Option<f64>,
}

/// Implied-vol spread versus the vanilla market smile for one maturity.
#[derive(Debug, Clone)]
pub struct SpreadReport {
    pub kind: ReportKind,
    pub maturity_label: String,
    pub maturity: f64,
    pub rows: Vec<SpreadRow>,
}

impl SpreadReport {
    pub const CSV_HEADER: &'static str =
        "kind,maturity_label,moneyness,model_vol,market_vol,spread";

    /// CSV rows (no header) at ten significant digits; flagged nodes leave
    /// the model columns empty.
    pub fn csv_rows(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{},{}",
                    self.kind.name(),
                    self.maturity_label,
                    fmt_sig10(r.moneyness),
                    r.model_vol.map(fmt_sig10).unwrap_or_default(),
                    fmt_sig10(r.market_vol),
                    r.spread.map(fmt_sig10).unwrap_or_default(),
                )
            })
            .collect()
    }
}

/// Ten-significant-digit decimal formatting with deterministic output.
pub fn fmt_sig10(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exponent = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(9 - exponent);
    let rounded = (x * scale).round() / scale;
    format!("{rounded}")
}

/// Spread reports for the requested maturities (which must be asset-vol
/// quote pillars). Implied vols invert OTM payoffs against the quanto
/// forward (model estimate or marked q) or the correlation-free composite
/// forward; failed inversions flag the node and the report continues.
pub fn implied_vol_spread_report(
    output: &SimOutput,
    snapshot: &MarketSnapshot,
    maturities: &[f64],
    kind: ReportKind,
    quanto_forward: QuantoForward,
    mark: Option<&QuantoMark>,
) -> Result<Vec<SpreadReport>> {
    let mut reports = Vec::with_capacity(maturities.len());
    for &t in maturities {
        let pillar = snapshot.asset_vols.maturity_index(t).ok_or_else(|| {
            EngineError::Configuration(format!(
                "maturity {t} is not an asset vol quote pillar (pillars: {:?})",
                snapshot.asset_vols.maturities()
            ))
        })?;
        let obs = output.observation_at(t)?;
        let n = obs.s.len();

        let forward = match kind {
            ReportKind::Quanto => match quanto_forward {
                QuantoForward::ModelEstimate => det_mean_sd(&obs.s, |s| *s).0,
                QuantoForward::Marked => {
                    let mark = mark.ok_or_else(|| {
                        EngineError::Configuration(
                            "marked quanto forward requested without a mark".into(),
                        )
                    })?;
                    mark.q(t)
                }
            },
            // The composite forward X(T)F(T) does not depend on the
            // correlation; normalized z has unit forward.
            ReportKind::Composite => 1.0,
        };

        let mut rows = Vec::new();
        for (&k, &market_vol) in snapshot
            .asset_vols
            .moneyness(pillar)
            .iter()
            .zip(snapshot.asset_vols.vols(pillar))
        {
            // OTM side for better-conditioned inversion; parity holds
            // pathwise so either side carries the same vol.
            let opt = if k < forward {
                OptionKind::Put
            } else {
                OptionKind::Call
            };
            let payoffs: Vec<f64> = match kind {
                ReportKind::Quanto => obs
                    .s
                    .iter()
                    .map(|&s| match opt {
                        OptionKind::Call => (s - k).max(0.0),
                        OptionKind::Put => (k - s).max(0.0),
                    })
                    .collect(),
                ReportKind::Composite => obs
                    .s
                    .iter()
                    .zip(&obs.x)
                    .map(|(&s, &x)| {
                        let z = x * s;
                        match opt {
                            OptionKind::Call => (z - k).max(0.0),
                            OptionKind::Put => (k - z).max(0.0),
                        }
                    })
                    .collect(),
            };
            let (price, sd) = det_mean_sd(&payoffs, |p| *p);
            let price_se = sd / (n as f64).sqrt();
            let row = match implied_vol(price, forward, k, t, 1.0, opt) {
                Ok(vol) => {
                    let vega = black_vega(forward, k, vol, t, 1.0).unwrap_or(f64::NAN);
                    let vol_se = if vega > 1e-12 { price_se / vega } else { f64::NAN };
                    SpreadRow {
                        moneyness: k,
                        model_vol: Some(vol),
                        model_vol_se: Some(vol_se),
                        market_vol,
                        spread: Some((vol - market_vol) * kind.spread_scale()),
                    }
                }
                Err(_) => SpreadRow {
                    moneyness: k,
                    model_vol: None,
                    model_vol_se: None,
                    market_vol,
                    spread: None,
                },
            };
            rows.push(row);
        }
        reports.push(SpreadReport {
            kind,
            maturity_label: maturity_label(t),
            maturity: t,
            rows,
        });
    }
    Ok(reports)
}

/// Compact deterministic label for a maturity in year fractions.
pub fn maturity_label(t: f64) -> String {
    format!("{}y", fmt_sig10(t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localvol::{AtmVolCurve, LocalVolSurface};
    use crate::marketdata::{
        black_price, DiscountCurve, ForwardCurve, QuantoQuote, QuantoQuoteSet, QuoteConvention,
        VolQuoteSurface,
    };
    use crate::mcengine::{simulate, simulate_foreign_leg, SimConfig, SimInputs, Strategy};
    use crate::quantomark::{broker_from_gamma, QuantoCorrelationCurve, QuantoMark};
    use approx::assert_abs_diff_eq;

    const GAMMA: f64 = -0.30;
    const VOL_S: f64 = 0.2;
    const VOL_X: f64 = 0.1;

    fn flat_snapshot() -> MarketSnapshot {
        let maturities = [0.25, 0.5, 1.0, 2.0, 3.0];
        let moneyness = [0.8, 0.9, 1.0, 1.1, 1.2];
        MarketSnapshot {
            observation_date: "2024-12-16".into(),
            domestic: DiscountCurve::flat("USD", 0.02, 5.0),
            foreign: DiscountCurve::flat("EUR", 0.03, 5.0),
            asset_forward: ForwardCurve::flat(100.0, 5.0),
            fx_forward: ForwardCurve::new(vec![(0.0, 1.1), (5.0, 1.1 * (-0.05f64).exp())])
                .unwrap(),
            asset_vols: VolQuoteSurface::flat("2024-12-16", &maturities, &moneyness, VOL_S)
                .unwrap(),
            fx_vols: VolQuoteSurface::flat("2024-12-16", &maturities, &moneyness, VOL_X).unwrap(),
            quanto_quotes: QuantoQuoteSet::new(
                QuoteConvention::Gamma,
                vec![QuantoQuote {
                    label: "y1".into(),
                    maturity: 1.0,
                    bid: GAMMA - 0.01,
                    mid: GAMMA,
                    ask: GAMMA + 0.01,
                }],
            )
            .unwrap(),
            composite_vols: None,
        }
    }

    fn flat_mark() -> QuantoMark {
        QuantoMark::build(
            QuantoCorrelationCurve::flat(GAMMA).unwrap(),
            &AtmVolCurve::flat(VOL_S),
            &AtmVolCurve::flat(VOL_X),
            3.0,
            1.0 / 365.0,
        )
        .unwrap()
    }

    fn lc_run(n_paths: usize, seed: u64, times: Vec<f64>) -> (SimOutput, SimOutput) {
        let mark = flat_mark();
        let eta = LocalVolSurface::flat(VOL_S);
        let psi = LocalVolSurface::flat(VOL_X);
        let inputs = SimInputs {
            mark: Some(&mark),
            eta: Some(&eta),
            psi: Some(&psi),
            ..Default::default()
        };
        let config = SimConfig::new(Strategy::Lc, n_paths, seed, times);
        let dom = simulate(&config, &inputs).unwrap();
        let for_ = simulate_foreign_leg(&config, &inputs).unwrap();
        (dom, for_)
    }

    #[test]
    fn quanto_forward_matches_closed_form() {
        let snapshot = flat_snapshot();
        let (dom, _) = lc_run(20_000, 31, vec![1.0]);
        let result = price_quanto_forward(&dom, 1.0, &snapshot).unwrap();
        let expected = 100.0 * (0.006f64).exp();
        assert!(
            (result.estimate - expected).abs() < 3.0 * result.std_error,
            "{} +- {} vs {expected}",
            result.estimate,
            result.std_error
        );
        assert_abs_diff_eq!(
            result.ci_high - result.estimate,
            1.96 * result.std_error,
            epsilon = 1e-12
        );
        // Missing observation time is a configuration error.
        assert!(matches!(
            price_quanto_forward(&dom, 0.75, &snapshot),
            Err(EngineError::Configuration(_))
        ));
    }

    #[test]
    fn gamma_package_matches_broker_conversion() {
        let snapshot = flat_snapshot();
        let (dom, for_) = lc_run(20_000, 17, vec![1.0]);
        let result = price_gamma_package(&dom, &for_, 1.0, &snapshot).unwrap();
        let marked = broker_from_gamma(
            GAMMA,
            1.0,
            snapshot.fwd_ratio(1.0),
            snapshot.df_dom(1.0),
            snapshot.df_for(1.0),
            VOL_S,
            VOL_X,
        )
        .unwrap();
        assert!(
            (result.estimate - marked).abs() < 3.0 * result.std_error,
            "package {} +- {} vs marked {marked}",
            result.estimate,
            result.std_error
        );
        // Companion-run differencing cancels most sampling noise: either
        // leg alone carries ~1.4e-3 of standard error at this path count.
        assert!(result.std_error < 5e-5, "se {}", result.std_error);
    }

    #[test]
    fn zero_gamma_equal_rates_package_is_zero() {
        let mut snapshot = flat_snapshot();
        snapshot.foreign = snapshot.domestic.clone();
        let mark = QuantoMark::build(
            QuantoCorrelationCurve::flat(0.0).unwrap(),
            &AtmVolCurve::flat(VOL_S),
            &AtmVolCurve::flat(VOL_X),
            2.0,
            1.0 / 365.0,
        )
        .unwrap();
        let eta = LocalVolSurface::flat(VOL_S);
        let psi = LocalVolSurface::flat(VOL_X);
        let inputs = SimInputs {
            mark: Some(&mark),
            eta: Some(&eta),
            psi: Some(&psi),
            ..Default::default()
        };
        let config = SimConfig::new(Strategy::Lc, 10_000, 3, vec![1.0]);
        let dom = simulate(&config, &inputs).unwrap();
        let for_ = simulate_foreign_leg(&config, &inputs).unwrap();
        let result = price_gamma_package(&dom, &for_, 1.0, &snapshot).unwrap();
        assert!(
            result.estimate.abs() < 3.0 * result.std_error.max(1e-12),
            "{} +- {}",
            result.estimate,
            result.std_error
        );
    }

    #[test]
    fn quanto_vanilla_matches_quanto_black() {
        let snapshot = flat_snapshot();
        let (dom, _) = lc_run(50_000, 41, vec![1.0]);
        let q = (0.006f64).exp();
        let df = snapshot.df_dom(1.0);
        for &k in &[0.85, 1.0, 1.15] {
            let res =
                price_quanto_vanilla(&dom, 1.0, k, OptionKind::Call, &snapshot).unwrap();
            // Quanto Black: forward q * F, strike k * F, asset vol.
            let expected =
                black_price(q * 100.0, k * 100.0, VOL_S, 1.0, df, OptionKind::Call).unwrap();
            assert!(
                (res.estimate - expected).abs() < 3.0 * res.std_error,
                "k={k}: {} +- {} vs {expected}",
                res.estimate,
                res.std_error
            );
        }
    }

    #[test]
    fn quanto_vanilla_parity_is_pathwise_exact() {
        let snapshot = flat_snapshot();
        let (dom, _) = lc_run(10_000, 13, vec![1.0]);
        for &k in &[0.9, 1.0, 1.2] {
            let call = price_quanto_vanilla(&dom, 1.0, k, OptionKind::Call, &snapshot).unwrap();
            let put = price_quanto_vanilla(&dom, 1.0, k, OptionKind::Put, &snapshot).unwrap();
            let fwd = price_quanto_forward(&dom, 1.0, &snapshot).unwrap();
            let df = snapshot.df_dom(1.0);
            // call - put = df (E[s] - k) F with the same paths on both legs.
            assert_abs_diff_eq!(
                call.estimate - put.estimate,
                df * (fwd.estimate - k * 100.0),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn tiny_strike_call_degenerates_to_discounted_forward() {
        let snapshot = flat_snapshot();
        let (dom, _) = lc_run(10_000, 19, vec![1.0]);
        let res = price_quanto_vanilla(&dom, 1.0, 1e-9, OptionKind::Call, &snapshot).unwrap();
        let fwd = price_quanto_forward(&dom, 1.0, &snapshot).unwrap();
        let df = snapshot.df_dom(1.0);
        assert_abs_diff_eq!(res.estimate, df * fwd.estimate, epsilon = 1e-6);
    }

    #[test]
    fn composite_vanilla_matches_composite_black() {
        let snapshot = flat_snapshot();
        let (dom, _) = lc_run(50_000, 23, vec![1.0]);
        // Composite vol under constant rho: sqrt(vs^2 + vx^2 + 2 rho vs vx).
        let comp_vol = (VOL_S * VOL_S + VOL_X * VOL_X + 2.0 * GAMMA * VOL_S * VOL_X).sqrt();
        let zf = snapshot.fx_forward.forward(1.0) * 100.0;
        let df = snapshot.df_dom(1.0);
        for &k in &[0.9, 1.0, 1.1] {
            let res =
                price_composite_vanilla(&dom, 1.0, k, OptionKind::Call, &snapshot).unwrap();
            let expected = black_price(zf, k * zf, comp_vol, 1.0, df, OptionKind::Call).unwrap();
            assert!(
                (res.estimate - expected).abs() < 3.0 * res.std_error,
                "k={k}: {} +- {} vs {expected}",
                res.estimate,
                res.std_error
            );
        }
    }

    #[test]
    fn flat_smile_quanto_spread_is_null() {
        let snapshot = flat_snapshot();
        let (dom, _) = lc_run(50_000, 47, vec![1.0]);
        let reports = implied_vol_spread_report(
            &dom,
            &snapshot,
            &[1.0],
            ReportKind::Quanto,
            QuantoForward::ModelEstimate,
            None,
        )
        .unwrap();
        assert_eq!(reports.len(), 1);
        for row in &reports[0].rows {
            let spread_bp = row.spread.expect("no flagged nodes on the flat fixture");
            let se_bp = row.model_vol_se.unwrap() * 1e4;
            assert!(
                spread_bp.abs() < (3.0 * se_bp).max(2.0),
                "k={}: spread {spread_bp} bp, se {se_bp} bp",
                row.moneyness
            );
        }
    }

    #[test]
    fn composite_spread_matches_closed_form_shift() {
        let snapshot = flat_snapshot();
        let (dom, _) = lc_run(50_000, 29, vec![1.0]);
        let reports = implied_vol_spread_report(
            &dom,
            &snapshot,
            &[1.0],
            ReportKind::Composite,
            QuantoForward::ModelEstimate,
            None,
        )
        .unwrap();
        let comp_vol = (VOL_S * VOL_S + VOL_X * VOL_X + 2.0 * GAMMA * VOL_S * VOL_X).sqrt();
        let expected_pct = (comp_vol - VOL_S) * 1e2;
        for row in &reports[0].rows {
            let spread = row.spread.unwrap();
            let se_pct = row.model_vol_se.unwrap() * 1e2;
            assert!(
                (spread - expected_pct).abs() < (3.0 * se_pct).max(0.1),
                "k={}: spread {spread}% vs {expected_pct}%",
                row.moneyness
            );
        }
    }

    #[test]
    fn non_pillar_maturity_is_a_configuration_error() {
        let snapshot = flat_snapshot();
        let (dom, _) = lc_run(10_000, 3, vec![0.75]);
        let err = implied_vol_spread_report(
            &dom,
            &snapshot,
            &[0.75],
            ReportKind::Quanto,
            QuantoForward::ModelEstimate,
            None,
        )
        .unwrap_err();
        assert!(matches!(err, EngineError::Configuration(_)));
    }

    #[test]
    fn csv_rows_are_deterministic_and_labeled() {
        let report = SpreadReport {
            kind: ReportKind::Quanto,
            maturity_label: maturity_label(0.25),
            maturity: 0.25,
            rows: vec![
                SpreadRow {
                    moneyness: 0.9,
                    model_vol: Some(0.2012345678912345),
                    model_vol_se: Some(1e-4),
                    market_vol: 0.2,
                    spread: Some(12.345678912345),
                },
                SpreadRow {
                    moneyness: 1.1,
                    model_vol: None,
                    model_vol_se: None,
                    market_vol: 0.2,
                    spread: None,
                },
            ],
        };
        let rows = report.csv_rows();
        assert_eq!(rows[0], "quanto,0.25y,0.9,0.2012345679,0.2,12.34567891");
        assert_eq!(rows[1], "quanto,0.25y,1.1,,0.2,");
    }

    #[test]
    fn fmt_sig10_rounds_to_ten_significant_digits() {
        assert_eq!(fmt_sig10(0.0), "0");
        assert_eq!(fmt_sig10(1.0), "1");
        assert_eq!(fmt_sig10(123.456789012345), "123.456789");
        assert_eq!(fmt_sig10(-0.00012345678949), "-0.0001234567895");
        assert_eq!(fmt_sig10(1.0060180360540548), "1.006018036");
    }
}
